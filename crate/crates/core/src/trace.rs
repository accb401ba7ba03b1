//! Per-iteration records of a fixed-point run and their summaries.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{psnr, Image};

/// Default bound on `‖x_k‖∞` beyond which a run is declared diverged.
pub const DEFAULT_DIVERGENCE_GUARD: f64 = 1e6;

/// Row `k` describes iterate `x_k`. The step quantities (`theta`, `eta`,
/// `beta`, `residual`) are those of the update that produced `x_k` from
/// `x_{k-1}`, so row 0 leaves them empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceEntry {
    pub k: usize,
    pub psnr: Option<f64>,
    pub theta: Option<f64>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    /// `‖x_k − x_{k-1}‖`.
    pub residual: Option<f64>,
    /// `‖x_k − p‖` for viscosity runs.
    pub dist_to_p: Option<f64>,
    pub near_p: bool,
    /// The adaptive rule hit `η − β ≤ 1e-12` and fell back to the cap.
    pub degenerate: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub entries: Vec<TraceEntry>,
    pub diverged: bool,
    pub bridge_failed: bool,
    /// Message of the error that aborted the run, if any.
    pub failure: Option<String>,
    pub wall_seconds: f64,
    pub final_iterate: Image,
    /// Iterate with the highest PSNR and its index, when ground truth was given.
    pub peak_iterate: Option<(usize, Image)>,
}

impl IterationTrace {
    pub fn completed_iterations(&self) -> usize {
        self.entries.len().saturating_sub(1)
    }

    pub fn psnrs(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e.psnr).collect()
    }

    /// CSV with header `k,psnr,theta,eta,beta,residual,near_p,diverged`.
    /// Missing values are empty; flags are `0`/`1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(["k", "psnr", "theta", "eta", "beta", "residual", "near_p", "diverged"])
            .map_err(csv_err)?;
        let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.entries {
            w.write_record([
                e.k.to_string(),
                f(e.psnr),
                f(e.theta),
                f(e.eta),
                f(e.beta),
                f(e.residual),
                (e.near_p as u8).to_string(),
                (e.diverged as u8).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub peak_psnr: f64,
    pub peak_iter: usize,
    pub asymptotic_psnr: f64,
    pub asymptotic_iter: usize,
    /// The run ended before `asymptotic_at`; the asymptotic value is the last one recorded.
    pub asymptotic_truncated: bool,
    pub diverged: bool,
    pub bridge_failed: bool,
    pub wall_seconds: f64,
}

/// Peak PSNR over all recorded iterates and the PSNR at `asymptotic_at`
/// (or at the last finite entry when the trace is shorter).
pub fn summarize(trace: &IterationTrace, asymptotic_at: usize) -> Result<Summary> {
    let finite: Vec<(usize, f64)> = trace
        .entries
        .iter()
        .filter_map(|e| e.psnr.filter(|v| v.is_finite()).map(|v| (e.k, v)))
        .collect();
    let &(first_k, first_v) = finite.first().ok_or(Error::NoPsnr)?;
    let (peak_iter, peak_psnr) = finite.iter().fold(
        (first_k, first_v),
        |best, &(k, v)| if v > best.1 { (k, v) } else { best },
    );
    let (asymptotic_iter, asymptotic_psnr, asymptotic_truncated) =
        match finite.iter().find(|(k, _)| *k == asymptotic_at) {
            Some(&(k, v)) => (k, v, false),
            None => {
                let &(k, v) = finite.last().expect("non-empty");
                (k, v, true)
            }
        };
    Ok(Summary {
        peak_psnr,
        peak_iter,
        asymptotic_psnr,
        asymptotic_iter,
        asymptotic_truncated,
        diverged: trace.diverged,
        bridge_failed: trace.bridge_failed,
        wall_seconds: trace.wall_seconds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSettings {
    pub iters: usize,
    pub divergence_guard: f64,
}

impl LoopSettings {
    pub fn new(iters: usize) -> Self {
        Self {
            iters,
            divergence_guard: DEFAULT_DIVERGENCE_GUARD,
        }
    }
}

/// What one update reports back to the driver.
pub(crate) struct Step {
    pub next: Image,
    pub theta: Option<f64>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub near_p: bool,
    pub degenerate: bool,
}

impl Step {
    pub(crate) fn plain(next: Image) -> Self {
        Step {
            next,
            theta: None,
            eta: None,
            beta: None,
            near_p: false,
            degenerate: false,
        }
    }
}

/// Shared iteration driver. Stops early on divergence (non-finite samples or
/// `‖x‖∞` above the guard) and on bridge failures; both end up as flags in
/// the trace. Any other error is returned.
pub(crate) fn drive(
    x0: &Image,
    settings: LoopSettings,
    ground_truth: Option<&Image>,
    p: Option<&Image>,
    mut step: impl FnMut(usize, &Image) -> Result<Step>,
) -> Result<IterationTrace> {
    if let Some(gt) = ground_truth {
        gt.ensure_same_dims(x0)?;
    }
    let start = Instant::now();
    let score = |x: &Image| -> Result<Option<f64>> {
        match ground_truth {
            Some(gt) if x.is_finite() => Ok(Some(psnr(gt, x)?)),
            _ => Ok(None),
        }
    };
    let dist = |x: &Image| -> Result<Option<f64>> { p.map(|p| x.distance(p)).transpose() };

    let psnr0 = score(x0)?;
    let mut peak = psnr0.map(|v| (v, 0usize, x0.clone()));
    let mut trace = IterationTrace {
        entries: vec![TraceEntry {
            k: 0,
            psnr: psnr0,
            dist_to_p: dist(x0)?,
            ..TraceEntry::default()
        }],
        diverged: false,
        bridge_failed: false,
        failure: None,
        wall_seconds: 0.0,
        final_iterate: x0.clone(),
        peak_iterate: None,
    };

    let mut x = x0.clone();
    for k in 0..settings.iters {
        let s = match step(k, &x) {
            Ok(s) => s,
            Err(Error::Bridge(e)) => {
                log::warn!("bridge failure at iteration {k}: {e}");
                trace.bridge_failed = true;
                trace.failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        s.next.ensure_same_dims(&x)?;
        let diverged = !s.next.is_finite() || s.next.norm_inf() > settings.divergence_guard;
        let residual = s.next.distance(&x)?;
        let psnr = score(&s.next)?;
        trace.entries.push(TraceEntry {
            k: k + 1,
            psnr,
            theta: s.theta,
            eta: s.eta,
            beta: s.beta,
            residual: Some(residual).filter(|r| r.is_finite()),
            dist_to_p: dist(&s.next)?.filter(|d| d.is_finite()),
            near_p: s.near_p,
            degenerate: s.degenerate,
            diverged,
        });
        if let Some(v) = psnr {
            if peak.as_ref().is_none_or(|(best, _, _)| v > *best) {
                peak = Some((v, k + 1, s.next.clone()));
            }
        }
        x = s.next;
        if diverged {
            trace.diverged = true;
            break;
        }
    }
    trace.final_iterate = x;
    trace.peak_iterate = peak.map(|(_, k, img)| (k, img));
    trace.wall_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}
