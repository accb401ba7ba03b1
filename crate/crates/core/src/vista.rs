//! Viscosity-stabilized iteration.
//!
//! `x_{k+1} = (1 − θ_k) T(x_k) + θ_k S(x_k)` where `S` is a contraction with
//! fixed point `p`. The adaptive θ picks the smallest weight that keeps
//! `‖x_{k+1} − p‖ ≤ ‖x_k − p‖` given the measured ratios
//! `η = ‖Tx − p‖/‖x − p‖` and `β = ‖Sx − p‖/‖x − p‖`, capped at `Θ`.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::trace::{drive, IterationTrace, LoopSettings, Step};

/// Below this gap between η and β the adaptive formula is unreliable.
pub const DEGENERATE_GAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Adaptive,
    Constant(f64),
    /// `θ_k = min(1/k, Θ)` with the first update counted as `k = 1`.
    Reciprocal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityConfig {
    pub theta_cap: f64,
    pub schedule: Schedule,
    /// Relative radius around `p` inside which θ is pinned to the cap.
    pub neighborhood_eps: f64,
    pub fixed_point: FixedPointSettings,
}

impl ViscosityConfig {
    pub fn adaptive(theta_cap: f64) -> Self {
        Self {
            theta_cap,
            schedule: Schedule::Adaptive,
            neighborhood_eps: 1e-3,
            fixed_point: FixedPointSettings::default(),
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_cap > 0.0 && self.theta_cap < 1.0) {
            return Err(Error::invalid("theta_cap", format!("{} not in (0, 1)", self.theta_cap)));
        }
        if let Schedule::Constant(t) = self.schedule {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid("theta", format!("{t} not in [0, 1]")));
            }
        }
        if !(self.neighborhood_eps >= 0.0 && self.neighborhood_eps.is_finite()) {
            return Err(Error::invalid("neighborhood_eps", "must be finite and >= 0"));
        }
        if !(self.fixed_point.tol > 0.0) || self.fixed_point.max_iter == 0 {
            return Err(Error::invalid("fixed_point", "tol must be > 0 and max_iter >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub point: Image,
    /// `‖x_t − x_{t−1}‖` at the last step.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Picard iteration on `s` from `x0`, stopping once
/// `‖x_t − x_{t−1}‖ ≤ tol · max(1, ‖x_{t−1}‖)`.
pub fn fixed_point(
    s: impl Fn(&Image) -> Result<Image>,
    x0: &Image,
    settings: FixedPointSettings,
) -> Result<FixedPoint> {
    let mut x = x0.clone();
    let mut residual = f64::INFINITY;
    for t in 1..=settings.max_iter {
        let next = s(&x)?;
        residual = next.distance(&x)?;
        let scale = x.norm().max(1.0);
        x = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= settings.tol * scale {
            return Ok(FixedPoint {
                point: x,
                residual,
                iterations: t,
                converged: true,
            });
        }
    }
    log::warn!("fixed point of S not reached: residual {residual:.3e}");
    Ok(FixedPoint {
        point: x,
        residual,
        iterations: settings.max_iter,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityIndex {
    pub theta: f64,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub near_p: bool,
    pub degenerate: bool,
}

/// Adaptive θ from the current iterate and its images under `T` and `S`.
pub fn viscosity_index(
    x: &Image,
    tx: &Image,
    sx: &Image,
    p: &Image,
    theta_cap: f64,
    neighborhood_eps: f64,
) -> Result<ViscosityIndex> {
    let d = x.distance(p)?;
    let ratios = |d: f64| -> Result<(f64, f64)> { Ok((tx.distance(p)? / d, sx.distance(p)? / d)) };
    if d <= neighborhood_eps * p.norm().max(1.0) {
        let (eta, beta) = if d > 0.0 {
            let (e, b) = ratios(d)?;
            (Some(e), Some(b))
        } else {
            (None, None)
        };
        return Ok(ViscosityIndex {
            theta: theta_cap,
            eta,
            beta,
            near_p: true,
            degenerate: false,
        });
    }
    let (eta, beta) = ratios(d)?;
    let (theta, degenerate) = if eta <= 1.0 {
        (0.0, false)
    } else if eta - beta <= DEGENERATE_GAP {
        (theta_cap, true)
    } else {
        (((eta - 1.0) / (eta - beta)).min(theta_cap), false)
    };
    Ok(ViscosityIndex {
        theta,
        eta: Some(eta),
        beta: Some(beta),
        near_p: false,
        degenerate,
    })
}

#[derive(Debug, Clone)]
pub struct VistaRun {
    pub trace: IterationTrace,
    pub fixed_point: FixedPoint,
}

/// Runs the stabilized iteration. `S` is first iterated to its fixed point
/// `p` (from `x0`); afterwards each step evaluates `T` and `S` once.
pub fn vista_iterate(
    t: impl Fn(&Image) -> Result<Image>,
    s: impl Fn(&Image) -> Result<Image>,
    x0: &Image,
    settings: LoopSettings,
    cfg: &ViscosityConfig,
    ground_truth: Option<&Image>,
) -> Result<VistaRun> {
    cfg.validate()?;
    let fp = fixed_point(&s, x0, cfg.fixed_point)?;
    let p = &fp.point;
    let trace = drive(x0, settings, ground_truth, Some(p), |k, x| {
        let tx = t(x)?;
        let sx = s(x)?;
        let idx = match cfg.schedule {
            Schedule::Adaptive => viscosity_index(x, &tx, &sx, p, cfg.theta_cap, cfg.neighborhood_eps)?,
            fixed => {
                let theta = match fixed {
                    Schedule::Constant(theta) => theta,
                    _ => (1.0 / (k + 1) as f64).min(cfg.theta_cap),
                };
                // Ratios are still reported for diagnostics.
                let d = x.distance(p)?;
                let (eta, beta) = if d > 0.0 {
                    (Some(tx.distance(p)? / d), Some(sx.distance(p)? / d))
                } else {
                    (None, None)
                };
                ViscosityIndex {
                    theta,
                    eta,
                    beta,
                    near_p: false,
                    degenerate: false,
                }
            }
        };
        let next = if idx.theta == 0.0 {
            tx
        } else {
            tx.lincomb(1.0 - idx.theta, &sx, idx.theta)?
        };
        Ok(Step {
            next,
            theta: Some(idx.theta),
            eta: idx.eta,
            beta: idx.beta,
            near_p: idx.near_p,
            degenerate: idx.degenerate,
        })
    })?;
    Ok(VistaRun { trace, fixed_point: fp })
}

/// Rows `k ≥ 1` where `‖x_k − p‖` exceeds `((1−θ)η + θβ)‖x_{k−1} − p‖`
/// by more than the relative slack.
pub fn distance_bound_violations(trace: &IterationTrace, slack: f64) -> Vec<usize> {
    trace
        .entries
        .windows(2)
        .filter_map(|w| {
            let (prev, cur) = (&w[0], &w[1]);
            let (Some(d0), Some(d1), Some(theta), Some(eta), Some(beta)) =
                (prev.dist_to_p, cur.dist_to_p, cur.theta, cur.eta, cur.beta)
            else {
                return None;
            };
            let bound = ((1.0 - theta) * eta + theta * beta) * d0;
            (d1 > bound * (1.0 + slack) + 1e-300).then_some(cur.k)
        })
        .collect()
}
