use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use super::config::{
    DenoiserConfig, EquivariantModeConfig, ExperimentConfig, KernelSource, MethodConfig, TaskConfig,
    ViscosityOperatorConfig,
};
use super::images::{bicubic_upsample, load_ground_truth};
use crate::bridge::bridge_denoiser;
use crate::denoise::{
    build_dsg_weights, dsg_nlm_denoiser, equivariant_wrap, gaussian_smoother, scaled_identity, unsharp_expansive,
    Denoiser, EquivariantMode, IdentityDenoiser, NlmDenoiser,
};
use crate::error::{Error, Result};
use crate::forward::{gaussian_kernel, line_kernel, load_kernel, ForwardModel, Problem};
use crate::image::{add_gaussian_noise, Image};
use crate::io::save_image;
use crate::pnp::{vanilla_iterate, PnpOperator};
use crate::rng::Rng;
use crate::trace::{summarize, IterationTrace, LoopSettings};
use crate::vista::{vista_iterate, FixedPoint};

/// Synthesizes `y = A x̄ + ε` and the initialization: `y` itself for
/// deblurring, its bicubic upsample for superresolution.
pub fn build_problem(cfg: &ExperimentConfig, ground_truth: &Image, rng: &mut Rng) -> Result<(Problem, Image)> {
    let dims = ground_truth.dims();
    let model = match &cfg.task {
        TaskConfig::Identity => ForwardModel::identity(dims)?,
        TaskConfig::GaussianDeblur {
            kernel_size,
            kernel_sigma,
        } => ForwardModel::convolution(gaussian_kernel(*kernel_size, *kernel_sigma)?, dims)?,
        TaskConfig::MotionDeblur { kernel } => {
            let k = match kernel {
                KernelSource::Line { length, angle } => line_kernel(*length, *angle)?,
                KernelSource::File(path) => load_kernel(path)?,
            };
            ForwardModel::convolution(k, dims)?
        }
        TaskConfig::Superres {
            factor,
            antialias_size,
            antialias_sigma,
        } => {
            if !dims.height.is_multiple_of(*factor) || !dims.width.is_multiple_of(*factor) {
                return Err(Error::Config(format!(
                    "task.factor: {factor} does not divide the {dims} ground truth"
                )));
            }
            let k = gaussian_kernel(*antialias_size, antialias_sigma.unwrap_or(*factor as f64))?;
            ForwardModel::downsampled(k, *factor, dims)?
        }
    };
    let clean = model.apply(ground_truth)?;
    let y = add_gaussian_noise(&clean, cfg.noise_sigma, rng)?;
    let x0 = match cfg.task {
        TaskConfig::Superres { factor, .. } => bicubic_upsample(&y, factor)?,
        _ => y.clone(),
    };
    Ok((Problem::new(model, y)?, x0))
}

/// `guide` is used by the frozen-weight DSG-NLM denoiser.
pub fn build_denoiser(spec: &DenoiserConfig, guide: &Image) -> Result<Arc<dyn Denoiser>> {
    Ok(match spec {
        DenoiserConfig::Identity => Arc::new(IdentityDenoiser),
        DenoiserConfig::Gaussian { sigma } => Arc::new(gaussian_smoother(*sigma)?),
        DenoiserConfig::ScaledIdentity { beta } => Arc::new(scaled_identity(*beta)?),
        DenoiserConfig::Unsharp { lambda, base_sigma } => Arc::new(unsharp_expansive(*lambda, *base_sigma)?),
        DenoiserConfig::Nlm { nlm } => {
            let params = (*nlm).into();
            crate::denoise::NlmParams::validate(&params)?;
            Arc::new(NlmDenoiser { params })
        }
        DenoiserConfig::DsgNlm { nlm } => Arc::new(dsg_nlm_denoiser(build_dsg_weights(guide, (*nlm).into())?)),
        DenoiserConfig::Bridge {
            transport,
            timeout_seconds,
        } => Arc::new(bridge_denoiser(
            transport.clone(),
            Duration::from_secs_f64(*timeout_seconds),
        )?),
    })
}

type Map = dyn Fn(&Image) -> Result<Image> + Send + Sync;

/// The contraction `S` of a viscosity run.
pub struct ViscosityOperator {
    map: Box<Map>,
    descriptor: String,
}

impl ViscosityOperator {
    pub fn apply(&self, x: &Image) -> Result<Image> {
        (self.map)(x)
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }
}

/// `S = W ∘ (I − ρ∇f)` with DSG-NLM weights frozen on `guide`, or `S = βI`.
pub fn build_viscosity(
    spec: &ViscosityOperatorConfig,
    problem: Arc<Problem>,
    guide: &Image,
) -> Result<ViscosityOperator> {
    Ok(match *spec {
        ViscosityOperatorConfig::Nlm { rho, nlm } => {
            let w = dsg_nlm_denoiser(build_dsg_weights(guide, nlm.into())?);
            let descriptor = format!("{}∘(I-{rho}∇f)", w.descriptor());
            ViscosityOperator {
                map: Box::new(move |x| w.denoise(&problem.gradient_step(x, rho)?)),
                descriptor,
            }
        }
        ViscosityOperatorConfig::ScaledIdentity { beta } => ViscosityOperator {
            map: Box::new(move |x| Ok(x.scale(beta))),
            descriptor: format!("{beta}·I"),
        },
    })
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub peak_psnr: f64,
    pub peak_iter: usize,
    pub asymptotic_psnr: f64,
    pub asymptotic_iter: usize,
    pub diverged: bool,
    pub wall_seconds: f64,
    pub config_hash: String,
    pub problem_hash: String,
    pub asymptotic_truncated: bool,
    pub bridge_failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub completed_iterations: usize,
    pub label: String,
    pub image: String,
    pub denoiser: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub viscosity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_point_converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_point_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ImageRun {
    pub summary: RunSummary,
    pub trace: IterationTrace,
    pub output_dir: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn image_dir(cfg: &ExperimentConfig, index: usize) -> PathBuf {
    if cfg.images.len() == 1 {
        return cfg.output_dir.clone();
    }
    let src = &cfg.images[index];
    let stem = src
        .rsplit(['/', '\\', ':'])
        .next()
        .unwrap_or(src)
        .split('.')
        .next()
        .unwrap_or("image");
    cfg.output_dir.join(format!("{index:02}-{stem}"))
}

/// Runs every image of the experiment and writes `trace.csv`,
/// `summary.json`, `initial.png`, `peak.png`, `final.png` and, for ViSTA,
/// `fixed_point.png`. With several images each gets its own subdirectory.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ImageRun>> {
    cfg.validate()?;
    (0..cfg.images.len()).map(|i| run_image(cfg, i)).collect()
}

fn run_image(cfg: &ExperimentConfig, index: usize) -> Result<ImageRun> {
    let source = &cfg.images[index];
    let truth = load_ground_truth(source, cfg.image_size)?;
    let base = Rng::new(cfg.seed);
    let mut noise_rng = base.derive(2 * index as u64);
    let (problem, x0) = build_problem(cfg, &truth, &mut noise_rng)?;
    let problem = Arc::new(problem);
    let mut denoiser = build_denoiser(&cfg.denoiser, &x0)?;
    if let MethodConfig::Equivariant { mode } = cfg.method {
        if truth.height() != truth.width() {
            return Err(Error::Config(format!(
                "method: the equivariant wrapper needs square images, `{source}` is {}",
                truth.dims()
            )));
        }
        let mode = match mode {
            EquivariantModeConfig::Averaged => EquivariantMode::Averaged,
            EquivariantModeConfig::Sampled => EquivariantMode::Sampled,
        };
        denoiser = Arc::new(equivariant_wrap(denoiser, mode, base.derive(2 * index as u64 + 1)));
    }
    let denoiser_descriptor = denoiser.descriptor();
    let op = PnpOperator::new(cfg.algorithm.into(), problem.clone(), denoiser, cfg.cg.into())?;
    let settings = LoopSettings {
        iters: cfg.iters,
        divergence_guard: cfg.divergence_guard,
    };

    let (trace, fixed_point, viscosity): (IterationTrace, Option<FixedPoint>, Option<String>) = match cfg.method {
        MethodConfig::Vanilla | MethodConfig::Equivariant { .. } => (
            vanilla_iterate(|x| op.eval(x), &x0, settings, Some(&truth))?,
            None,
            None,
        ),
        MethodConfig::Vista(v) => {
            let s = build_viscosity(&v.viscosity, problem.clone(), &x0)?;
            let run = vista_iterate(
                |x| op.eval(x),
                |x| s.apply(x),
                &x0,
                settings,
                &v.viscosity_config(),
                Some(&truth),
            )?;
            (run.trace, Some(run.fixed_point), Some(s.descriptor().to_string()))
        }
    };

    let stats = summarize(&trace, cfg.asymptotic_at)?;
    let summary = RunSummary {
        peak_psnr: stats.peak_psnr,
        peak_iter: stats.peak_iter,
        asymptotic_psnr: stats.asymptotic_psnr,
        asymptotic_iter: stats.asymptotic_iter,
        diverged: stats.diverged,
        wall_seconds: stats.wall_seconds,
        config_hash: cfg.config_hash(),
        problem_hash: cfg.problem_hash(index),
        asymptotic_truncated: stats.asymptotic_truncated,
        bridge_failed: stats.bridge_failed,
        failure: trace.failure.clone(),
        completed_iterations: trace.completed_iterations(),
        label: cfg.label(),
        image: source.clone(),
        denoiser: denoiser_descriptor,
        viscosity,
        fixed_point_converged: fixed_point.as_ref().map(|f| f.converged),
        fixed_point_residual: fixed_point.as_ref().map(|f| f.residual),
    };
    if summary.bridge_failed {
        log::error!("{}: run aborted by bridge failure", summary.label);
    }

    let dir = image_dir(cfg, index);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("trace.csv"), trace.to_csv_string().as_bytes())?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), json.as_bytes())?;
    save_image(dir.join("initial.png"), &x0)?;
    let peak = trace
        .peak_iterate
        .as_ref()
        .map(|(_, img)| img)
        .unwrap_or(&trace.final_iterate);
    save_image(dir.join("peak.png"), peak)?;
    save_image(dir.join("final.png"), &trace.final_iterate)?;
    if let Some(fp) = &fixed_point {
        save_image(dir.join("fixed_point.png"), &fp.point)?;
    }
    log::info!(
        "{} on {source}: peak {:.2} dB @ {}, asymptotic {:.2} dB @ {}{}",
        summary.label,
        summary.peak_psnr,
        summary.peak_iter,
        summary.asymptotic_psnr,
        summary.asymptotic_iter,
        if summary.diverged { " (diverged)" } else { "" }
    );
    Ok(ImageRun {
        summary,
        trace,
        output_dir: dir,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub problem_hash: String,
    pub images: usize,
    pub peak_mean: f64,
    pub peak_std: f64,
    pub asymptotic_mean: f64,
    pub asymptotic_std: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let header = [
            "method",
            "problem",
            "images",
            "peak PSNR",
            "asymptotic PSNR",
            "diverged",
        ];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    r.problem_hash[..12].to_string(),
                    r.images.to_string(),
                    format!("{:.2} ± {:.2}", r.peak_mean, r.peak_std),
                    format!("{:.2} ± {:.2}", r.asymptotic_mean, r.asymptotic_std),
                    r.diverged.to_string(),
                ]
            })
            .collect();
        let width = |i: usize| {
            body.iter()
                .map(|r| r[i].chars().count())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        };
        let widths: Vec<usize> = (0..6).map(width).collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}", w = *w))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = vec![line(header.to_vec())];
        out.extend(body.iter().map(|r| line(r.iter().map(String::as_str).collect())));
        out.join("\n") + "\n"
    }
}

/// Runs each config into `out_dir/<index>-<label>` and tabulates peak and
/// asymptotic PSNR (mean ± population std over images). Writes
/// `compare.csv` and `compare.txt` to `out_dir`.
pub fn compare(configs: &[ExperimentConfig], out_dir: &Path) -> Result<CompareTable> {
    if configs.is_empty() {
        return Err(Error::Config("compare: at least one config is required".into()));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (index, cfg) in configs.iter().enumerate() {
        let label = cfg.label();
        let wrap = |e: Error| Error::Member {
            index,
            label: label.clone(),
            source: Box::new(e),
        };
        let mut member = cfg.clone();
        member.output_dir = out_dir.join(format!("{index:02}-{label}"));
        let runs = run(&member).map_err(wrap)?;
        let peaks: Vec<f64> = runs.iter().map(|r| r.summary.peak_psnr).collect();
        let asym: Vec<f64> = runs.iter().map(|r| r.summary.asymptotic_psnr).collect();
        let (peak_mean, peak_std) = mean_std(&peaks);
        let (asymptotic_mean, asymptotic_std) = mean_std(&asym);
        let joined: Vec<String> = (0..cfg.images.len()).map(|i| cfg.problem_hash(i)).collect();
        let problem_hash = if joined.len() == 1 {
            joined[0].clone()
        } else {
            use sha2::{Digest, Sha256};
            hex::encode(Sha256::digest(joined.join(",").as_bytes()))
        };
        rows.push(CompareRow {
            label,
            problem_hash,
            images: runs.len(),
            peak_mean,
            peak_std,
            asymptotic_mean,
            asymptotic_std,
            diverged: runs.iter().filter(|r| r.summary.diverged).count(),
        });
    }
    let table = CompareTable { rows };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("compare.csv"), table.to_csv().as_bytes())?;
    write_file(&out_dir.join("compare.txt"), table.to_text().as_bytes())?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Dims;

    fn cfg(task: &str) -> ExperimentConfig {
        ExperimentConfig::from_json_str(&format!(
            r#"{{"task": {task}, "noise_sigma": 0.0, "images": ["builtin:shapes"], "image_size": 32,
                "algorithm": {{"kind": "pgd", "gamma": 1.0}}, "denoiser": {{"kind": "identity"}}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn identity_task_without_noise() {
        let truth = crate::experiment::builtin_image("shapes", 32).unwrap();
        let (p, x0) = build_problem(&cfg(r#"{"kind": "identity"}"#), &truth, &mut Rng::new(0)).unwrap();
        assert_eq!(p.observation(), &truth);
        assert_eq!(x0, truth);
    }

    #[test]
    fn gaussian_deblur_defaults() {
        let c = cfg(r#"{"kind": "gaussian_deblur"}"#);
        let truth = crate::experiment::builtin_image("shapes", 32).unwrap();
        let (p, _) = build_problem(&c, &truth, &mut Rng::new(0)).unwrap();
        match p.model().kind() {
            crate::forward::ModelKind::CircularConvolution { kernel } => {
                assert_eq!((kernel.height(), kernel.width()), (25, 25));
                let want = gaussian_kernel(25, 1.6).unwrap();
                assert_eq!(kernel.taps(), want.taps());
            }
            other => panic!("unexpected model {other}"),
        }
    }

    #[test]
    fn superres_restores_size() {
        let c = cfg(r#"{"kind": "superres", "factor": 2}"#);
        let truth = crate::experiment::builtin_image("rings", 32).unwrap();
        let (p, x0) = build_problem(&c, &truth, &mut Rng::new(0)).unwrap();
        assert_eq!(p.observation().dims(), Dims::new(16, 16, 1));
        assert_eq!(x0.dims(), truth.dims());
        let bad = cfg(r#"{"kind": "superres", "factor": 3}"#);
        assert!(build_problem(&bad, &truth, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn statistics() {
        assert_eq!(mean_std(&[25.0]), (25.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.25f64.sqrt()).abs() < 1e-15);
    }
}
