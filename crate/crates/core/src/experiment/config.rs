//! Experiment configuration: JSON on disk, overridable by dotted field paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::images::{BUILTIN_NAMES, BUILTIN_PREFIX};
use crate::bridge::Transport;
use crate::denoise::NlmParams;
use crate::error::{Error, Result};
use crate::forward::CgSettings;
use crate::pnp::Algorithm;
use crate::vista::{FixedPointSettings, Schedule, ViscosityConfig};

fn config_err(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// `A = I`; useful for pure denoising and tests.
    Identity,
    GaussianDeblur {
        #[serde(default = "defaults::blur_size")]
        kernel_size: usize,
        #[serde(default = "defaults::blur_sigma")]
        kernel_sigma: f64,
    },
    MotionDeblur {
        kernel: KernelSource,
    },
    Superres {
        factor: usize,
        #[serde(default = "defaults::antialias_size")]
        antialias_size: usize,
        /// Defaults to `factor`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        antialias_sigma: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSource {
    /// Straight motion path of `length` pixels at `angle` degrees.
    Line {
        length: f64,
        angle: f64,
    },
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    Pgd { gamma: f64 },
    Hqs { mu: f64 },
    Admm { alpha: f64 },
}

impl From<AlgorithmConfig> for Algorithm {
    fn from(a: AlgorithmConfig) -> Self {
        match a {
            AlgorithmConfig::Pgd { gamma } => Algorithm::Pgd { gamma },
            AlgorithmConfig::Hqs { mu } => Algorithm::Hqs { mu },
            AlgorithmConfig::Admm { alpha } => Algorithm::Admm { alpha },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlmConfig {
    #[serde(default = "defaults::one")]
    pub window_radius: usize,
    #[serde(default = "defaults::one")]
    pub patch_radius: usize,
    #[serde(default = "defaults::nlm_h")]
    pub h: f64,
}

impl Default for NlmConfig {
    fn default() -> Self {
        let p = NlmParams::standard();
        Self {
            window_radius: p.window_radius,
            patch_radius: p.patch_radius,
            h: p.h,
        }
    }
}

impl From<NlmConfig> for NlmParams {
    fn from(c: NlmConfig) -> Self {
        NlmParams {
            window_radius: c.window_radius,
            patch_radius: c.patch_radius,
            h: c.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserConfig {
    Identity,
    Gaussian {
        sigma: f64,
    },
    ScaledIdentity {
        beta: f64,
    },
    Unsharp {
        lambda: f64,
        base_sigma: f64,
    },
    /// Plain NLM with weights recomputed from every input.
    Nlm {
        #[serde(default)]
        nlm: NlmConfig,
    },
    /// Linear DSG-NLM with weights frozen on the initialization.
    DsgNlm {
        #[serde(default)]
        nlm: NlmConfig,
    },
    Bridge {
        transport: Transport,
        #[serde(default = "defaults::bridge_timeout")]
        timeout_seconds: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivariantModeConfig {
    Averaged,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleConfig {
    Adaptive,
    Reciprocal,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ViscosityOperatorConfig {
    /// `S = W ∘ (I − ρ∇f)` with DSG-NLM weights frozen on the initialization.
    Nlm {
        #[serde(default = "defaults::rho")]
        rho: f64,
        #[serde(default)]
        nlm: NlmConfig,
    },
    ScaledIdentity {
        beta: f64,
    },
}

impl Default for ViscosityOperatorConfig {
    fn default() -> Self {
        ViscosityOperatorConfig::Nlm {
            rho: defaults::rho(),
            nlm: NlmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VistaConfig {
    #[serde(default = "defaults::theta_cap")]
    pub theta_cap: f64,
    #[serde(default = "defaults::schedule")]
    pub schedule: ScheduleConfig,
    #[serde(default = "defaults::neighborhood_eps")]
    pub neighborhood_eps: f64,
    #[serde(default = "defaults::fp_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "defaults::fp_max_iter")]
    pub fixed_point_max_iter: usize,
    #[serde(default)]
    pub viscosity: ViscosityOperatorConfig,
}

impl Default for VistaConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("all fields default")
    }
}

impl VistaConfig {
    pub fn viscosity_config(&self) -> ViscosityConfig {
        ViscosityConfig {
            theta_cap: self.theta_cap,
            schedule: match self.schedule {
                ScheduleConfig::Adaptive => Schedule::Adaptive,
                ScheduleConfig::Reciprocal => Schedule::Reciprocal,
                ScheduleConfig::Constant(t) => Schedule::Constant(t),
            },
            neighborhood_eps: self.neighborhood_eps,
            fixed_point: FixedPointSettings {
                tol: self.fixed_point_tol,
                max_iter: self.fixed_point_max_iter,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum MethodConfig {
    #[default]
    Vanilla,
    Equivariant {
        mode: EquivariantModeConfig,
    },
    Vista(VistaConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgConfig {
    #[serde(default = "defaults::cg_tol")]
    pub tol: f64,
    #[serde(default = "defaults::cg_max_iter")]
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        let d = CgSettings::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

impl From<CgConfig> for CgSettings {
    fn from(c: CgConfig) -> Self {
        CgSettings {
            tol: c.tol,
            max_iter: c.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub task: TaskConfig,
    /// Required: the noise level differs between experiments.
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// `builtin:<name>` or image file paths.
    pub images: Vec<String>,
    /// Side length of builtin images.
    #[serde(default = "defaults::image_size")]
    pub image_size: usize,
    pub algorithm: AlgorithmConfig,
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default = "defaults::iters")]
    pub iters: usize,
    #[serde(default = "defaults::iters")]
    pub asymptotic_at: usize,
    #[serde(default = "defaults::guard")]
    pub divergence_guard: f64,
    #[serde(default)]
    pub cg: CgConfig,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
}

mod defaults {
    use std::path::PathBuf;

    use super::ScheduleConfig;

    pub fn blur_size() -> usize {
        25
    }
    pub fn blur_sigma() -> f64 {
        1.6
    }
    pub fn antialias_size() -> usize {
        9
    }
    pub fn one() -> usize {
        1
    }
    pub fn nlm_h() -> f64 {
        60.0 / 255.0
    }
    pub fn rho() -> f64 {
        1.9
    }
    pub fn bridge_timeout() -> f64 {
        30.0
    }
    pub fn theta_cap() -> f64 {
        0.2
    }
    pub fn schedule() -> ScheduleConfig {
        ScheduleConfig::Adaptive
    }
    pub fn neighborhood_eps() -> f64 {
        1e-3
    }
    pub fn fp_tol() -> f64 {
        1e-3
    }
    pub fn fp_max_iter() -> usize {
        50
    }
    pub fn cg_tol() -> f64 {
        1e-6
    }
    pub fn cg_max_iter() -> usize {
        200
    }
    pub fn image_size() -> usize {
        128
    }
    pub fn iters() -> usize {
        500
    }
    pub fn guard() -> f64 {
        1e6
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs/default")
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(path, format!("must be a positive number, got {v}")))
    }
}

fn check_nlm(path: &str, p: &NlmConfig) -> Result<()> {
    positive(&format!("{path}.h"), p.h)
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON file and applies `overrides` (`("algorithm.gamma", "1.5")`)
    /// before validation.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        Self::from_value(value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(config_err("noise_sigma", "must be finite and >= 0"));
        }
        if self.images.is_empty() {
            return Err(config_err("images", "at least one image is required"));
        }
        for (i, src) in self.images.iter().enumerate() {
            match src.strip_prefix(BUILTIN_PREFIX) {
                Some(name) if !BUILTIN_NAMES.contains(&name) => {
                    return Err(config_err(&format!("images[{i}]"), format!("unknown builtin `{name}`")))
                }
                Some(_) => {}
                None if !Path::new(src).is_file() => {
                    return Err(config_err(
                        &format!("images[{i}]"),
                        format!("file `{src}` does not exist"),
                    ))
                }
                None => {}
            }
        }
        if self.image_size < 8 {
            return Err(config_err("image_size", "must be >= 8"));
        }
        match &self.task {
            TaskConfig::Identity => {}
            TaskConfig::GaussianDeblur {
                kernel_size,
                kernel_sigma,
            } => {
                if kernel_size % 2 == 0 {
                    return Err(config_err("task.kernel_size", "must be odd"));
                }
                positive("task.kernel_sigma", *kernel_sigma)?;
            }
            TaskConfig::MotionDeblur { kernel } => match kernel {
                KernelSource::Line { length, .. } => positive("task.kernel.line.length", *length)?,
                KernelSource::File(p) if !p.is_file() => {
                    return Err(config_err(
                        "task.kernel.file",
                        format!("`{}` does not exist", p.display()),
                    ))
                }
                KernelSource::File(_) => {}
            },
            TaskConfig::Superres {
                factor,
                antialias_size,
                antialias_sigma,
            } => {
                if *factor < 2 {
                    return Err(config_err("task.factor", "must be >= 2"));
                }
                if antialias_size % 2 == 0 {
                    return Err(config_err("task.antialias_size", "must be odd"));
                }
                if let Some(s) = antialias_sigma {
                    positive("task.antialias_sigma", *s)?;
                }
            }
        }
        match self.algorithm {
            AlgorithmConfig::Pgd { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => {
                return Err(config_err("algorithm.gamma", "must be finite and >= 0"))
            }
            AlgorithmConfig::Hqs { mu } => positive("algorithm.mu", mu)?,
            AlgorithmConfig::Admm { alpha } => positive("algorithm.alpha", alpha)?,
            _ => {}
        }
        match &self.denoiser {
            DenoiserConfig::Gaussian { sigma } => positive("denoiser.sigma", *sigma)?,
            DenoiserConfig::ScaledIdentity { beta } if !(0.0..=1.0).contains(beta) => {
                return Err(config_err("denoiser.beta", "must lie in [0, 1]"))
            }
            DenoiserConfig::Unsharp { lambda, base_sigma } => {
                if !(*lambda > 1.0 && lambda.is_finite()) {
                    return Err(config_err("denoiser.lambda", "must be > 1"));
                }
                positive("denoiser.base_sigma", *base_sigma)?;
            }
            DenoiserConfig::Nlm { nlm } | DenoiserConfig::DsgNlm { nlm } => check_nlm("denoiser.nlm", nlm)?,
            DenoiserConfig::Bridge { timeout_seconds, .. } => positive("denoiser.timeout_seconds", *timeout_seconds)?,
            _ => {}
        }
        if let MethodConfig::Vista(v) = &self.method {
            v.viscosity_config().validate().map_err(|e| config_err("method", e))?;
            match v.viscosity {
                ViscosityOperatorConfig::Nlm { rho, nlm } => {
                    positive("method.viscosity.rho", rho)?;
                    check_nlm("method.viscosity.nlm", &nlm)?;
                }
                ViscosityOperatorConfig::ScaledIdentity { beta } if !(0.0..1.0).contains(&beta) => {
                    return Err(config_err("method.viscosity.beta", "must lie in [0, 1)"))
                }
                _ => {}
            }
        }
        if !(self.divergence_guard > 0.0) {
            return Err(config_err("divergence_guard", "must be > 0"));
        }
        positive("cg.tol", self.cg.tol)?;
        if self.cg.max_iter == 0 {
            return Err(config_err("cg.max_iter", "must be >= 1"));
        }
        Ok(())
    }

    /// Short label for tables: the name if given, else method/algorithm/denoiser.
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let method = match self.method {
            MethodConfig::Vanilla => "vanilla",
            MethodConfig::Equivariant { .. } => "equivariant",
            MethodConfig::Vista(_) => "vista",
        };
        let algorithm = Algorithm::from(self.algorithm).name();
        let denoiser = match &self.denoiser {
            DenoiserConfig::Identity => "identity",
            DenoiserConfig::Gaussian { .. } => "gaussian",
            DenoiserConfig::ScaledIdentity { .. } => "scaled_identity",
            DenoiserConfig::Unsharp { .. } => "unsharp",
            DenoiserConfig::Nlm { .. } => "nlm",
            DenoiserConfig::DsgNlm { .. } => "dsg_nlm",
            DenoiserConfig::Bridge { .. } => "bridge",
        };
        format!("{method}-{algorithm}-{denoiser}")
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir` and `name`.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
            m.remove("name");
        }
        hash_value(&v)
    }

    /// Hash of the fields that define the measured data for one image.
    pub fn problem_hash(&self, image_index: usize) -> String {
        let v = serde_json::json!({
            "task": self.task,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "image": self.images[image_index],
            "image_size": self.image_size,
        });
        hash_value(&v)
    }
}

fn hash_value(v: &Value) -> String {
    // serde_json maps are sorted by key, so this text is canonical.
    let text = serde_json::to_string(v).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Sets `key` (dot separated) in `root`. The value is parsed as JSON when
/// possible and taken as a string otherwise. Missing objects are created.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!(
                "override `{key}`: `{part}` is inside a non-object"
            )));
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node {
        Value::Object(m) => {
            m.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        _ => Err(Error::Config(format!("override `{key}`: parent is not an object"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "task": {"kind": "gaussian_deblur"},
        "noise_sigma": 0.01,
        "images": ["builtin:shapes"],
        "algorithm": {"kind": "pgd", "gamma": 1.0},
        "denoiser": {"kind": "unsharp", "lambda": 1.5, "base_sigma": 0.4},
        "method": {"kind": "vista"}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(
            cfg.task,
            TaskConfig::GaussianDeblur {
                kernel_size: 25,
                kernel_sigma: 1.6
            }
        );
        assert_eq!((cfg.iters, cfg.asymptotic_at, cfg.image_size), (500, 500, 128));
        let MethodConfig::Vista(v) = cfg.method else { panic!() };
        assert_eq!(v.theta_cap, 0.2);
        assert_eq!(v.schedule, ScheduleConfig::Adaptive);
        assert_eq!(v.viscosity, ViscosityOperatorConfig::default());
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let again = ExperimentConfig::from_json_str(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        let odd = r#"{
            "name": "sr",
            "task": {"kind": "superres", "factor": 2, "antialias_sigma": 1.5},
            "noise_sigma": 0.0,
            "images": ["builtin:rings"],
            "algorithm": {"kind": "admm", "alpha": 0.3},
            "denoiser": {"kind": "bridge", "transport": {"tcp": "127.0.0.1:9"}},
            "method": {"kind": "vista", "schedule": {"constant": 0.1},
                       "viscosity": {"kind": "scaled_identity", "beta": 0.95}}
        }"#;
        let cfg = ExperimentConfig::from_json_str(odd).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn noise_sigma_is_required() {
        let text = MINIMAL.replace("\"noise_sigma\": 0.01,", "");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err().to_string();
        assert!(err.contains("noise_sigma"), "{err}");
    }

    #[test]
    fn errors_name_the_field() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "algorithm.gamma", "-1").unwrap();
        let err = ExperimentConfig::from_value(v).unwrap_err().to_string();
        assert!(err.starts_with("algorithm.gamma"), "{err}");

        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "method.theta_cap", "1.5").unwrap();
        assert!(ExperimentConfig::from_value(v)
            .unwrap_err()
            .to_string()
            .contains("theta_cap"));

        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "algorithm.gama", "1").unwrap();
        assert!(ExperimentConfig::from_value(v).is_err());

        let text = MINIMAL.replace("builtin:shapes", "/definitely/missing.png");
        assert!(ExperimentConfig::from_json_str(&text)
            .unwrap_err()
            .to_string()
            .contains("images[0]"));
    }

    #[test]
    fn overrides_parse_values() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        apply_override(&mut v, "algorithm.gamma", "1.9").unwrap();
        apply_override(&mut v, "output_dir", "out/x").unwrap();
        apply_override(&mut v, "method.viscosity.kind", "nlm").unwrap();
        apply_override(&mut v, "method.viscosity.rho", "1.5").unwrap();
        let cfg = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(cfg.algorithm, AlgorithmConfig::Pgd { gamma: 1.9 });
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
        let MethodConfig::Vista(vc) = cfg.method else { panic!() };
        assert!(matches!(vc.viscosity, ViscosityOperatorConfig::Nlm { rho, .. } if rho == 1.5));
        assert!(apply_override(&mut Value::Null, "a..b", "1").is_err());
    }

    #[test]
    fn hashes() {
        let a = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.config_hash(), b.config_hash());
        b.method = MethodConfig::Vanilla;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.problem_hash(0), b.problem_hash(0));
        assert_eq!(a.config_hash().len(), 64);
    }
}
