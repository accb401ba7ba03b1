//! Empirical operator diagnostics: sampled Lipschitz ratios, spectral norms
//! of linear operators by power iteration, and η-stability probes.
//!
//! Sampled ratios are lower bounds on the true constants. Certifying a global
//! Lipschitz constant of an arbitrary map is out of reach; these estimators
//! only ever report what they observed.

use crate::denoise::{DsgNlmDenoiser, GaussianSmoother, ScaledIdentity, UnsharpExpansive};
use crate::error::{Error, Result};
use crate::forward::{ForwardModel, Problem};
use crate::image::{Dims, Image};
use crate::rng::Rng;

/// A linear map together with its transpose.
pub trait LinearOperator {
    fn apply(&self, x: &Image) -> Result<Image>;
    fn adjoint(&self, u: &Image) -> Result<Image>;
}

impl<L: LinearOperator + ?Sized> LinearOperator for &L {
    fn apply(&self, x: &Image) -> Result<Image> {
        (**self).apply(x)
    }
    fn adjoint(&self, u: &Image) -> Result<Image> {
        (**self).adjoint(u)
    }
}

/// Wraps a closure known to be symmetric.
pub struct SelfAdjoint<F>(pub F);

impl<F: Fn(&Image) -> Result<Image>> LinearOperator for SelfAdjoint<F> {
    fn apply(&self, x: &Image) -> Result<Image> {
        (self.0)(x)
    }
    fn adjoint(&self, u: &Image) -> Result<Image> {
        (self.0)(u)
    }
}

/// Explicit `(apply, adjoint)` closure pair.
pub struct LinearPair<F, G>(pub F, pub G);

impl<F, G> LinearOperator for LinearPair<F, G>
where
    F: Fn(&Image) -> Result<Image>,
    G: Fn(&Image) -> Result<Image>,
{
    fn apply(&self, x: &Image) -> Result<Image> {
        (self.0)(x)
    }
    fn adjoint(&self, u: &Image) -> Result<Image> {
        (self.1)(u)
    }
}

impl LinearOperator for ForwardModel {
    fn apply(&self, x: &Image) -> Result<Image> {
        ForwardModel::apply(self, x)
    }
    fn adjoint(&self, u: &Image) -> Result<Image> {
        ForwardModel::adjoint(self, u)
    }
}

macro_rules! symmetric_denoiser {
    ($($ty:ty),*) => {$(
        impl LinearOperator for $ty {
            fn apply(&self, x: &Image) -> Result<Image> {
                crate::denoise::Denoiser::denoise(self, x)
            }
            fn adjoint(&self, u: &Image) -> Result<Image> {
                crate::denoise::Denoiser::denoise(self, u)
            }
        }
    )*};
}

symmetric_denoiser!(GaussianSmoother, ScaledIdentity, UnsharpExpansive, DsgNlmDenoiser);

/// The linear part `x -> W(x − ρAᵀAx)` of a gradient-then-smooth operator,
/// with transpose `(I − ρAᵀA)W` (both `W` and `AᵀA` are symmetric).
pub struct GradientThenSmooth<'a, W: LinearOperator> {
    pub smoother: W,
    pub problem: &'a Problem,
    pub step: f64,
}

impl<W: LinearOperator> LinearOperator for GradientThenSmooth<'_, W> {
    fn apply(&self, x: &Image) -> Result<Image> {
        let n = self.problem.model().normal(x)?;
        self.smoother.apply(&x.lincomb(1.0, &n, -self.step)?)
    }
    fn adjoint(&self, u: &Image) -> Result<Image> {
        let v = self.smoother.adjoint(u)?;
        let n = self.problem.model().normal(&v)?;
        v.lincomb(1.0, &n, -self.step)
    }
}

/// Scales of the near-duplicate perturbations, relative to unit RMS.
pub const NEAR_DUPLICATE_SCALES: [f64; 2] = [1e-1, 1e-3];

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub pairs: usize,
    pub near_scales: Vec<f64>,
}

impl SamplingPlan {
    pub fn with_pairs(pairs: usize) -> Self {
        Self {
            pairs,
            near_scales: NEAR_DUPLICATE_SCALES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub num_pairs: usize,
    pub seed: u64,
    pub descriptor: String,
}

impl ContractionReport {
    pub fn labeled(mut self, descriptor: impl Into<String>) -> Self {
        self.descriptor = descriptor.into();
        self
    }
}

/// Draws `plan.pairs` pairs, cycling through independent uniform pairs and
/// near-duplicates `x + s·δ` for each scale `s` (δ standard normal), and
/// collects `‖F(x₁) − F(x₂)‖ / ‖x₁ − x₂‖`. Coincident pairs are redrawn.
pub fn sample_lipschitz(
    op: impl Fn(&Image) -> Result<Image>,
    dims: Dims,
    plan: &SamplingPlan,
    rng: &mut Rng,
) -> Result<ContractionReport> {
    if plan.pairs == 0 {
        return Err(Error::invalid("pairs", "must be >= 1"));
    }
    let seed = rng.seed();
    let kinds = 1 + plan.near_scales.len();
    let (mut max, mut sum) = (0.0_f64, 0.0);
    for i in 0..plan.pairs {
        let (x1, x2, gap) = loop {
            let x1 = Image::random_uniform(dims, rng);
            let x2 = match i % kinds {
                0 => Image::random_uniform(dims, rng),
                k => {
                    let noise = Image::random_normal(dims, rng);
                    x1.lincomb(1.0, &noise, plan.near_scales[k - 1])?
                }
            };
            let gap = x1.distance(&x2)?;
            if gap > 0.0 {
                break (x1, x2, gap);
            }
        };
        let ratio = op(&x1)?.distance(&op(&x2)?)? / gap;
        max = max.max(ratio);
        sum += ratio;
    }
    Ok(ContractionReport {
        max_ratio: max,
        mean_ratio: sum / plan.pairs as f64,
        num_pairs: plan.pairs,
        seed,
        descriptor: String::new(),
    })
}

/// Sampled contraction statistics of `op` on images of size `dims`.
pub fn contraction_ratio(
    op: impl Fn(&Image) -> Result<Image>,
    dims: Dims,
    pairs: usize,
    rng: &mut Rng,
) -> Result<ContractionReport> {
    sample_lipschitz(op, dims, &SamplingPlan::with_pairs(pairs), rng)
}

/// Relative deviation from `L(ax + bu) = aLx + bLu` on one random draw.
pub fn linearity_defect(op: &dyn Fn(&Image) -> Result<Image>, dims: Dims, rng: &mut Rng) -> Result<f64> {
    let x = Image::random_normal(dims, rng);
    let u = Image::random_normal(dims, rng);
    let (a, b) = (0.5 + rng.uniform(), -(0.5 + rng.uniform()));
    let lhs = op(&x.lincomb(a, &u, b)?)?;
    let (lx, lu) = (op(&x)?, op(&u)?);
    let rhs = lx.lincomb(a, &lu, b)?;
    let scale = (a * lx.norm()).abs() + (b * lu.norm()).abs();
    Ok(if scale == 0.0 {
        lhs.norm()
    } else {
        lhs.distance(&rhs)? / scale
    })
}

pub const LINEARITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Spectral norm by power iteration on `LᵀL`, stopping once the estimate
/// changes by at most `1e-6` relative between iterations. Rejects operators
/// that fail a linearity probe or whose adjoint fails a dot test.
pub fn linear_operator_norm<L: LinearOperator + ?Sized>(op: &L, dims: Dims, iters: usize) -> Result<NormEstimate> {
    linear_operator_norm_tol(op, dims, iters, 1e-6)
}

pub fn linear_operator_norm_tol<L: LinearOperator + ?Sized>(
    op: &L,
    dims: Dims,
    iters: usize,
    tol: f64,
) -> Result<NormEstimate> {
    let mut rng = Rng::new(0x005e_ed0f_9a11);
    let defect = linearity_defect(&|x| op.apply(x), dims, &mut rng)?;
    if !(defect <= LINEARITY_TOL) {
        return Err(Error::NotLinear { deviation: defect });
    }
    let x = Image::random_normal(dims, &mut rng);
    let lx = op.apply(&x)?;
    let u = Image::random_normal(lx.dims(), &mut rng);
    let (lhs, rhs) = (lx.dot(&u)?, x.dot(&op.adjoint(&u)?)?);
    let dot_gap = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    if dot_gap > LINEARITY_TOL {
        return Err(Error::invalid(
            "adjoint",
            format!("dot test failed: relative gap {dot_gap:e}"),
        ));
    }

    let mut v = Image::random_normal(dims, &mut rng);
    v = v.scale(1.0 / v.norm());
    let mut estimate = 0.0_f64;
    for it in 1..=iters.max(1) {
        let w = op.adjoint(&op.apply(&v)?)?;
        let rayleigh = v.dot(&w)?.max(0.0);
        let next = rayleigh.sqrt();
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(NormEstimate {
                norm: 0.0,
                iterations: it,
                converged: true,
            });
        }
        let change = (next - estimate).abs();
        estimate = next;
        v = w.scale(1.0 / wn);
        if it > 1 && change <= tol * estimate {
            return Ok(NormEstimate {
                norm: estimate,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(NormEstimate {
        norm: estimate,
        iterations: iters.max(1),
        converged: false,
    })
}

/// Distance scales (RMS per sample) at which η-stability is probed.
pub const ETA_PROBE_SCALES: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];
/// Ascent steps taken from each random start.
pub const ETA_PROBE_REFINE: usize = 20;

/// Largest observed `‖T(x) − p‖ / ‖x − p‖`, an empirical lower bound on the
/// η for which `T` is η-stable about `p`.
///
/// Each sample starts at `p + δ` with random `δ` at one of
/// [`ETA_PROBE_SCALES`], then takes [`ETA_PROBE_REFINE`] steps of
/// `δ ← (T(p + δ) − p)` rescaled back to the starting distance, which is
/// power iteration when `T` is affine with fixed point `p`.
pub fn eta_stability_probe(
    t: impl Fn(&Image) -> Result<Image>,
    p: &Image,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be >= 1"));
    }
    let dims = p.dims();
    let rms = (dims.len() as f64).sqrt();
    let mut best = 0.0_f64;
    for s in 0..samples {
        let radius = ETA_PROBE_SCALES[s % ETA_PROBE_SCALES.len()] * rms;
        let mut delta = Image::random_normal(dims, rng);
        delta = delta.scale(radius / delta.norm());
        for _ in 0..=ETA_PROBE_REFINE {
            let x = p.add(&delta)?;
            let moved = t(&x)?.sub(p)?;
            let m = moved.norm();
            best = best.max(m / radius);
            if m == 0.0 || !m.is_finite() {
                break;
            }
            delta = moved.scale(radius / m);
        }
    }
    Ok(best)
}
