//! Denoisers: the pluggable map `D` of a plug-and-play iteration.

mod dsg;
mod equivariant;
mod nlm;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

pub use dsg::{build_dsg_weights, dsg_nlm_denoiser, DsgNlmDenoiser, DsgNlmWeights};
pub use equivariant::{equivariant_wrap, D4Element, EquivariantDenoiser, EquivariantMode};
pub use nlm::{nlm_denoise, nlm_denoise_naive, NlmDenoiser, NlmParams};

use crate::analysis::{sample_lipschitz, SamplingPlan};
use crate::error::{Error, Result};
use crate::fft::CircularFilter;
use crate::forward::{gaussian_kernel, Kernel};
use crate::image::{Dims, Image};
use crate::rng::Rng;

/// A map `Image -> Image` that preserves dimensions.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, x: &Image) -> Result<Image>;

    /// Name and parameters, as recorded in traces.
    fn descriptor(&self) -> String;
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn denoise(&self, x: &Image) -> Result<Image> {
        (**self).denoise(x)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(&self, x: &Image) -> Result<Image> {
        (**self).denoise(x)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(x.clone())
    }

    fn descriptor(&self) -> String {
        "identity".into()
    }
}

/// Per-plane-size cache of the DFT of a fixed kernel.
#[derive(Debug)]
pub(crate) struct FilterCache {
    kernel: Kernel,
    filters: Mutex<HashMap<(usize, usize), Arc<CircularFilter>>>,
}

impl FilterCache {
    pub(crate) fn new(kernel: Kernel) -> Self {
        Self {
            kernel,
            filters: Mutex::new(HashMap::new()),
        }
    }

    pub(crate) fn get(&self, height: usize, width: usize) -> Arc<CircularFilter> {
        let mut map = self.filters.lock().expect("filter cache poisoned");
        map.entry((height, width))
            .or_insert_with(|| Arc::new(self.kernel.filter(height, width)))
            .clone()
    }

    pub(crate) fn kernel(&self) -> &Kernel {
        &self.kernel
    }
}

/// Periodic Gaussian filtering.
#[derive(Debug)]
pub struct GaussianSmoother {
    sigma: f64,
    cache: FilterCache,
}

impl GaussianSmoother {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kernel(&self) -> &Kernel {
        self.cache.kernel()
    }

    pub fn filter_for(&self, height: usize, width: usize) -> Arc<CircularFilter> {
        self.cache.get(height, width)
    }

    pub fn smooth(&self, x: &Image) -> Image {
        self.cache.get(x.height(), x.width()).apply(x)
    }
}

/// Kernel support `2⌈3σ⌉ + 1`.
pub fn gaussian_smoother(sigma: f64) -> Result<GaussianSmoother> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    let size = 2 * (3.0 * sigma).ceil() as usize + 1;
    Ok(GaussianSmoother {
        sigma,
        cache: FilterCache::new(gaussian_kernel(size, sigma)?),
    })
}

impl Denoiser for GaussianSmoother {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(self.smooth(x))
    }

    fn descriptor(&self) -> String {
        format!("gaussian(sigma={})", self.sigma)
    }
}

/// `x -> βx`, a contraction with fixed point 0 when `β < 1`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity {
    beta: f64,
}

impl ScaledIdentity {
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

pub fn scaled_identity(beta: f64) -> Result<ScaledIdentity> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("must lie in [0, 1], got {beta}")));
    }
    Ok(ScaledIdentity { beta })
}

impl Denoiser for ScaledIdentity {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(x.scale(self.beta))
    }

    fn descriptor(&self) -> String {
        format!("scaled_identity(beta={})", self.beta)
    }
}

/// Unsharp masking `x -> G(x) + λ(x − G(x))`. For `λ > 1` this amplifies
/// high frequencies by up to `λ − (λ − 1)·min ĝ`, a linear expansive map used
/// to provoke plug-and-play instability without a trained network.
#[derive(Debug)]
pub struct UnsharpExpansive {
    lambda: f64,
    base: GaussianSmoother,
}

impl UnsharpExpansive {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn base(&self) -> &GaussianSmoother {
        &self.base
    }
}

pub fn unsharp_expansive(lambda: f64, base_sigma: f64) -> Result<UnsharpExpansive> {
    if !(lambda > 1.0) || !lambda.is_finite() {
        return Err(Error::invalid(
            "lambda",
            format!("must exceed 1 to be expansive, got {lambda}"),
        ));
    }
    Ok(UnsharpExpansive {
        lambda,
        base: gaussian_smoother(base_sigma)?,
    })
}

impl Denoiser for UnsharpExpansive {
    fn denoise(&self, x: &Image) -> Result<Image> {
        let g = self.base.smooth(x);
        g.lincomb(1.0 - self.lambda, x, self.lambda)
    }

    fn descriptor(&self) -> String {
        format!("unsharp(lambda={}, base_sigma={})", self.lambda, self.base.sigma())
    }
}

/// Empirical Lipschitz constant: the largest ratio
/// `‖D(x₁) − D(x₂)‖ / ‖x₁ − x₂‖` over sampled pairs. This is a lower bound on
/// the true constant, which is intractable to certify in general.
pub fn estimate_lipschitz(d: &dyn Denoiser, dims: Dims, trials: usize, rng: &mut Rng) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let report = sample_lipschitz(|x| d.denoise(x), dims, &SamplingPlan::with_pairs(trials), rng)?;
    Ok(report.max_ratio)
}
