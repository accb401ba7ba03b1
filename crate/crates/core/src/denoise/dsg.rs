//! Symmetric, doubly stochastic NLM smoothing with weights frozen on a guide.
//!
//! Construction from raw NLM weights `w_ij` of the guide:
//!  1. `d_i = Σ_j w_ij`,
//!  2. `w̃_ij = w_ij / √(d_i d_j)`,
//!  3. `w̃_ii += 1 − Σ_j w̃_ij`.
//!
//! The result is a fixed symmetric nonnegative matrix with unit row sums, so
//! the denoiser `x -> W x` is linear with spectral norm exactly 1.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::{Dims, Image};

use super::nlm::{box_sum_periodic, half_window, shifted_sq_diff, NlmParams};
use super::Denoiser;

#[derive(Debug, Clone)]
pub struct DsgNlmWeights {
    dims: Dims,
    params: NlmParams,
    /// Every window offset, `(0, 0)` first.
    offsets: Vec<(isize, isize)>,
    /// `planes[k][p]`: weight between pixel `p` and pixel `p + offsets[k]`.
    planes: Vec<Vec<f64>>,
}

impl DsgNlmWeights {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> NlmParams {
        self.params
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    /// Weight between pixel `(y, x)` and its neighbor at `offsets()[k]`.
    pub fn weight(&self, y: usize, x: usize, k: usize) -> f64 {
        self.planes[k][y * self.dims.width + x]
    }

    /// Index into [`offsets`](Self::offsets) of `offset`, if it is in the window.
    pub fn offset_index(&self, offset: (isize, isize)) -> Option<usize> {
        self.offsets.iter().position(|&o| o == offset)
    }

    pub fn neighbor(&self, y: usize, x: usize, k: usize) -> (usize, usize) {
        let (dy, dx) = self.offsets[k];
        (
            (y as isize + dy).rem_euclid(self.dims.height as isize) as usize,
            (x as isize + dx).rem_euclid(self.dims.width as isize) as usize,
        )
    }

    pub fn row_sum(&self, y: usize, x: usize) -> f64 {
        (0..self.offsets.len()).map(|k| self.weight(y, x, k)).sum()
    }

    /// `W x`, channel by channel.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        if (x.height(), x.width()) != (self.dims.height, self.dims.width) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} (guide)", self.dims.height, self.dims.width),
                actual: x.dims().to_string(),
            });
        }
        let (h, w, ch) = (x.height(), x.width(), x.channels());
        let data = x.data();
        let mut out = vec![0.0; data.len()];
        for (&(dy, dx), plane) in self.offsets.iter().zip(&self.planes) {
            for y in 0..h {
                let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
                for xx in 0..w {
                    let sx = (xx as isize + dx).rem_euclid(w as isize) as usize;
                    let p = y * w + xx;
                    let q = sy * w + sx;
                    let wgt = plane[p];
                    for c in 0..ch {
                        out[p * ch + c] += wgt * data[q * ch + c];
                    }
                }
            }
        }
        Image::new(x.dims(), out)
    }
}

pub fn build_dsg_weights(guide: &Image, params: NlmParams) -> Result<DsgNlmWeights> {
    params.validate()?;
    let (h, w) = (guide.height(), guide.width());
    let side = 2 * params.window_radius + 1;
    if side > h || side > w {
        return Err(Error::invalid(
            "window_radius",
            format!("{side}x{side} window exceeds {h}x{w} guide"),
        ));
    }
    let n = h * w;
    let scale = params.weight_scale(guide.channels());

    let half = half_window(params.window_radius);
    let mut offsets = vec![(0, 0)];
    let mut planes = vec![vec![1.0; n]];
    for &(dy, dx) in &half {
        let dist = box_sum_periodic(&shifted_sq_diff(guide, dy, dx), h, w, params.patch_radius);
        let fwd: Vec<f64> = dist.iter().map(|d| (-d * scale).exp()).collect();
        // The pair (p, p + o) seen from p + o: w_{-o}[q] = w_o[q - o].
        let mut back = vec![0.0; n];
        for y in 0..h {
            let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let sx = (x as isize + dx).rem_euclid(w as isize) as usize;
                back[sy * w + sx] = fwd[y * w + x];
            }
        }
        offsets.push((dy, dx));
        planes.push(fwd);
        offsets.push((-dy, -dx));
        planes.push(back);
    }

    let mut degree = vec![0.0; n];
    for plane in &planes {
        for (d, v) in degree.iter_mut().zip(plane) {
            *d += v;
        }
    }
    for (&(dy, dx), plane) in offsets.iter().zip(planes.iter_mut()) {
        for y in 0..h {
            let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let sx = (x as isize + dx).rem_euclid(w as isize) as usize;
                let (p, q) = (y * w + x, sy * w + sx);
                plane[p] /= (degree[p] * degree[q]).sqrt();
            }
        }
    }
    for p in 0..n {
        let row: f64 = planes.iter().map(|pl| pl[p]).sum();
        let diag = planes[0][p] + 1.0 - row;
        if diag < 0.0 {
            return Err(Error::invalid(
                "h",
                format!("diagonal reset went negative ({diag:e}) at pixel {p}; h too small for the window"),
            ));
        }
        planes[0][p] = diag;
    }

    Ok(DsgNlmWeights {
        dims: guide.dims(),
        params,
        offsets,
        planes,
    })
}

/// The linear smoother `x -> W x` with frozen weights.
#[derive(Debug, Clone)]
pub struct DsgNlmDenoiser {
    weights: Arc<DsgNlmWeights>,
}

impl DsgNlmDenoiser {
    pub fn weights(&self) -> &DsgNlmWeights {
        &self.weights
    }
}

pub fn dsg_nlm_denoiser(weights: impl Into<Arc<DsgNlmWeights>>) -> DsgNlmDenoiser {
    DsgNlmDenoiser {
        weights: weights.into(),
    }
}

impl Denoiser for DsgNlmDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        self.weights.apply(x)
    }

    fn descriptor(&self) -> String {
        let p = self.weights.params;
        format!(
            "dsg_nlm(window_radius={}, patch_radius={}, h={})",
            p.window_radius, p.patch_radius, p.h
        )
    }
}
