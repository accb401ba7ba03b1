//! Non-local means with periodic boundaries.
//!
//! Weight between pixels `i` and `j` inside the search window:
//! `exp(−‖P_i − P_j‖² / (h² · |P| · C))`, where `P_i` is the patch around `i`,
//! `|P|` the number of patch pixels and `C` the channel count.
//!
//! The fast path iterates over window offsets instead of pixels: for each
//! offset it forms the whole-image squared-difference map against the
//! shifted image, box-filters it over the patch footprint with running sums,
//! and accumulates. Pair symmetry halves the offsets visited. Memory is a few
//! image-sized buffers; time no longer depends on the patch size.

use crate::error::{Error, Result};
use crate::image::Image;

use super::Denoiser;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmParams {
    pub window_radius: usize,
    pub patch_radius: usize,
    pub h: f64,
}

impl NlmParams {
    /// 3x3 search window, 3x3 patches, `h = 60/255`.
    pub fn standard() -> Self {
        Self {
            window_radius: 1,
            patch_radius: 1,
            h: 60.0 / 255.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::invalid("h", format!("must be > 0, got {}", self.h)));
        }
        Ok(())
    }

    pub(crate) fn weight_scale(&self, channels: usize) -> f64 {
        let side = (2 * self.patch_radius + 1) as f64;
        1.0 / (self.h * self.h * side * side * channels as f64)
    }
}

/// Reference implementation: one weight per (pixel, offset), patch distances
/// summed directly with wrapped indices.
pub fn nlm_denoise_naive(x: &Image, params: NlmParams) -> Result<Image> {
    params.validate()?;
    let (h, w, ch) = (x.height() as isize, x.width() as isize, x.channels());
    let wr = params.window_radius as isize;
    let pr = params.patch_radius as isize;
    let scale = params.weight_scale(ch);
    let at = |y: isize, xx: isize, c: usize| x.get(y.rem_euclid(h) as usize, xx.rem_euclid(w) as usize, c);

    let mut out = Image::zeros(x.dims());
    for y in 0..h {
        for xx in 0..w {
            let mut num = vec![0.0; ch];
            let mut den = 0.0;
            for dy in -wr..=wr {
                for dx in -wr..=wr {
                    let mut dist = 0.0;
                    for qy in -pr..=pr {
                        for qx in -pr..=pr {
                            for c in 0..ch {
                                let d = at(y + qy, xx + qx, c) - at(y + dy + qy, xx + dx + qx, c);
                                dist += d * d;
                            }
                        }
                    }
                    let wgt = (-dist * scale).exp();
                    den += wgt;
                    for (c, n) in num.iter_mut().enumerate() {
                        *n += wgt * at(y + dy, xx + dx, c);
                    }
                }
            }
            for (c, n) in num.iter().enumerate() {
                let o = out.offset(y as usize, xx as usize, c);
                out[o] = n / den;
            }
        }
    }
    Ok(out)
}

/// Per-pixel squared distance between `x` and `x` shifted by `(dy, dx)`,
/// summed over channels: `out[p] = Σ_c (x[p] − x[p + o])²`.
pub(crate) fn shifted_sq_diff(x: &Image, dy: isize, dx: isize) -> Vec<f64> {
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let cols = wrapped_indices(w, dx);
    let mut out = vec![0.0; h * w];
    let data = x.data();
    for y in 0..h {
        let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
        let row = &data[y * w * ch..(y + 1) * w * ch];
        let srow = &data[sy * w * ch..(sy + 1) * w * ch];
        let dst = &mut out[y * w..(y + 1) * w];
        for (xx, d) in dst.iter_mut().enumerate() {
            let (a, b) = (&row[xx * ch..xx * ch + ch], &srow[cols[xx] * ch..cols[xx] * ch + ch]);
            let mut s = 0.0;
            for c in 0..ch {
                let t = a[c] - b[c];
                s += t * t;
            }
            *d = s;
        }
    }
    out
}

fn wrapped_indices(n: usize, shift: isize) -> Vec<usize> {
    (0..n)
        .map(|i| (i as isize + shift).rem_euclid(n as isize) as usize)
        .collect()
}

/// Periodic `(2r+1) x (2r+1)` box sum via running sums along rows, then columns.
pub(crate) fn box_sum_periodic(v: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return v.to_vec();
    }
    let ri = r as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &v[y * w..(y + 1) * w];
        let at = |i: isize| row[i.rem_euclid(w as isize) as usize];
        let mut s: f64 = (-ri..=ri).map(at).sum();
        for x in 0..w {
            tmp[y * w + x] = s;
            s += at(x as isize + ri + 1) - at(x as isize - ri);
        }
    }
    let mut out = vec![0.0; h * w];
    for x in 0..w {
        let at = |i: isize| tmp[(i.rem_euclid(h as isize) as usize) * w + x];
        let mut s: f64 = (-ri..=ri).map(at).sum();
        for y in 0..h {
            out[y * w + x] = s;
            s += at(y as isize + ri + 1) - at(y as isize - ri);
        }
    }
    out
}

/// Window offsets `(dy, dx)` with `(dy, dx) > (0, 0)` lexicographically.
pub(crate) fn half_window(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offs = Vec::new();
    for dy in 0..=r {
        for dx in -r..=r {
            if dy > 0 || dx > 0 {
                offs.push((dy, dx));
            }
        }
    }
    offs
}

/// Vectorized non-local means; agrees with [`nlm_denoise_naive`] to rounding.
pub fn nlm_denoise(x: &Image, params: NlmParams) -> Result<Image> {
    params.validate()?;
    let (h, w, ch) = (x.height(), x.width(), x.channels());
    let n = h * w;
    let scale = params.weight_scale(ch);
    let data = x.data();

    // The zero offset contributes weight 1 for every pixel.
    let mut num = data.to_vec();
    let mut den = vec![1.0; n];

    for (dy, dx) in half_window(params.window_radius) {
        let diff = shifted_sq_diff(x, dy, dx);
        let dist = box_sum_periodic(&diff, h, w, params.patch_radius);
        let cols = wrapped_indices(w, dx);
        for y in 0..h {
            let sy = (y as isize + dy).rem_euclid(h as isize) as usize;
            for (xx, &col) in cols.iter().enumerate() {
                let p = y * w + xx;
                let q = sy * w + col;
                let wgt = (-dist[p] * scale).exp();
                den[p] += wgt;
                den[q] += wgt;
                for c in 0..ch {
                    num[p * ch + c] += wgt * data[q * ch + c];
                    num[q * ch + c] += wgt * data[p * ch + c];
                }
            }
        }
    }
    for p in 0..n {
        for c in 0..ch {
            num[p * ch + c] /= den[p];
        }
    }
    Image::new(x.dims(), num)
}

/// Classical (input-adaptive, nonlinear) NLM as a [`Denoiser`].
#[derive(Debug, Clone, Copy)]
pub struct NlmDenoiser {
    pub params: NlmParams,
}

impl Denoiser for NlmDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        nlm_denoise(x, self.params)
    }

    fn descriptor(&self) -> String {
        format!(
            "nlm(window_radius={}, patch_radius={}, h={})",
            self.params.window_radius, self.params.patch_radius, self.params.h
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Dims;
    use crate::rng::Rng;

    fn max_abs_diff(a: &Image, b: &Image) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn constant_image_unchanged() {
        let x = Image::filled(Dims::new(10, 12, 3), 0.3);
        let y = nlm_denoise(&x, NlmParams::standard()).unwrap();
        assert!(max_abs_diff(&x, &y) < 1e-12);
    }

    #[test]
    fn huge_h_is_box_average() {
        let mut rng = Rng::new(9);
        let x = Image::random_uniform(Dims::new(12, 12, 1), &mut rng);
        let params = NlmParams {
            h: 1e6,
            ..NlmParams::standard()
        };
        let y = nlm_denoise(&x, params).unwrap();
        let boxed = box_sum_periodic(x.data(), 12, 12, 1);
        for (a, b) in y.data().iter().zip(&boxed) {
            assert!((a - b / 9.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fast_matches_naive() {
        let mut rng = Rng::new(10);
        for (dims, params) in [
            (Dims::new(16, 16, 1), NlmParams::standard()),
            (
                Dims::new(9, 13, 3),
                NlmParams {
                    window_radius: 2,
                    patch_radius: 1,
                    h: 0.2,
                },
            ),
            (
                Dims::new(8, 8, 1),
                NlmParams {
                    window_radius: 3,
                    patch_radius: 2,
                    h: 0.1,
                },
            ),
            (
                Dims::new(3, 5, 1),
                NlmParams {
                    window_radius: 2,
                    patch_radius: 2,
                    h: 0.3,
                },
            ),
        ] {
            let x = Image::random_uniform(dims, &mut rng);
            let a = nlm_denoise(&x, params).unwrap();
            let b = nlm_denoise_naive(&x, params).unwrap();
            assert!(max_abs_diff(&a, &b) <= 1e-10, "{dims} {params:?}");
        }
    }

    #[test]
    fn rejects_bad_h() {
        let x = Image::zeros(Dims::new(4, 4, 1));
        let params = NlmParams {
            h: 0.0,
            ..NlmParams::standard()
        };
        assert!(nlm_denoise(&x, params).is_err());
        assert!(nlm_denoise_naive(&x, params).is_err());
    }
}
