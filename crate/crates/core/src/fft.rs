//! Periodic 2-D filtering through the DFT.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::image::Image;

/// A circulant operator on `height x width` planes, stored by its transfer
/// function. The spectrum is kept in transposed (column-major) order to
/// match the layout the forward pass leaves the data in.
#[derive(Clone)]
pub struct CircularFilter {
    height: usize,
    width: usize,
    spectrum: Vec<Complex64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CircularFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CircularFilter")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl CircularFilter {
    /// Builds the filter `x -> k * x` (periodic convolution) from row-major
    /// taps whose origin sits at `(kh / 2, kw / 2)`. Taps that fall outside
    /// the plane wrap around and accumulate.
    pub fn from_taps(taps: &[f64], kh: usize, kw: usize, height: usize, width: usize) -> Self {
        assert_eq!(taps.len(), kh * kw);
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(width);
        let row_inv = planner.plan_fft_inverse(width);
        let col_fwd = planner.plan_fft_forward(height);
        let col_inv = planner.plan_fft_inverse(height);

        let mut plane = vec![Complex64::new(0.0, 0.0); height * width];
        let (cy, cx) = ((kh / 2) as isize, (kw / 2) as isize);
        for i in 0..kh {
            for j in 0..kw {
                let y = (i as isize - cy).rem_euclid(height as isize) as usize;
                let x = (j as isize - cx).rem_euclid(width as isize) as usize;
                plane[y * width + x].re += taps[i * kw + j];
            }
        }
        let mut filter = Self {
            height,
            width,
            spectrum: Vec::new(),
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
        };
        filter.forward(&mut plane);
        filter.spectrum = plane;
        filter
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Transfer function value at frequency bin `(u, v)`.
    pub fn response(&self, u: usize, v: usize) -> Complex64 {
        self.spectrum[v * self.height + u]
    }

    pub fn max_gain(&self) -> f64 {
        self.spectrum.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    /// Row FFTs, then transpose, then column FFTs. Leaves data transposed.
    fn forward(&self, plane: &mut Vec<Complex64>) {
        self.row_fwd.process(plane);
        let mut t = transpose(plane, self.height, self.width);
        self.col_fwd.process(&mut t);
        *plane = t;
    }

    fn inverse(&self, plane: &mut Vec<Complex64>) {
        self.col_inv.process(plane);
        let mut t = transpose(plane, self.width, self.height);
        self.row_inv.process(&mut t);
        let scale = 1.0 / (self.height * self.width) as f64;
        for c in t.iter_mut() {
            *c *= scale;
        }
        *plane = t;
    }

    fn run(&self, x: &Image, adjoint: bool) -> Image {
        assert_eq!((x.height(), x.width()), (self.height, self.width));
        let ch = x.channels();
        let n = self.height * self.width;
        let mut out = Image::zeros(x.dims());
        let mut plane = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..ch {
            for (p, slot) in plane.iter_mut().enumerate() {
                *slot = Complex64::new(x[p * ch + c], 0.0);
            }
            self.forward(&mut plane);
            for (z, h) in plane.iter_mut().zip(&self.spectrum) {
                *z *= if adjoint { h.conj() } else { *h };
            }
            self.inverse(&mut plane);
            for (p, z) in plane.iter().enumerate() {
                out[p * ch + c] = z.re;
            }
        }
        out
    }

    pub fn apply(&self, x: &Image) -> Image {
        self.run(x, false)
    }

    /// Periodic correlation with the same taps, i.e. the transpose of [`apply`](Self::apply).
    pub fn apply_adjoint(&self, x: &Image) -> Image {
        self.run(x, true)
    }
}

fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}
