//! Symmetrization of a denoiser over the dihedral group of the square.

use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

use super::Denoiser;

/// An element of D4 acting on `n x n` images: optional transpose, then
/// optional vertical and horizontal flips of the source coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct D4Element {
    pub transpose: bool,
    pub flip_rows: bool,
    pub flip_cols: bool,
}

impl D4Element {
    pub const IDENTITY: D4Element = D4Element {
        transpose: false,
        flip_rows: false,
        flip_cols: false,
    };

    pub fn all() -> [D4Element; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, e) in out.iter_mut().enumerate() {
            *e = D4Element {
                transpose: i & 4 != 0,
                flip_rows: i & 2 != 0,
                flip_cols: i & 1 != 0,
            };
        }
        out
    }

    #[inline]
    fn source(&self, n: usize, y: usize, x: usize) -> (usize, usize) {
        let (mut a, mut b) = if self.transpose { (x, y) } else { (y, x) };
        if self.flip_rows {
            a = n - 1 - a;
        }
        if self.flip_cols {
            b = n - 1 - b;
        }
        (a, b)
    }

    fn check_square(x: &Image) -> Result<usize> {
        if x.height() != x.width() {
            return Err(Error::DimensionMismatch {
                expected: "square image for dihedral transforms".into(),
                actual: x.dims().to_string(),
            });
        }
        Ok(x.height())
    }

    /// `(g x)(y, x) = x(src(y, x))`.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        let n = Self::check_square(img)?;
        Ok(Image::from_fn(img.dims(), |y, x, c| {
            let (sy, sx) = self.source(n, y, x);
            img.get(sy, sx, c)
        }))
    }

    pub fn apply_inverse(&self, img: &Image) -> Result<Image> {
        let n = Self::check_square(img)?;
        let mut out = Image::zeros(img.dims());
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = self.source(n, y, x);
                for c in 0..img.channels() {
                    let o = out.offset(sy, sx, c);
                    out[o] = img.get(y, x, c);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivariantMode {
    /// Mean of `g⁻¹ D(g x)` over all eight elements.
    Averaged,
    /// One uniformly drawn element per call.
    Sampled,
}

pub struct EquivariantDenoiser<D: ?Sized> {
    mode: EquivariantMode,
    rng: Mutex<Rng>,
    inner: Arc<D>,
}

pub fn equivariant_wrap<D: Denoiser + ?Sized>(
    inner: Arc<D>,
    mode: EquivariantMode,
    rng: Rng,
) -> EquivariantDenoiser<D> {
    EquivariantDenoiser {
        mode,
        rng: Mutex::new(rng),
        inner,
    }
}

impl<D: Denoiser + ?Sized> EquivariantDenoiser<D> {
    fn conjugated(&self, g: D4Element, x: &Image) -> Result<Image> {
        let y = self.inner.denoise(&g.apply(x)?)?;
        y.ensure_same_dims(x)?;
        g.apply_inverse(&y)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for EquivariantDenoiser<D> {
    fn denoise(&self, x: &Image) -> Result<Image> {
        match self.mode {
            EquivariantMode::Averaged => {
                let mut acc = Image::zeros(x.dims());
                for g in D4Element::all() {
                    acc.axpy(1.0, &self.conjugated(g, x)?)?;
                }
                Ok(acc.scale(1.0 / 8.0))
            }
            EquivariantMode::Sampled => {
                let pick = self.rng.lock().expect("rng poisoned").below(8);
                self.conjugated(D4Element::all()[pick], x)
            }
        }
    }

    fn descriptor(&self) -> String {
        let mode = match self.mode {
            EquivariantMode::Averaged => "averaged",
            EquivariantMode::Sampled => "sampled",
        };
        format!("equivariant[{mode}]({})", self.inner.descriptor())
    }
}
