//! Linear measurement models and the data-fidelity term
//! `f(x) = ½‖Ax − y‖²`: its gradient and proximal map.
//!
//! All convolutions use periodic boundaries, which makes every adjoint exact.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fft::CircularFilter;
use crate::image::{Dims, Image};

/// Tolerance on `Σ taps` for a kernel to count as a blur kernel.
pub const BLUR_SUM_TOL: f64 = 1e-6;
/// Files whose tap sum is off by more than this are rejected instead of renormalized.
pub const FILE_SUM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    height: usize,
    width: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || taps.len() != height * width {
            return Err(Error::invalid(
                "kernel",
                format!("{} taps do not fill {height}x{width}", taps.len()),
            ));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("kernel", "non-finite tap"));
        }
        Ok(Self { height, width, taps })
    }

    /// Like [`Kernel::new`] but also requires the taps to sum to one.
    pub fn blur(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        let k = Self::new(height, width, taps)?;
        let sum = k.sum();
        if (sum - 1.0).abs() > BLUR_SUM_TOL {
            return Err(Error::invalid("kernel", format!("blur taps sum to {sum}")));
        }
        Ok(k)
    }

    pub fn identity() -> Self {
        Self {
            height: 1,
            width: 1,
            taps: vec![1.0],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn tap(&self, i: usize, j: usize) -> f64 {
        self.taps[i * self.width + j]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn filter(&self, height: usize, width: usize) -> CircularFilter {
        CircularFilter::from_taps(&self.taps, self.height, self.width, height, width)
    }
}

/// Isotropic Gaussian taps on a `size x size` grid, normalized to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel> {
    if size.is_multiple_of(2) {
        return Err(Error::invalid("size", format!("must be odd, got {size}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    let c = (size / 2) as f64;
    let mut taps = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (dy, dx) = (i as f64 - c, j as f64 - c);
            taps.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Kernel::new(size, size, taps)
}

/// Linear motion blur: a segment of the given length and angle, rasterized
/// with bilinear splatting on the smallest odd square grid that holds it.
pub fn line_kernel(length: f64, angle_deg: f64) -> Result<Kernel> {
    if !(length >= 1.0) || !length.is_finite() {
        return Err(Error::invalid("length", format!("must be >= 1, got {length}")));
    }
    let size = 2 * (length / 2.0).ceil() as usize + 1;
    let c = (size / 2) as f64;
    let (s, co) = angle_deg.to_radians().sin_cos();
    let steps = (4.0 * length).ceil() as usize + 1;
    let mut taps = vec![0.0; size * size];
    for t in 0..steps {
        let r = (t as f64 / (steps - 1).max(1) as f64 - 0.5) * (length - 1.0);
        let (y, x) = (c - r * s, c + r * co);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (yy, xx) = (y0 as usize + dy, x0 as usize + dx);
                if yy < size && xx < size {
                    taps[yy * size + xx] += wy * wx;
                }
            }
        }
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Kernel::new(size, size, taps)
}

/// Reads the text kernel format: a header line `H W`, then `H` lines of `W`
/// whitespace-separated decimals. Slightly unnormalized files are rescaled.
pub fn load_kernel(path: impl AsRef<Path>) -> Result<Kernel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kernel(&text, path)
}

pub fn parse_kernel(text: &str, path: &Path) -> Result<Kernel> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty kernel file".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(err(hline, format!("expected `H W`, found `{header}`")));
    }
    let parse_dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&d| d > 0 && d <= 4096)
            .ok_or_else(|| err(hline, format!("invalid kernel dimension `{s}`")))
    };
    let (h, w) = (parse_dim(dims[0])?, parse_dim(dims[1])?);

    let mut taps = Vec::with_capacity(h * w);
    for row in 0..h {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| err(hline + row + 1, format!("expected {h} rows, found {row}")))?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != w {
            return Err(err(lineno, format!("expected {w} values, found {}", values.len())));
        }
        for tok in values {
            let v: f64 = tok
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(lineno, format!("invalid number `{tok}`")))?;
            taps.push(v);
        }
    }
    if let Some((lineno, _)) = lines.next() {
        return Err(err(lineno, "trailing data after kernel rows".into()));
    }
    let sum: f64 = taps.iter().sum();
    if (sum - 1.0).abs() >= FILE_SUM_TOL {
        return Err(err(hline, format!("kernel taps sum to {sum}, expected 1")));
    }
    taps.iter_mut().for_each(|t| *t /= sum);
    Kernel::new(h, w, taps)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Identity,
    CircularConvolution { kernel: Kernel },
    DownsampledConvolution { kernel: Kernel, factor: usize },
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Identity => write!(f, "identity"),
            ModelKind::CircularConvolution { kernel } => {
                write!(f, "conv{}x{}", kernel.height(), kernel.width())
            }
            ModelKind::DownsampledConvolution { kernel, factor } => {
                write!(f, "conv{}x{}-down{factor}", kernel.height(), kernel.width())
            }
        }
    }
}

/// The measurement operator `A` bound to fixed input dimensions.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    kind: ModelKind,
    input: Dims,
    output: Dims,
    filter: Option<CircularFilter>,
}

impl ForwardModel {
    pub fn identity(dims: Dims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            kind: ModelKind::Identity,
            input: dims,
            output: dims,
            filter: None,
        })
    }

    pub fn convolution(kernel: Kernel, dims: Dims) -> Result<Self> {
        dims.validate()?;
        let filter = kernel.filter(dims.height, dims.width);
        Ok(Self {
            kind: ModelKind::CircularConvolution { kernel },
            input: dims,
            output: dims,
            filter: Some(filter),
        })
    }

    /// Blur, then keep pixel `(0, 0)` of every `factor x factor` block.
    pub fn downsampled(kernel: Kernel, factor: usize, dims: Dims) -> Result<Self> {
        dims.validate()?;
        if factor == 0 || !dims.height.is_multiple_of(factor) || !dims.width.is_multiple_of(factor) {
            return Err(Error::invalid(
                "factor",
                format!("{factor} does not divide {}x{}", dims.height, dims.width),
            ));
        }
        let filter = kernel.filter(dims.height, dims.width);
        let output = Dims::new(dims.height / factor, dims.width / factor, dims.channels);
        Ok(Self {
            kind: ModelKind::DownsampledConvolution { kernel, factor },
            input: dims,
            output,
            filter: Some(filter),
        })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn input_dims(&self) -> Dims {
        self.input
    }

    pub fn output_dims(&self) -> Dims {
        self.output
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        x.ensure_dims(self.input)?;
        Ok(match (&self.kind, &self.filter) {
            (ModelKind::Identity, _) => x.clone(),
            (ModelKind::CircularConvolution { .. }, Some(f)) => f.apply(x),
            (ModelKind::DownsampledConvolution { factor, .. }, Some(f)) => decimate(&f.apply(x), *factor, self.output),
            _ => unreachable!("convolution models always carry a filter"),
        })
    }

    pub fn adjoint(&self, u: &Image) -> Result<Image> {
        u.ensure_dims(self.output)?;
        Ok(match (&self.kind, &self.filter) {
            (ModelKind::Identity, _) => u.clone(),
            (ModelKind::CircularConvolution { .. }, Some(f)) => f.apply_adjoint(u),
            (ModelKind::DownsampledConvolution { factor, .. }, Some(f)) => {
                f.apply_adjoint(&zero_fill(u, *factor, self.input))
            }
            _ => unreachable!("convolution models always carry a filter"),
        })
    }

    /// `AᵀA x`.
    pub fn normal(&self, x: &Image) -> Result<Image> {
        self.adjoint(&self.apply(x)?)
    }
}

fn decimate(x: &Image, factor: usize, out: Dims) -> Image {
    Image::from_fn(out, |y, xx, c| x.get(y * factor, xx * factor, c))
}

fn zero_fill(u: &Image, factor: usize, full: Dims) -> Image {
    let mut out = Image::zeros(full);
    let ch = full.channels;
    for y in 0..u.height() {
        for x in 0..u.width() {
            for c in 0..ch {
                let o = out.offset(y * factor, x * factor, c);
                out[o] = u.get(y, x, c);
            }
        }
    }
    out
}

/// A forward model together with its observation `y`.
#[derive(Debug)]
pub struct Problem {
    model: ForwardModel,
    observation: Image,
}

impl Problem {
    pub fn new(model: ForwardModel, observation: Image) -> Result<Self> {
        observation.ensure_dims(model.output_dims())?;
        Ok(Self { model, observation })
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn observation(&self) -> &Image {
        &self.observation
    }

    /// `½‖Ax − y‖²`.
    pub fn loss(&self, x: &Image) -> Result<f64> {
        let r = self.model.apply(x)?.sub(&self.observation)?;
        Ok(0.5 * r.norm().powi(2))
    }

    /// `Aᵀ(Ax − y)`.
    pub fn grad_f(&self, x: &Image) -> Result<Image> {
        let r = self.model.apply(x)?.sub(&self.observation)?;
        self.model.adjoint(&r)
    }

    /// `x − step·∇f(x)`.
    pub fn gradient_step(&self, x: &Image, step: f64) -> Result<Image> {
        let g = self.grad_f(x)?;
        x.lincomb(1.0, &g, -step)
    }

    pub fn prox_f(&self, z: &Image, mu: f64, cg: CgSettings) -> Result<Image> {
        Ok(self.prox_f_detailed(z, mu, cg)?.x)
    }

    /// Minimizes `½‖Ax − y‖² + (1/2μ)‖x − z‖²` by conjugate gradient on
    /// `(AᵀA + I/μ) x = Aᵀy + z/μ`, warm-started at `z`.
    pub fn prox_f_detailed(&self, z: &Image, mu: f64, cg: CgSettings) -> Result<ProxSolution> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid("mu", format!("must be > 0, got {mu}")));
        }
        z.ensure_dims(self.model.input_dims())?;
        let inv_mu = 1.0 / mu;
        let mut rhs = self.model.adjoint(&self.observation)?;
        rhs.axpy(inv_mu, z)?;
        let op = |v: &Image| -> Result<Image> {
            let mut out = self.model.normal(v)?;
            out.axpy(inv_mu, v)?;
            Ok(out)
        };
        conjugate_gradient(op, &rhs, z.clone(), cg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxSolution {
    pub x: Image,
    /// `‖b − Mx‖ / ‖b‖` of the returned iterate, recomputed from scratch.
    pub residual: f64,
    pub iterations: usize,
}

/// Conjugate gradient for a symmetric positive definite `op`. The stopping
/// test always uses a freshly computed residual, restarting when the
/// recursive one has drifted.
pub fn conjugate_gradient(
    op: impl Fn(&Image) -> Result<Image>,
    b: &Image,
    x0: Image,
    cg: CgSettings,
) -> Result<ProxSolution> {
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(ProxSolution {
            x: Image::zeros(b.dims()),
            residual: 0.0,
            iterations: 0,
        });
    }
    let target = cg.tol * b_norm;
    let mut x = x0;
    let mut iterations = 0;
    loop {
        let mut r = b.sub(&op(&x)?)?;
        let mut rr = r.norm().powi(2);
        if rr.sqrt() <= target {
            return Ok(ProxSolution {
                x,
                residual: rr.sqrt() / b_norm,
                iterations,
            });
        }
        if iterations >= cg.max_iter {
            return Err(Error::NotConverged {
                iterations,
                residual: rr.sqrt() / b_norm,
            });
        }
        let mut p = r.clone();
        while iterations < cg.max_iter {
            let ap = op(&p)?;
            let pap = p.dot(&ap)?;
            if !(pap > 0.0) {
                return Err(Error::NotConverged {
                    iterations,
                    residual: rr.sqrt() / b_norm,
                });
            }
            let alpha = rr / pap;
            x.axpy(alpha, &p)?;
            r.axpy(-alpha, &ap)?;
            iterations += 1;
            let rr_next = r.norm().powi(2);
            if rr_next.sqrt() <= target {
                break;
            }
            let beta = rr_next / rr;
            rr = rr_next;
            p = r.lincomb(1.0, &p, beta)?;
        }
    }
}
