//! Procedural ground-truth images and bicubic upsampling.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Dims, Image};
use crate::io::load_image;

pub const BUILTIN_PREFIX: &str = "builtin:";
pub const BUILTIN_NAMES: [&str; 4] = ["shapes", "rings", "checker", "shapes_rgb"];

/// Loads `builtin:<name>` at `size`×`size`, or any image file by path.
pub fn load_ground_truth(source: &str, size: usize) -> Result<Image> {
    match source.strip_prefix(BUILTIN_PREFIX) {
        Some(name) => builtin_image(name, size),
        None => load_image(Path::new(source)),
    }
}

pub fn builtin_image(name: &str, size: usize) -> Result<Image> {
    if size < 8 {
        return Err(Error::invalid("image_size", format!("{size} is below 8")));
    }
    let gray = Dims::new(size, size, 1);
    let n = size as f64;
    let img = match name {
        "shapes" => Image::from_fn(gray, |y, x, _| shapes(y as f64 / n, x as f64 / n)),
        "rings" => Image::from_fn(gray, |y, x, _| {
            let r = ((y as f64 / n - 0.5).powi(2) + (x as f64 / n - 0.5).powi(2)).sqrt();
            0.5 + 0.4 * (r * 40.0).cos() * (-3.0 * r).exp()
        }),
        "checker" => {
            let cell = (size / 8).max(1);
            Image::from_fn(gray, |y, x, _| {
                if (y / cell + x / cell).is_multiple_of(2) {
                    0.2
                } else {
                    0.8
                }
            })
        }
        "shapes_rgb" => Image::from_fn(Dims::new(size, size, 3), |y, x, c| {
            let v = shapes(y as f64 / n, x as f64 / n);
            let tint = [1.0, 0.8, 0.6][c];
            (v * tint + 0.1 * c as f64 * (x as f64 / n)).min(1.0)
        }),
        other => {
            return Err(Error::Config(format!(
                "unknown builtin image `{other}`; available: {}",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    Ok(img)
}

/// A ramp background with a disk, a dark rectangle and a fine bar pattern.
fn shapes(fy: f64, fx: f64) -> f64 {
    let mut v = 0.2 + 0.3 * fx;
    if (fx - 0.35).powi(2) + (fy - 0.4).powi(2) < 0.04 {
        v = 0.85;
    }
    if fx > 0.6 && fx < 0.85 && fy > 0.55 && fy < 0.8 {
        v = 0.1;
    }
    if fy > 0.15 && fy < 0.25 && fx > 0.55 {
        v = if ((fx * 32.0) as usize).is_multiple_of(2) {
            0.6
        } else {
            0.9
        };
    }
    v
}

/// Catmull-Rom cubic (a = −0.5).
fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// 1-D weights for output index `i`: output pixel `i` sits at source
/// coordinate `i / factor`, matching decimation that keeps pixel 0.
fn taps(i: usize, factor: usize, n: usize) -> [(usize, f64); 4] {
    let u = i as f64 / factor as f64;
    let base = u.floor() as isize;
    let frac = u - base as f64;
    std::array::from_fn(|k| {
        let off = k as isize - 1;
        (reflect(base + off, n), cubic(frac - off as f64))
    })
}

/// Upsamples by an integer factor with separable Catmull-Rom interpolation
/// and mirrored boundaries.
pub fn bicubic_upsample(x: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::invalid("factor", "must be >= 1"));
    }
    let (h, w, c) = (x.height(), x.width(), x.channels());
    let (oh, ow) = (h * factor, w * factor);
    let row_taps: Vec<_> = (0..ow).map(|j| taps(j, factor, w)).collect();
    let mut wide = vec![0.0; h * ow * c];
    for y in 0..h {
        for (j, t) in row_taps.iter().enumerate() {
            for ch in 0..c {
                wide[(y * ow + j) * c + ch] = t.iter().map(|&(src, wt)| wt * x.get(y, src, ch)).sum();
            }
        }
    }
    let mut out = vec![0.0; oh * ow * c];
    for i in 0..oh {
        let t = taps(i, factor, h);
        for j in 0..ow {
            for ch in 0..c {
                out[(i * ow + j) * c + ch] = t.iter().map(|&(src, wt)| wt * wide[(src * ow + j) * c + ch]).sum();
            }
        }
    }
    Image::new(Dims::new(oh, ow, c), out)
}
