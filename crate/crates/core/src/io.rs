//! Image files: 8-bit PNG and the raw `VIMG` float format.
//!
//! `VIMG` layout: magic `b"VIMG"`, then `u32` height, width, channels (little
//! endian), then `height * width * channels` little-endian `f32` samples in
//! `HWC` order.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::image::{Dims, Image};

pub const RAW_MAGIC: &[u8; 4] = b"VIMG";
const RAW_HEADER_LEN: usize = 16;
/// Largest accepted sample count (keeps allocations sane for corrupt headers).
const MAX_SAMPLES: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Png,
    Raw,
}

fn format_of(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("png") => Ok(Format::Png),
        Some("vimg") => Ok(Format::Raw),
        _ => Err(Error::UnsupportedFormat(path.display().to_string())),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Raw => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_raw(&bytes)
        }
        Format::Png => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
            Ok(from_dynamic(img))
        }
    }
}

pub fn save_image(path: impl AsRef<Path>, x: &Image) -> Result<()> {
    let path = path.as_ref();
    match format_of(path)? {
        Format::Raw => fs::write(path, encode_raw(x)).map_err(|e| Error::io(path, e)),
        Format::Png => {
            let dyn_img = to_dynamic(x);
            dyn_img
                .save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
        }
    }
}

pub fn encode_raw(x: &Image) -> Vec<u8> {
    let dims = x.dims();
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * dims.len());
    out.extend_from_slice(RAW_MAGIC);
    for v in [dims.height, dims.width, dims.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in x.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(Error::Codec("missing VIMG header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let dims = Dims::new(word(0), word(1), word(2));
    let samples = dims
        .height
        .checked_mul(dims.width)
        .and_then(|v| v.checked_mul(dims.channels))
        .filter(|&n| n <= MAX_SAMPLES)
        .ok_or_else(|| Error::Codec(format!("dimension overflow in header {dims}")))?;
    let payload = &bytes[RAW_HEADER_LEN..];
    if payload.len() != 4 * samples {
        return Err(Error::Codec(format!(
            "payload holds {} bytes, header {dims} needs {}",
            payload.len(),
            4 * samples
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Image::new(dims, data)
}

/// `round(v * 255)` after clamping to `[0, 1]`.
pub fn quantize_u8(v: f64) -> u8 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    (v * 255.0).round() as u8
}

fn from_dynamic(img: DynamicImage) -> Image {
    let to_unit = |b: u8| b as f64 / 255.0;
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let dims = Dims::new(rgb.height() as usize, rgb.width() as usize, 3);
        let data = rgb.into_raw().into_iter().map(to_unit).collect();
        Image::new(dims, data).expect("rgb buffer matches dims")
    } else {
        let gray = img.to_luma8();
        let dims = Dims::new(gray.height() as usize, gray.width() as usize, 1);
        let data = gray.into_raw().into_iter().map(to_unit).collect();
        Image::new(dims, data).expect("gray buffer matches dims")
    }
}

fn to_dynamic(x: &Image) -> DynamicImage {
    let (h, w) = (x.height() as u32, x.width() as u32);
    let bytes: Vec<u8> = x.data().iter().map(|&v| quantize_u8(v)).collect();
    if x.channels() == 3 {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("rgb size"))
    } else {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("gray size"))
    }
}
