//! Plug-and-play image reconstruction with viscosity stabilization.
//!
//! Images are `f64` internally, stored row-major with interleaved channels
//! (HWC). Files and the denoiser bridge exchange 32-bit floats.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bridge;
pub mod denoise;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod forward;
pub mod image;
pub mod io;
pub mod pnp;
pub mod rng;
pub mod trace;
pub mod vista;

pub use error::{Error, Result};
pub use image::{psnr, Dims, Image};
pub use rng::Rng;
