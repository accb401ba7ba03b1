//! Binary request/response protocol for out-of-process denoisers.
//!
//! Every frame starts with a 17-byte header:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VSTB"
//! 4       1     type: 0 request, 1 response, 2 error, 3 handshake
//! 5       4     height   (u32 LE)
//! 9       4     width    (u32 LE)
//! 13      4     channels (u32 LE)
//! ```
//!
//! Requests and responses follow with `height·width·channels` f32 LE samples
//! in HWC order. Error frames follow with a u32 LE byte length and a UTF-8
//! message. Handshakes carry nothing else; the server echoes them unchanged.

mod client;
mod conformance;
mod frame;
mod server;

use thiserror::Error;

pub use client::{bridge_denoiser, BridgeDenoiser, Connection, Transport};
pub use conformance::{run_conformance, CheckResult};
pub use frame::{read_frame, write_frame, Frame, FrameKind, HEADER_LEN, MAGIC, MAX_MESSAGE_LEN};
pub use server::{serve, ModelFn};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BridgeError {
    #[error("bridge timed out after {seconds:.3} s")]
    Timeout { seconds: f64 },

    #[error("malformed bridge frame: {0}")]
    Malformed(String),

    #[error("bridge response dims {actual:?} differ from request dims {expected:?}")]
    DimMismatch { expected: [u32; 3], actual: [u32; 3] },

    #[error("bridge server error: {0}")]
    Server(String),

    #[error("bridge i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for BridgeError {
    fn from(e: std::io::Error) -> Self {
        BridgeError::Io(e.to_string())
    }
}
