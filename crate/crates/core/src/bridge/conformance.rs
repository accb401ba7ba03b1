//! Protocol checks a server must pass to be used as a denoiser.

use std::time::Duration;

use serde::Serialize;

use super::client::{Connection, Transport};
use super::frame::{Frame, FrameKind};
use super::BridgeError;
use crate::image::{Dims, Image};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

/// Samples chosen to catch any lossy float handling, subnormals included.
fn probe_image() -> Image {
    let values = [
        0.0f32,
        -0.0,
        1.0,
        0.5,
        1.0 / 3.0,
        f32::MIN_POSITIVE,
        f32::MIN_POSITIVE / 4.0,
        1e-45,
        -2.5,
        1e6,
        0.123_456_79,
        7.0,
    ];
    Image::new(Dims::new(2, 2, 3), values.iter().map(|&v| v as f64).collect()).expect("12 samples")
}

fn err_text(e: BridgeError) -> String {
    e.to_string()
}

/// Handshake, bit-exact echo, rejection of an invalid request followed by
/// recovery on the same connection, and the truncated-frame rule.
/// `expect_identity` enables the echo check for identity servers.
pub fn run_conformance(transport: &Transport, timeout: Duration, expect_identity: bool) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut conn = match Connection::open(transport, timeout) {
        Ok(c) => {
            results.push(check("handshake", Ok("echoed".into())));
            c
        }
        Err(e) => {
            results.push(check("handshake", Err(err_text(e))));
            return results;
        }
    };

    let probe = probe_image();
    let reply = conn.denoise(&probe);
    if expect_identity {
        results.push(check(
            "echo",
            reply.map_err(err_text).and_then(|out| {
                let bits = |x: &Image| x.data().iter().map(|&v| (v as f32).to_bits()).collect::<Vec<_>>();
                if bits(&out) == bits(&probe) {
                    Ok("payload bit-identical".into())
                } else {
                    Err("payload changed".into())
                }
            }),
        ));
    } else {
        results.push(check(
            "response_dims",
            reply.map(|out| format!("{} response", out.dims())).map_err(err_text),
        ));
    }

    let mut bad = Frame::request(&probe).expect("small image");
    bad.dims = [2, 3, 2];
    let rejected = conn
        .send(&bad)
        .and_then(|_| conn.receive())
        .map_err(err_text)
        .and_then(|f| match f.kind {
            FrameKind::Error => Ok(format!("rejected: {}", f.message)),
            k => Err(format!("expected an error frame, got {k:?}")),
        });
    let rejected_ok = rejected.is_ok();
    results.push(check("dims_rejection", rejected));
    if rejected_ok {
        results.push(check(
            "error_recovery",
            conn.denoise(&probe)
                .map(|_| "served after error frame".into())
                .map_err(err_text),
        ));
    }
    drop(conn);

    let short = Connection::open(transport, timeout)
        .map_err(err_text)
        .and_then(|mut c| {
            let bytes = Frame::request(&probe).expect("small image").encode();
            c.send_raw(bytes[..bytes.len() / 2].to_vec()).map_err(err_text)?;
            c.close_write();
            let f = c.receive().map_err(err_text)?;
            if f.kind == FrameKind::Error && f.message == "short read" {
                Ok("error frame \"short read\"".into())
            } else {
                Err(format!(
                    "expected error frame \"short read\", got {:?} {:?}",
                    f.kind, f.message
                ))
            }
        });
    results.push(check("short_read", short));
    results
}
