//! Minimal protocol server around an in-process model. Serves the tests and
//! the `bridge-serve` CLI command.

use std::io::{Read, Write};

use super::frame::{read_frame, write_frame, Frame, FrameKind};
use super::BridgeError;
use crate::image::Image;

/// Model behind a server. An `Err` becomes an error frame and serving continues.
pub type ModelFn<'a> = dyn FnMut(&Image) -> Result<Image, String> + 'a;

/// Answers frames until the peer closes the stream. Malformed input gets an
/// error frame and ends the session; returns the number of requests served.
pub fn serve<R: Read, W: Write>(mut r: R, mut w: W, model: &mut ModelFn<'_>) -> Result<usize, BridgeError> {
    let mut served = 0;
    loop {
        let frame = match read_frame(&mut r) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(served),
            Err(BridgeError::Malformed(msg)) => {
                write_frame(&mut w, &Frame::error(msg.clone()))?;
                return Err(BridgeError::Malformed(msg));
            }
            Err(e) => return Err(e),
        };
        let reply = match frame.kind {
            FrameKind::Handshake => frame,
            FrameKind::Request => {
                served += 1;
                match frame.to_image() {
                    Err(e) => Frame::error(e.to_string()),
                    Ok(x) => match model(&x) {
                        Ok(out) => Frame::response(&out)?,
                        Err(msg) => Frame::error(msg),
                    },
                }
            }
            other => Frame::error(format!("unexpected {other:?} frame")),
        };
        write_frame(&mut w, &reply)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Dims;

    fn run(input: Vec<u8>, model: &mut ModelFn<'_>) -> (Result<usize, BridgeError>, Vec<Frame>) {
        let mut out = Vec::new();
        let res = serve(input.as_slice(), &mut out, model);
        let mut frames = Vec::new();
        let mut cursor = out.as_slice();
        while let Some(f) = read_frame(&mut cursor).unwrap() {
            frames.push(f);
        }
        (res, frames)
    }

    #[test]
    fn handshake_echo_and_errors() {
        let x = Image::new(Dims::new(1, 2, 1), vec![0.25, 0.5]).unwrap();
        let mut bad = Frame::request(&x).unwrap();
        bad.dims = [1, 1, 2];
        let input = [
            Frame::handshake().encode(),
            Frame::request(&x).unwrap().encode(),
            bad.encode(),
            Frame::request(&x).unwrap().encode(),
        ]
        .concat();
        let (res, frames) = run(input, &mut |x: &Image| Ok(x.clone()));
        assert_eq!(res, Ok(3));
        assert_eq!(frames[0], Frame::handshake());
        assert_eq!(frames[1].kind, FrameKind::Response);
        assert_eq!(frames[1].payload, vec![0.25, 0.5]);
        assert_eq!(frames[2].kind, FrameKind::Error);
        assert_eq!(frames[3].kind, FrameKind::Response);
    }

    #[test]
    fn truncated_request_gets_short_read() {
        let x = Image::zeros(Dims::new(2, 2, 1));
        let bytes = Frame::request(&x).unwrap().encode();
        let (res, frames) = run(bytes[..bytes.len() - 3].to_vec(), &mut |x: &Image| Ok(x.clone()));
        assert!(res.is_err());
        assert_eq!(frames, vec![Frame::error("short read")]);
    }

    #[test]
    fn model_failure_keeps_serving() {
        let x = Image::zeros(Dims::new(1, 1, 1));
        let input = [
            Frame::request(&x).unwrap().encode(),
            Frame::request(&x).unwrap().encode(),
        ]
        .concat();
        let mut calls = 0;
        let (res, frames) = run(input, &mut |x: &Image| {
            calls += 1;
            if calls == 1 {
                Err("boom".into())
            } else {
                Ok(x.clone())
            }
        });
        assert_eq!(res, Ok(2));
        assert_eq!(frames[0], Frame::error("boom"));
        assert_eq!(frames[1].kind, FrameKind::Response);
    }
}
