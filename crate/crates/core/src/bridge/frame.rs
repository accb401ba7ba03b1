use std::io::{ErrorKind, Read, Write};

use super::BridgeError;
use crate::image::{Dims, Image};

pub const MAGIC: &[u8; 4] = b"VSTB";
pub const HEADER_LEN: usize = 17;
/// Upper bound on error message bytes accepted from the wire.
pub const MAX_MESSAGE_LEN: u32 = 1 << 20;
const MAX_SAMPLES: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    Request = 0,
    Response = 1,
    Error = 2,
    Handshake = 3,
}

impl FrameKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => FrameKind::Request,
            1 => FrameKind::Response,
            2 => FrameKind::Error,
            3 => FrameKind::Handshake,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub dims: [u32; 3],
    pub payload: Vec<f32>,
    pub message: String,
}

impl Frame {
    pub fn request(x: &Image) -> Result<Frame, BridgeError> {
        Self::with_image(FrameKind::Request, x)
    }

    pub fn response(x: &Image) -> Result<Frame, BridgeError> {
        Self::with_image(FrameKind::Response, x)
    }

    fn with_image(kind: FrameKind, x: &Image) -> Result<Frame, BridgeError> {
        let d = x.dims();
        let to_u32 =
            |v: usize| u32::try_from(v).map_err(|_| BridgeError::Malformed(format!("dimension {v} exceeds u32")));
        Ok(Frame {
            kind,
            dims: [to_u32(d.height)?, to_u32(d.width)?, to_u32(d.channels)?],
            payload: x.data().iter().map(|&v| v as f32).collect(),
            message: String::new(),
        })
    }

    pub fn error(message: impl Into<String>) -> Frame {
        Frame {
            kind: FrameKind::Error,
            dims: [0; 3],
            payload: Vec::new(),
            message: message.into(),
        }
    }

    pub fn handshake() -> Frame {
        Frame {
            kind: FrameKind::Handshake,
            dims: [0; 3],
            payload: Vec::new(),
            message: String::new(),
        }
    }

    pub fn image_dims(&self) -> Dims {
        Dims::new(self.dims[0] as usize, self.dims[1] as usize, self.dims[2] as usize)
    }

    /// Payload as an image; fails for frame dims that are not a valid image.
    pub fn to_image(&self) -> Result<Image, BridgeError> {
        Image::new(self.image_dims(), self.payload.iter().map(|&v| v as f64).collect())
            .map_err(|e| BridgeError::Malformed(e.to_string()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.payload.len() + 4 + self.message.len());
        out.extend_from_slice(MAGIC);
        out.push(self.kind as u8);
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match self.kind {
            FrameKind::Request | FrameKind::Response => {
                for v in &self.payload {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            FrameKind::Error => {
                out.extend_from_slice(&(self.message.len() as u32).to_le_bytes());
                out.extend_from_slice(self.message.as_bytes());
            }
            FrameKind::Handshake => {}
        }
        out
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), BridgeError> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// Fills `buf` completely. `Ok(false)` means EOF before the first byte.
fn fill<R: Read>(r: &mut R, buf: &mut [u8], at_boundary: bool) -> Result<bool, BridgeError> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 && at_boundary => return Ok(false),
            Ok(0) => return Err(BridgeError::Malformed("short read".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Reads one frame. `Ok(None)` is a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, BridgeError> {
    let mut header = [0u8; HEADER_LEN];
    if !fill(r, &mut header, true)? {
        return Ok(None);
    }
    if &header[..4] != MAGIC {
        return Err(BridgeError::Malformed(format!("bad magic {:02x?}", &header[..4])));
    }
    let kind = FrameKind::from_byte(header[4])
        .ok_or_else(|| BridgeError::Malformed(format!("unknown message type {}", header[4])))?;
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    let dims = [u32_at(5), u32_at(9), u32_at(13)];
    let mut frame = Frame {
        kind,
        dims,
        payload: Vec::new(),
        message: String::new(),
    };
    match kind {
        FrameKind::Request | FrameKind::Response => {
            let n = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .filter(|&n| n <= MAX_SAMPLES)
                .ok_or_else(|| BridgeError::Malformed(format!("payload for dims {dims:?} is too large")))?;
            let mut bytes = vec![0u8; 4 * n as usize];
            fill(r, &mut bytes, false)?;
            frame.payload = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
        }
        FrameKind::Error => {
            let mut len = [0u8; 4];
            fill(r, &mut len, false)?;
            let len = u32::from_le_bytes(len);
            if len > MAX_MESSAGE_LEN {
                return Err(BridgeError::Malformed(format!(
                    "error message of {len} bytes is too long"
                )));
            }
            let mut bytes = vec![0u8; len as usize];
            fill(r, &mut bytes, false)?;
            frame.message =
                String::from_utf8(bytes).map_err(|_| BridgeError::Malformed("error message is not UTF-8".into()))?;
        }
        FrameKind::Handshake => {}
    }
    Ok(Some(frame))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_bytes_are_exact() {
        let x = Image::new(Dims::new(1, 2, 1), vec![1.0, -0.5]).unwrap();
        let bytes = Frame::request(&x).unwrap().encode();
        let want: Vec<u8> = [
            &b"VSTB"[..],
            &[0],
            &[1, 0, 0, 0],
            &[2, 0, 0, 0],
            &[1, 0, 0, 0],
            &[0x00, 0x00, 0x80, 0x3f],
            &[0x00, 0x00, 0x00, 0xbf],
        ]
        .concat();
        assert_eq!(bytes, want);
    }

    #[test]
    fn error_and_handshake_bytes() {
        let e = Frame::error("no").encode();
        assert_eq!(hex::encode(&e), "5653544202000000000000000000000000020000006e6f");
        let h = Frame::handshake().encode();
        assert_eq!(hex::encode(&h), "5653544203000000000000000000000000");
    }

    #[test]
    fn round_trip_keeps_bits() {
        let special = [
            0.0f32,
            -0.0,
            f32::MIN_POSITIVE / 8.0,
            f32::MAX,
            f32::NAN,
            f32::INFINITY,
            1e-45,
        ];
        let frame = Frame {
            kind: FrameKind::Response,
            dims: [1, special.len() as u32, 1],
            payload: special.to_vec(),
            message: String::new(),
        };
        let bytes = frame.encode();
        let back = read_frame(&mut bytes.as_slice()).unwrap().unwrap();
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.payload), bits(&special));
        for f in [Frame::error("überlastet"), Frame::handshake()] {
            assert_eq!(read_frame(&mut f.encode().as_slice()).unwrap().unwrap(), f);
        }
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(read_frame(&mut &[][..]).unwrap(), None);
        let good = Frame::request(&Image::zeros(Dims::new(2, 2, 1))).unwrap().encode();
        let short = read_frame(&mut &good[..good.len() - 1]).unwrap_err();
        assert_eq!(short, BridgeError::Malformed("short read".into()));
        assert!(matches!(read_frame(&mut &good[..5]), Err(BridgeError::Malformed(_))));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_frame(&mut bad.as_slice()),
            Err(BridgeError::Malformed(_))
        ));
        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            read_frame(&mut bad.as_slice()),
            Err(BridgeError::Malformed(_))
        ));
        let mut huge = Frame::handshake().encode();
        huge[4] = 0;
        huge[5..17].copy_from_slice(&[0xff; 12]);
        assert!(matches!(
            read_frame(&mut huge.as_slice()),
            Err(BridgeError::Malformed(_))
        ));
    }
}
