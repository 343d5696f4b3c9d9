//! Length-prefixed frames: a big-endian `u32` payload length, one version
//! byte, then a JSON document.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;
pub const MAX_FRAME: usize = 64 << 20;
const HEADER: usize = 5;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(usize),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error("connection closed")]
    Closed,
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn encode<T: Serialize>(msg: &T) -> Result<Vec<u8>, FrameError> {
    let payload = serde_json::to_vec(msg)?;
    if payload.len() > MAX_FRAME {
        return Err(FrameError::Oversized(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.push(PROTOCOL_VERSION);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<(T, usize), FrameError> {
    if bytes.len() < HEADER {
        return Err(if bytes.is_empty() {
            FrameError::Closed
        } else {
            FrameError::Truncated
        });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::Oversized(len));
    }
    if bytes[4] != PROTOCOL_VERSION {
        return Err(FrameError::Version(bytes[4]));
    }
    let payload = bytes.get(HEADER..HEADER + len).ok_or(FrameError::Truncated)?;
    Ok((serde_json::from_slice(payload)?, HEADER + len))
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> Result<(), FrameError> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], at_start: bool) -> Result<(), FrameError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 && at_start => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn read_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> Result<T, FrameError> {
    let mut header = [0u8; HEADER];
    read_exact_or(r, &mut header, true)?;
    let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::Oversized(len));
    }
    if header[4] != PROTOCOL_VERSION {
        return Err(FrameError::Version(header[4]));
    }
    let mut payload = vec![0u8; len];
    read_exact_or(r, &mut payload, false)?;
    Ok(serde_json::from_slice(&payload)?)
}
