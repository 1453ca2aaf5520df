//! Out-of-process model adapters.
//!
//! Each message is a frame:
//!
//! ```text
//! u32 LE   header length in bytes
//! [u8]     UTF-8 JSON header; "payload_len" gives the f32 count
//! [f32 LE] payload
//! ```
//!
//! Requests carry an `op` (`hello`, `generate`, `extract_latent`,
//! `compose_from`, `score`) and the shapes of their payload. Replies carry
//! `ok`, and either the shape of the returned tensor or an error `code`.
//! Gradients are never exchanged: adapter models are derivative-free.
//!
//! The client checks every reply against the shapes it expects and fails
//! with `ADAPTER_PROTOCOL_ERROR` on any mismatch, and with
//! `ADAPTER_TIMEOUT` when the peer does not answer in time.

mod client;
mod echo;
mod server;

pub use client::{AdapterClient, AdapterGenerator, AdapterScorer};
pub use echo::EchoGenerator;
pub use server::{serve, spawn, AdapterModels};

use std::io::{ErrorKind, Read, Write};

use paintword::{Error, Result};
use serde_json::Value;

pub const PROTOCOL_VERSION: u64 = 1;

/// Upper bound on header size, to reject garbage length prefixes early.
const MAX_HEADER: usize = 1 << 20;
const MAX_PAYLOAD: usize = 1 << 28;

pub fn protocol_error(msg: impl Into<String>) -> Error {
    Error::AdapterProtocol(msg.into())
}

fn io_error(e: std::io::Error) -> Error {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => Error::AdapterTimeout,
        ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::BrokenPipe => {
            protocol_error(format!("adapter connection closed: {e}"))
        }
        _ => Error::Io(e),
    }
}

/// Writes one frame. `header` gains a `payload_len` field.
pub fn write_frame(w: &mut impl Write, header: &Value, payload: &[f32]) -> Result<()> {
    let mut header = header.clone();
    header["payload_len"] = Value::from(payload.len());
    let bytes = serde_json::to_vec(&header).map_err(|e| protocol_error(e.to_string()))?;
    let mut buf = Vec::with_capacity(4 + bytes.len() + 4 * payload.len());
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&bytes);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_error)?;
    w.flush().map_err(io_error)
}

/// Reads one frame. `Ok(None)` on a clean end of stream before a frame.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(Value, Vec<f32>)>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(io_error(e)),
    }
    let n = u32::from_le_bytes(len) as usize;
    if n == 0 || n > MAX_HEADER {
        return Err(protocol_error(format!("header length {n} out of range")));
    }
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes).map_err(io_error)?;
    let header: Value = serde_json::from_slice(&bytes).map_err(|e| protocol_error(format!("bad header: {e}")))?;
    let count = header
        .get("payload_len")
        .and_then(Value::as_u64)
        .ok_or_else(|| protocol_error("header lacks payload_len"))? as usize;
    if count > MAX_PAYLOAD {
        return Err(protocol_error(format!("payload of {count} values is too large")));
    }
    let mut raw = vec![0u8; 4 * count];
    r.read_exact(&mut raw).map_err(io_error)?;
    let payload = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Some((header, payload)))
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        let header = serde_json::json!({ "op": "generate", "shape": [3] });
        write_frame(&mut buf, &header, &[1.0, -2.5, 3.25]).unwrap();
        let (h, p) = read_frame(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(h["op"], "generate");
        assert_eq!(h["payload_len"], 3);
        assert_eq!(p, vec![1.0, -2.5, 3.25]);
        assert!(read_frame(&mut [].as_slice()).unwrap().is_none());
    }

    #[test]
    fn truncated_payload_is_a_protocol_error() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &serde_json::json!({}), &[1.0, 2.0]).unwrap();
        buf.truncate(buf.len() - 2);
        let err = read_frame(&mut buf.as_slice()).unwrap_err();
        assert_eq!(err.code(), "ADAPTER_PROTOCOL_ERROR");
    }
}
