//! Frames are a 4-byte big-endian length followed by a JSON message.

use std::io::{ErrorKind, Read, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use zkml_core::argument::Proof;

use crate::ProtocolError;

/// Largest frame either side accepts.
pub const MAX_FRAME: usize = 256 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    Tokens(Vec<usize>),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub model_id: String,
    pub input: Input,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub model_id: String,
    /// Outputs as fixed-point integers.
    pub output: Vec<i64>,
    /// Serialized proof, base64.
    pub proof: String,
}

impl InferenceResponse {
    pub fn new(model_id: &str, output: Vec<i64>, proof: &Proof) -> Self {
        Self { model_id: model_id.into(), output, proof: B64.encode(proof.to_bytes()) }
    }

    pub fn proof_bytes(&self) -> Result<Vec<u8>, ProtocolError> {
        B64.decode(&self.proof).map_err(|e| ProtocolError::Wire(format!("proof is not base64: {}", e)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Request(InferenceRequest),
    Response(InferenceResponse),
    Error { message: String },
}

pub fn write_message(w: &mut impl Write, m: &Message) -> Result<(), ProtocolError> {
    let body = serde_json::to_vec(m)?;
    if body.len() > MAX_FRAME {
        return Err(ProtocolError::Wire(format!("message of {} bytes exceeds frame limit", body.len())));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// `None` on a clean end of stream before a frame starts.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>, ProtocolError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(ProtocolError::Wire(format!("frame of {} bytes exceeds limit", n)));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body).map(Some).map_err(|e| ProtocolError::Wire(format!("bad message: {}", e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            Message::Request(InferenceRequest {
                model_id: "m".into(),
                input: Input::Tokens(vec![1, 2]),
                k: 30,
            }),
            Message::Request(InferenceRequest {
                model_id: "m".into(),
                input: Input::Values(vec![0.5]),
                k: 1,
            }),
            Message::Error { message: "unknown model".into() },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let first = serde_json::to_vec(&msgs[0]).unwrap();
        assert_eq!(buf[..4], (first.len() as u32).to_be_bytes());
        assert_eq!(buf[4..4 + first.len()], first[..]);
        let mut r = buf.as_slice();
        for m in &msgs {
            assert_eq!(read_message(&mut r).unwrap().as_ref(), Some(m));
        }
        assert!(read_message(&mut r).unwrap().is_none());
    }

    #[test]
    fn bad_frames() {
        let mut r: &[u8] = &[0, 0, 0, 5, b'{'];
        assert!(read_message(&mut r).is_err());
        let mut r: &[u8] = &[0, 0, 0, 2, b'{', b'}'];
        assert!(matches!(read_message(&mut r), Err(ProtocolError::Wire(_))));
        let mut r: &[u8] = &[0xff, 0xff, 0xff, 0xff];
        assert!(matches!(read_message(&mut r), Err(ProtocolError::Wire(_))));
    }
}
