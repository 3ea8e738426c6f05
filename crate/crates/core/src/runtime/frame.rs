//! Wire frames.
//!
//! ```text
//! magic "PMLP" (4) | version (1) | session_id u64 (8) | protocol_tag u16 (2)
//! | round_index u16 (2) | sender (1) | receiver (1) | payload_len u32 (4) | payload
//! ```
//!
//! Integers are little-endian; the payload is a sequence of little-endian
//! `f64` values, so `payload_len` is always a multiple of 8.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const FRAME_MAGIC: &[u8; 4] = b"PMLP";
pub const FRAME_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub version: u8,
    pub session_id: u64,
    pub protocol_tag: u16,
    pub round_index: u16,
    pub sender: u8,
    pub receiver: u8,
    pub payload_len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: FrameHeader,
    pub payload: Vec<u8>,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(FRAME_MAGIC);
        b[4] = self.version;
        b[5..13].copy_from_slice(&self.session_id.to_le_bytes());
        b[13..15].copy_from_slice(&self.protocol_tag.to_le_bytes());
        b[15..17].copy_from_slice(&self.round_index.to_le_bytes());
        b[17] = self.sender;
        b[18] = self.receiver;
        b[19..23].copy_from_slice(&self.payload_len.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if &b[0..4] != FRAME_MAGIC {
            return Err(Error::Format(format!("bad frame magic {:?}", &b[0..4])));
        }
        let h = FrameHeader {
            version: b[4],
            session_id: u64::from_le_bytes(b[5..13].try_into().expect("8 bytes")),
            protocol_tag: u16::from_le_bytes(b[13..15].try_into().expect("2 bytes")),
            round_index: u16::from_le_bytes(b[15..17].try_into().expect("2 bytes")),
            sender: b[17],
            receiver: b[18],
            payload_len: u32::from_le_bytes(b[19..23].try_into().expect("4 bytes")),
        };
        if h.version != FRAME_VERSION {
            return Err(Error::Session(format!(
                "frame version mismatch: got {}, expected {FRAME_VERSION}",
                h.version
            )));
        }
        if h.payload_len % 8 != 0 {
            return Err(Error::Format(format!(
                "payload length {} not a multiple of 8",
                h.payload_len
            )));
        }
        Ok(h)
    }
}

impl Frame {
    pub fn with_matrix(mut header: FrameHeader, m: &Matrix) -> Self {
        let payload = m.to_le_bytes();
        header.payload_len = payload.len() as u32;
        Frame { header, payload }
    }

    pub fn with_words(mut header: FrameHeader, words: &[u64]) -> Self {
        let payload: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        header.payload_len = payload.len() as u32;
        Frame { header, payload }
    }

    pub fn matrix(&self, rows: usize, cols: usize) -> Result<Matrix> {
        Matrix::from_le_bytes(rows, cols, &self.payload)
    }

    pub fn words(&self) -> Vec<u64> {
        self.payload
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    }

    pub fn payload_sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.payload))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header.encode());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.header.encode())?;
        w.write_all(&self.payload)?;
        w.flush()
    }

    /// Reads one frame; `Ok(None)` on clean end-of-stream before a header.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Frame>> {
        let mut hb = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            let n = r.read(&mut hb[filled..])?;
            if n == 0 {
                if filled == 0 {
                    return Ok(None);
                }
                return Err(Error::Transport(
                    "stream closed inside a frame header".into(),
                ));
            }
            filled += n;
        }
        let header = FrameHeader::decode(&hb)?;
        let mut payload = vec![0u8; header.payload_len as usize];
        r.read_exact(&mut payload)?;
        Ok(Some(Frame { header, payload }))
    }
}
