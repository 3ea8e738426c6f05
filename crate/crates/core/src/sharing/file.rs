//! Share-at-rest files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field                        |
//! |-------|------------------------------|
//! | 5     | magic `PRSS1`                |
//! | 1     | holding party index          |
//! | 4     | rows (`u32`)                 |
//! | 4     | cols (`u32`)                 |
//! | 1     | element bits, always 64      |
//! | 8·r·c | `part_a` row-major `f64`     |
//! | 8·r·c | `part_b` row-major `f64`     |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{AdditiveShare, PartyId};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const SHARE_MAGIC: &[u8; 5] = b"PRSS1";
const HEADER_LEN: usize = 15;

pub fn encode_share(share: &AdditiveShare) -> Vec<u8> {
    let (r, c) = share.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * r * c);
    out.extend_from_slice(SHARE_MAGIC);
    out.push(share.owner.index() as u8);
    out.extend_from_slice(&(r as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.push(64);
    out.extend_from_slice(&share.part_a.to_le_bytes());
    out.extend_from_slice(&share.part_b.to_le_bytes());
    out
}

pub fn decode_share(bytes: &[u8]) -> Result<AdditiveShare> {
    if bytes.len() < HEADER_LEN || &bytes[..5] != SHARE_MAGIC {
        return Err(Error::Format("not a PRSS1 share file".into()));
    }
    let party = PartyId::new(bytes[5] as usize)
        .map_err(|_| Error::Format(format!("bad party byte {}", bytes[5])))?;
    let rows = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    if bytes[14] != 64 {
        return Err(Error::Format(format!(
            "unsupported element width {}",
            bytes[14]
        )));
    }
    let n = rows * cols * 8;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 2 * n {
        return Err(Error::Format(format!(
            "share body is {} bytes, expected {} for {rows}x{cols}",
            body.len(),
            2 * n
        )));
    }
    let part_a = Matrix::from_le_bytes(rows, cols, &body[..n])?;
    let part_b = Matrix::from_le_bytes(rows, cols, &body[n..])?;
    AdditiveShare::new(party, part_a, part_b)
}

pub fn write_share_file(path: impl AsRef<Path>, share: &AdditiveShare) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_share(share))?;
    Ok(())
}

pub fn read_share_file(path: impl AsRef<Path>) -> Result<AdditiveShare> {
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    decode_share(&bytes).map_err(|e| e.context(path.as_ref().display().to_string()))
}
