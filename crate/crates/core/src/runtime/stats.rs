use serde::{Deserialize, Serialize};

use super::ProtocolTag;

/// Element width used for all accounting.
pub const ELEMENT_BITS: u32 = 64;

/// Traffic of one top-level protocol invocation. Within a single party's
/// log, `bytes_total` is what that party sent; after [`combine`] it is the
/// sum over all three parties. Only matrix payload is counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub protocol_name: String,
    pub rounds: u32,
    pub bytes_total: u64,
    pub element_bits: u32,
}

impl RoundStats {
    pub fn new(tag: ProtocolTag) -> Self {
        Self {
            protocol_name: tag.name().to_string(),
            rounds: 0,
            bytes_total: 0,
            element_bits: ELEMENT_BITS,
        }
    }

    pub fn bits_total(&self) -> u64 {
        self.bytes_total * 8
    }

    /// Elements moved, i.e. bits / ℓ.
    pub fn elements(&self) -> u64 {
        self.bits_total() / u64::from(self.element_bits)
    }
}

/// Merges the three per-party logs of one session invocation-by-invocation:
/// bytes add up, rounds take the maximum.
pub fn combine(logs: [&[RoundStats]; 3]) -> Vec<RoundStats> {
    let n = logs.iter().map(|l| l.len()).max().unwrap_or(0);
    (0..n)
        .map(|i| {
            let entries: Vec<&RoundStats> = logs.iter().filter_map(|l| l.get(i)).collect();
            RoundStats {
                protocol_name: entries[0].protocol_name.clone(),
                rounds: entries.iter().map(|e| e.rounds).max().unwrap_or(0),
                bytes_total: entries.iter().map(|e| e.bytes_total).sum(),
                element_bits: ELEMENT_BITS,
            }
        })
        .collect()
}

/// Totals over a log: bytes summed, rounds summed (sequential composition).
pub fn totals(log: &[RoundStats]) -> (u64, u64) {
    log.iter().fold((0, 0), |(b, r), s| {
        (b + s.bytes_total, r + u64::from(s.rounds))
    })
}

/// One sent frame, as dumped to a JSON-lines log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub invocation: u64,
    pub protocol: String,
    pub protocol_tag: u16,
    pub round_index: u16,
    pub sender: u8,
    pub receiver: u8,
    pub payload_len: u32,
    pub payload_sha256: String,
}

/// Rebuilds per-invocation stats from frame records of any set of parties.
/// Invocations that moved no data do not appear in a frame log.
pub fn replay(records: &[FrameRecord]) -> Vec<RoundStats> {
    let mut by_inv: std::collections::BTreeMap<u64, RoundStats> = Default::default();
    for r in records {
        let e = by_inv.entry(r.invocation).or_insert_with(|| RoundStats {
            protocol_name: r.protocol.clone(),
            rounds: 0,
            bytes_total: 0,
            element_bits: ELEMENT_BITS,
        });
        e.bytes_total += u64::from(r.payload_len);
        e.rounds = e.rounds.max(u32::from(r.round_index) + 1);
    }
    by_inv.into_values().collect()
}

pub fn write_frame_log(w: &mut impl std::io::Write, records: &[FrameRecord]) -> crate::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_frame_log(r: impl std::io::BufRead) -> crate::Result<Vec<FrameRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
