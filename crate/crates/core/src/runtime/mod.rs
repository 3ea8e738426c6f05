//! Three-party session runtime.
//!
//! Every protocol is written from one party's point of view and runs on all
//! three engines in lockstep. A top-level [`Session::invoke`] opens an
//! accounting scope; each [`Session::exchange`] inside it is one round:
//! the party sends all of its messages for the round, then blocks until the
//! messages it expects for that same round arrive. Frames carry the
//! invocation's protocol tag and round index, and a frame from any other
//! round is rejected on receipt.

mod frame;
mod harness;
mod socket;
mod stats;
mod transport;

pub use frame::{Frame, FrameHeader, FRAME_MAGIC, FRAME_VERSION, HEADER_LEN};
pub use harness::{
    run_inprocess, run_loopback_sockets, run_socket_party, Outcome, PartyOutcome, TransportMode,
};
pub use socket::SocketTransport;
pub use stats::{
    combine, read_frame_log, replay, totals, write_frame_log, FrameRecord, RoundStats, ELEMENT_BITS,
};
pub use transport::{InProcessTransport, NetProfile, Transport};

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sharing::{PartyContext, PartyId, RevealPurpose};
use crate::tensor::{Matrix, PrgSeed, RandomRange};

/// Identifies the top-level protocol a frame belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u16)]
pub enum ProtocolTag {
    Setup = 1,
    Share = 2,
    Reconstruct = 3,
    ReconstructMul = 4,
    ScalarMul = 5,
    Hadamard = 6,
    MatMul = 7,
    Add2Mul = 8,
    Mul2Add = 9,
    Relu = 10,
    Softmax = 11,
    Reshare = 12,
    Checkpoint = 13,
}

impl ProtocolTag {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolTag::Setup => "setup",
            ProtocolTag::Share => "share",
            ProtocolTag::Reconstruct => "reconstruct",
            ProtocolTag::ReconstructMul => "reconstruct_mul",
            ProtocolTag::ScalarMul => "scalar_mul",
            ProtocolTag::Hadamard => "hadamard",
            ProtocolTag::MatMul => "matmul",
            ProtocolTag::Add2Mul => "add2mul",
            ProtocolTag::Mul2Add => "mul2add",
            ProtocolTag::Relu => "relu",
            ProtocolTag::Softmax => "softmax",
            ProtocolTag::Reshare => "reshare",
            ProtocolTag::Checkpoint => "checkpoint",
        }
    }
}

/// Session-wide parameters; all three parties must agree on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: u64,
    /// Range of the `r_i` behind every zero-sharing.
    pub randomness: RandomRange,
    /// Zero-sharing range used inside softmax. Softmax outputs can be tiny,
    /// so its masks must be narrow to keep relative error small.
    pub softmax_randomness: RandomRange,
    /// Magnitude bounds of PRG-drawn multiplicative parts.
    pub mult_magnitude: (f64, f64),
    /// Largest additive part magnitude that softmax will exponentiate.
    pub exp_guard: f64,
    pub round_timeout: Duration,
    pub profile: NetProfile,
    pub record_frames: bool,
}

/// Default half-width of the zero-sharing range.
pub const DEFAULT_RANDOMNESS_HALF_WIDTH: f64 = 64.0;
/// Default half-width of the zero-sharing range inside softmax, and of the
/// reshare that precedes it.
pub const DEFAULT_SOFTMAX_HALF_WIDTH: f64 = 2.0;

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            session_id: 1,
            randomness: RandomRange::symmetric(DEFAULT_RANDOMNESS_HALF_WIDTH).expect("valid"),
            softmax_randomness: RandomRange::symmetric(DEFAULT_SOFTMAX_HALF_WIDTH).expect("valid"),
            mult_magnitude: (0.5, 2.0),
            exp_guard: 700.0,
            round_timeout: Duration::from_secs(30),
            profile: NetProfile::unlimited(),
            record_frames: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.randomness.validate()?;
        self.softmax_randomness.validate()?;
        self.profile.validate()?;
        let (lo, hi) = self.mult_magnitude;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "multiplicative magnitudes [{lo}, {hi}] invalid"
            )));
        }
        if !(self.exp_guard > 0.0 && self.exp_guard < 709.0) {
            return Err(Error::Config(format!(
                "exp guard {} must be in (0, 709)",
                self.exp_guard
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealRecord {
    pub purpose: RevealPurpose,
    pub targets: Vec<PartyId>,
    pub shape: (usize, usize),
}

/// What a party keeps after a session closes.
#[derive(Debug, Clone, Default)]
pub struct SessionReport {
    pub stats: Vec<RoundStats>,
    pub frames: Vec<FrameRecord>,
    pub reveals: Vec<RevealRecord>,
}

struct Scope {
    tag: ProtocolTag,
    stats: RoundStats,
    round: u16,
}

/// One party's protocol engine.
pub struct Session {
    ctx: PartyContext,
    transport: Box<dyn Transport>,
    config: SessionConfig,
    depth: u32,
    scope: Option<Scope>,
    invocation: u64,
    log: Vec<RoundStats>,
    frames: Vec<FrameRecord>,
    reveals: Vec<RevealRecord>,
}

impl Session {
    /// Runs seed setup over `transport`: `P_i` sends its own seed `s_i` to
    /// `P_{i-1}` and receives `s_{i+1}` from `P_{i+1}`.
    pub fn establish(
        me: PartyId,
        transport: Box<dyn Transport>,
        config: SessionConfig,
        own_seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut sess = Session {
            ctx: PartyContext {
                id: me,
                seed_prev: PrgSeed::new(own_seed),
                seed_next: PrgSeed::new(0),
                randomness_range: config.randomness,
            },
            transport,
            config,
            depth: 0,
            scope: None,
            invocation: 0,
            log: Vec::new(),
            frames: Vec::new(),
            reveals: Vec::new(),
        };
        let next_seed = sess.invoke(ProtocolTag::Setup, |s| {
            let got = s.exchange_words(&[(me.prev(), vec![own_seed])], &[(me.next(), 1)])?;
            Ok(got[0][0])
        })?;
        sess.ctx.seed_next = PrgSeed::new(next_seed);
        Ok(sess)
    }

    pub fn id(&self) -> PartyId {
        self.ctx.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn ctx(&self) -> &PartyContext {
        &self.ctx
    }

    pub fn ctx_mut(&mut self) -> &mut PartyContext {
        &mut self.ctx
    }

    /// Completed top-level invocations, this party's bytes only.
    pub fn stats_log(&self) -> &[RoundStats] {
        &self.log
    }

    pub fn last_stats(&self) -> Option<&RoundStats> {
        self.log.last()
    }

    pub fn frame_log(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn reveals(&self) -> &[RevealRecord] {
        &self.reveals
    }

    pub(crate) fn record_reveal(
        &mut self,
        purpose: RevealPurpose,
        targets: Vec<PartyId>,
        shape: (usize, usize),
    ) {
        self.reveals.push(RevealRecord {
            purpose,
            targets,
            shape,
        });
    }

    /// Runs `f` with zero-sharings drawn from `range` instead of the
    /// session range.
    pub fn with_randomness<T>(
        &mut self,
        range: RandomRange,
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        let saved = std::mem::replace(&mut self.ctx.randomness_range, range);
        let out = f(self);
        self.ctx.randomness_range = saved;
        out
    }

    /// Runs `f` inside an accounting scope. Nested calls are attributed to
    /// the outermost scope.
    pub fn invoke<T>(
        &mut self,
        tag: ProtocolTag,
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        if self.depth == 0 {
            self.invocation += 1;
            self.scope = Some(Scope {
                tag,
                stats: RoundStats::new(tag),
                round: 0,
            });
        }
        self.depth += 1;
        let out = f(self);
        self.depth -= 1;
        if self.depth == 0 {
            let scope = self.scope.take().expect("scope open at depth 0");
            if out.is_ok() {
                self.log.push(scope.stats);
            }
        }
        out
    }

    /// One communication round carrying matrices.
    pub(crate) fn exchange(
        &mut self,
        sends: &[(PartyId, &Matrix)],
        recvs: &[(PartyId, (usize, usize))],
    ) -> Result<Vec<Matrix>> {
        let out: Vec<(PartyId, Vec<u8>)> =
            sends.iter().map(|(to, m)| (*to, m.to_le_bytes())).collect();
        let want: Vec<(PartyId, usize)> = recvs
            .iter()
            .map(|(from, (r, c))| (*from, r * c * 8))
            .collect();
        let raw = self.round_trip(out, &want)?;
        raw.into_iter()
            .zip(recvs)
            .map(|(bytes, (from, (r, c)))| {
                Matrix::from_le_bytes(*r, *c, &bytes).map_err(|e| {
                    Error::Protocol(format!("payload from {from} does not match {r}x{c}: {e}"))
                })
            })
            .collect()
    }

    pub(crate) fn exchange_words(
        &mut self,
        sends: &[(PartyId, Vec<u64>)],
        recvs: &[(PartyId, usize)],
    ) -> Result<Vec<Vec<u64>>> {
        let out = sends
            .iter()
            .map(|(to, w)| (*to, w.iter().flat_map(|x| x.to_le_bytes()).collect()))
            .collect();
        let want: Vec<(PartyId, usize)> = recvs.iter().map(|(from, n)| (*from, n * 8)).collect();
        let raw = self.round_trip(out, &want)?;
        Ok(raw
            .into_iter()
            .map(|b| {
                b.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            })
            .collect())
    }

    fn round_trip(
        &mut self,
        sends: Vec<(PartyId, Vec<u8>)>,
        recvs: &[(PartyId, usize)],
    ) -> Result<Vec<Vec<u8>>> {
        let me = self.ctx.id;
        let session_id = self.config.session_id;
        let timeout = self.config.round_timeout;
        let record = self.config.record_frames;
        let invocation = self.invocation;
        let scope = self
            .scope
            .as_mut()
            .ok_or_else(|| Error::Protocol("communication outside an invocation".into()))?;
        let (tag, round) = (scope.tag, scope.round);

        for (to, payload) in sends {
            let frame = Frame {
                header: FrameHeader {
                    version: FRAME_VERSION,
                    session_id,
                    protocol_tag: tag as u16,
                    round_index: round,
                    sender: me.index() as u8,
                    receiver: to.index() as u8,
                    payload_len: payload.len() as u32,
                },
                payload,
            };
            scope.stats.bytes_total += frame.payload.len() as u64;
            if record {
                self.frames.push(FrameRecord {
                    invocation,
                    protocol: tag.name().to_string(),
                    protocol_tag: tag as u16,
                    round_index: round,
                    sender: me.index() as u8,
                    receiver: to.index() as u8,
                    payload_len: frame.header.payload_len,
                    payload_sha256: frame.payload_sha256(),
                });
            }
            self.transport.send(to, frame)?;
        }

        let mut got = Vec::with_capacity(recvs.len());
        for &(from, len) in recvs {
            let f = self.transport.recv(from, timeout)?;
            let h = f.header;
            if h.session_id != session_id {
                return Err(Error::Session(format!(
                    "frame from session {} in session {session_id}",
                    h.session_id
                )));
            }
            if h.sender as usize != from.index() || h.receiver as usize != me.index() {
                return Err(Error::Protocol(format!(
                    "misrouted frame P{} -> P{} on link {from} -> {me}",
                    h.sender, h.receiver
                )));
            }
            if h.protocol_tag != tag as u16 || h.round_index != round {
                return Err(Error::Protocol(format!(
                    "round barrier violated: expected {} round {round}, got tag {} round {}",
                    tag.name(),
                    h.protocol_tag,
                    h.round_index
                )));
            }
            if f.payload.len() != len {
                return Err(Error::Protocol(format!(
                    "{from} sent {} payload bytes, expected {len}",
                    f.payload.len()
                )));
            }
            got.push(f.payload);
        }

        scope.round = round
            .checked_add(1)
            .ok_or_else(|| Error::Protocol("round index overflow".into()))?;
        scope.stats.rounds = u32::from(scope.round);
        Ok(got)
    }

    /// Exchanges seed counters with both neighbours and closes the session.
    /// A mismatch means the two holders of a seed drew different amounts.
    pub fn finish(mut self) -> Result<SessionReport> {
        let me = self.ctx.id;
        let own = self.ctx.seed_prev.counter;
        let expect_next = self.ctx.seed_next.counter;
        let got = self.invoke(ProtocolTag::Checkpoint, |s| {
            s.exchange_words(&[(me.prev(), vec![own])], &[(me.next(), 1)])
        })?;
        if got[0][0] != expect_next {
            return Err(Error::Integrity(format!(
                "seed counter desync between {me} and {}: {} vs {}",
                me.next(),
                expect_next,
                got[0][0]
            )));
        }
        Ok(SessionReport {
            stats: std::mem::take(&mut self.log),
            frames: std::mem::take(&mut self.frames),
            reveals: std::mem::take(&mut self.reveals),
        })
    }
}
