//! Point-to-point links between the three parties and the latency /
//! bandwidth model applied on the receiving side.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::frame::Frame;
use crate::error::{Error, Result};
use crate::sharing::PartyId;

/// Symmetric network model applied to every link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    pub rtt_ms: f64,
    /// `None` means unlimited.
    pub bandwidth_bps: Option<f64>,
}

impl Default for NetProfile {
    fn default() -> Self {
        Self::unlimited()
    }
}

impl NetProfile {
    pub fn unlimited() -> Self {
        Self {
            rtt_ms: 0.0,
            bandwidth_bps: None,
        }
    }

    /// 85 Gbps, 0.04 ms RTT.
    pub fn lan() -> Self {
        Self {
            rtt_ms: 0.04,
            bandwidth_bps: Some(85e9),
        }
    }

    /// 300 Mbps, 40 ms RTT.
    pub fn wan() -> Self {
        Self {
            rtt_ms: 40.0,
            bandwidth_bps: Some(300e6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtt_ms >= 0.0 && self.rtt_ms.is_finite()) {
            return Err(Error::Config(format!(
                "rtt must be a non-negative number, got {}",
                self.rtt_ms
            )));
        }
        if let Some(bw) = self.bandwidth_bps {
            if !(bw > 0.0) {
                return Err(Error::Config(format!(
                    "bandwidth must be positive, got {bw}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_instant(&self) -> bool {
        self.rtt_ms == 0.0 && self.bandwidth_bps.is_none()
    }

    fn serialization(&self, payload_bytes: usize) -> Duration {
        match self.bandwidth_bps {
            Some(bw) => Duration::from_secs_f64(payload_bytes as f64 * 8.0 / bw),
            None => Duration::ZERO,
        }
    }

    fn one_way(&self) -> Duration {
        Duration::from_secs_f64(self.rtt_ms / 2000.0)
    }
}

/// Receive-side shaping for one directed link. Frames queue behind each
/// other for serialization, then take `rtt / 2` to propagate.
#[derive(Debug)]
pub(crate) struct LinkShaper {
    profile: NetProfile,
    busy_until: Option<Instant>,
}

impl LinkShaper {
    pub(crate) fn new(profile: NetProfile) -> Self {
        Self {
            profile,
            busy_until: None,
        }
    }

    pub(crate) fn deliver_at(&mut self, arrival: Instant, payload_bytes: usize) -> Instant {
        let start = match self.busy_until {
            Some(b) if b > arrival => b,
            _ => arrival,
        };
        let done = start + self.profile.serialization(payload_bytes);
        self.busy_until = Some(done);
        done + self.profile.one_way()
    }

    pub(crate) fn wait(&mut self, arrival: Instant, payload_bytes: usize) {
        if self.profile.is_instant() {
            return;
        }
        let at = self.deliver_at(arrival, payload_bytes);
        let now = Instant::now();
        if at > now {
            thread::sleep(at - now);
        }
    }
}

pub(crate) type Envelope = (Result<Frame>, Instant);

/// Incoming side of one directed link.
pub(crate) struct Inbox {
    rx: Receiver<Envelope>,
    shaper: LinkShaper,
}

impl Inbox {
    pub(crate) fn new(rx: Receiver<Envelope>, profile: NetProfile) -> Self {
        Self {
            rx,
            shaper: LinkShaper::new(profile),
        }
    }

    pub(crate) fn recv(&mut self, from: PartyId, timeout: Duration) -> Result<Frame> {
        let (frame, arrival) = match self.rx.recv_timeout(timeout) {
            Ok(env) => env,
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Transport(format!("{from} disconnected")));
            }
        };
        let frame = frame?;
        self.shaper.wait(arrival, frame.payload.len());
        Ok(frame)
    }
}

/// Reliable, ordered, per-peer message delivery.
pub trait Transport: Send {
    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()>;
    fn recv(&mut self, from: PartyId, timeout: Duration) -> Result<Frame>;
}

/// Channel-backed transport for three parties in one process.
pub struct InProcessTransport {
    me: PartyId,
    out: [Option<Sender<Envelope>>; 3],
    inbox: [Option<Inbox>; 3],
}

impl InProcessTransport {
    /// Builds a fully connected mesh; element `i` belongs to `P_i`.
    pub fn mesh(profile: NetProfile) -> [InProcessTransport; 3] {
        let mut out: [[Option<Sender<Envelope>>; 3]; 3] = Default::default();
        let mut inbox: [[Option<Inbox>; 3]; 3] = Default::default();
        for from in 0..3 {
            for to in 0..3 {
                if from != to {
                    let (tx, rx) = channel();
                    out[from][to] = Some(tx);
                    inbox[to][from] = Some(Inbox::new(rx, profile));
                }
            }
        }
        let mut out = out.into_iter();
        let mut inbox = inbox.into_iter();
        PartyId::ALL.map(|me| InProcessTransport {
            me,
            out: out.next().expect("3 rows"),
            inbox: inbox.next().expect("3 rows"),
        })
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()> {
        let tx = self.out[to.index()]
            .as_ref()
            .ok_or_else(|| Error::Transport(format!("{} cannot send to itself", self.me)))?;
        tx.send((Ok(frame), Instant::now()))
            .map_err(|_| Error::Transport(format!("{to} disconnected")))
    }

    fn recv(&mut self, from: PartyId, timeout: Duration) -> Result<Frame> {
        let me = self.me;
        self.inbox[from.index()]
            .as_mut()
            .ok_or_else(|| Error::Transport(format!("{me} cannot receive from itself")))?
            .recv(from, timeout)
    }
}
