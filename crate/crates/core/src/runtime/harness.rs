//! Drivers that run the same party program on all three engines.

use std::net::{SocketAddr, TcpListener};
use std::thread;

use serde::{Deserialize, Serialize};

use super::socket::SocketTransport;
use super::transport::{InProcessTransport, Transport};
use super::{combine, RoundStats, Session, SessionConfig, SessionReport};
use crate::error::{Error, Result};
use crate::sharing::PartyId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    InProcess,
    Socket,
}

#[derive(Debug)]
pub struct PartyOutcome<T> {
    pub output: T,
    pub report: SessionReport,
}

/// Results of all three parties, indexed by party.
#[derive(Debug)]
pub struct Outcome<T> {
    pub parties: [PartyOutcome<T>; 3],
}

impl<T> Outcome<T> {
    pub fn outputs(&self) -> [&T; 3] {
        [0, 1, 2].map(|i| &self.parties[i].output)
    }

    pub fn into_outputs(self) -> [T; 3] {
        self.parties.map(|p| p.output)
    }

    /// Per-invocation traffic summed over the parties.
    pub fn combined_stats(&self) -> Vec<RoundStats> {
        combine([0, 1, 2].map(|i| self.parties[i].report.stats.as_slice()))
    }

    /// Combined stats with session setup and the closing checkpoint removed.
    pub fn protocol_stats(&self) -> Vec<RoundStats> {
        self.combined_stats()
            .into_iter()
            .filter(|s| s.protocol_name != "setup" && s.protocol_name != "checkpoint")
            .collect()
    }
}

/// Runs one party end to end: setup, `program`, checkpoint.
fn run_party<T, F>(
    me: PartyId,
    transport: Box<dyn Transport>,
    config: SessionConfig,
    seed: u64,
    program: &F,
) -> Result<PartyOutcome<T>>
where
    F: Fn(&mut Session) -> Result<T>,
{
    let mut sess = Session::establish(me, transport, config, seed)?;
    let output = program(&mut sess).map_err(|e| e.context(format!("{me}")))?;
    let report = sess.finish()?;
    Ok(PartyOutcome { output, report })
}

/// Picks the error to surface: a peer disconnect or timeout is usually the
/// echo of another party's failure, so prefer anything else.
fn first_cause(errs: Vec<Error>) -> Error {
    let is_echo = |e: &Error| matches!(e.root(), Error::Transport(_) | Error::Timeout(_));
    let idx = errs.iter().position(|e| !is_echo(e)).unwrap_or(0);
    errs.into_iter().nth(idx).expect("at least one error")
}

fn gather<T>(results: Vec<Result<PartyOutcome<T>>>) -> Result<Outcome<T>> {
    let mut ok = Vec::with_capacity(3);
    let mut errs = Vec::new();
    for r in results {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => errs.push(e),
        }
    }
    if !errs.is_empty() {
        return Err(first_cause(errs));
    }
    let parties: [PartyOutcome<T>; 3] = ok
        .try_into()
        .map_err(|_| Error::Session("missing party".into()))?;
    Ok(Outcome { parties })
}

/// Runs the three parties on threads connected by in-memory channels.
/// `seeds[i]` is the seed `P_i` contributes during setup.
pub fn run_inprocess<T, F>(
    config: &SessionConfig,
    seeds: [u64; 3],
    program: F,
) -> Result<Outcome<T>>
where
    T: Send,
    F: Fn(&mut Session) -> Result<T> + Sync,
{
    let transports = InProcessTransport::mesh(config.profile);
    let program = &program;
    let results: Vec<Result<PartyOutcome<T>>> = thread::scope(|scope| {
        let handles: Vec<_> = transports
            .into_iter()
            .zip(PartyId::ALL)
            .map(|(t, me)| {
                let cfg = config.clone();
                scope.spawn(move || run_party(me, Box::new(t), cfg, seeds[me.index()], program))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Session("party thread panicked".into())))
            })
            .collect()
    });
    gather(results)
}

/// Like [`run_inprocess`] but over TCP sockets on the loopback interface.
pub fn run_loopback_sockets<T, F>(
    config: &SessionConfig,
    seeds: [u64; 3],
    program: F,
) -> Result<Outcome<T>>
where
    T: Send,
    F: Fn(&mut Session) -> Result<T> + Sync,
{
    let mut listeners = Vec::with_capacity(3);
    for _ in 0..3 {
        listeners.push(TcpListener::bind("127.0.0.1:0")?);
    }
    let mut addrs = [SocketAddr::from(([127, 0, 0, 1], 0)); 3];
    for (a, l) in addrs.iter_mut().zip(&listeners) {
        *a = l.local_addr()?;
    }
    let program = &program;
    let results: Vec<Result<PartyOutcome<T>>> = thread::scope(|scope| {
        let handles: Vec<_> = listeners
            .into_iter()
            .zip(PartyId::ALL)
            .map(|(l, me)| {
                let cfg = config.clone();
                scope.spawn(move || run_socket_party(me, addrs, l, cfg, seeds[me.index()], program))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Session("party thread panicked".into())))
            })
            .collect()
    });
    gather(results)
}

/// Runs a single party over TCP; the other two run elsewhere.
pub fn run_socket_party<T, F>(
    me: PartyId,
    addrs: [SocketAddr; 3],
    listener: TcpListener,
    config: SessionConfig,
    seed: u64,
    program: &F,
) -> Result<PartyOutcome<T>>
where
    F: Fn(&mut Session) -> Result<T>,
{
    let transport = SocketTransport::connect(
        me,
        addrs,
        listener,
        config.session_id,
        config.profile,
        config.round_timeout,
    )?;
    run_party(me, Box::new(transport), config, seed, program)
}
