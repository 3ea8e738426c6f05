//! TCP transport. For each pair `i < j`, `P_j` dials `P_i`; the dialer
//! opens with a hello frame (tag 0, empty payload) that carries its party
//! index and the session id. One reader thread per peer drains the socket
//! into an [`Inbox`], so writes never stall on an unread peer.

use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::channel;
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{Frame, FrameHeader, FRAME_VERSION};
use super::transport::{Inbox, NetProfile, Transport};
use crate::error::{Error, Result};
use crate::sharing::PartyId;

const HELLO_TAG: u16 = 0;

pub struct SocketTransport {
    me: PartyId,
    streams: [Option<TcpStream>; 3],
    inbox: [Option<Inbox>; 3],
}

fn hello(me: PartyId, to: PartyId, session_id: u64) -> Frame {
    Frame {
        header: FrameHeader {
            version: FRAME_VERSION,
            session_id,
            protocol_tag: HELLO_TAG,
            round_index: 0,
            sender: me.index() as u8,
            receiver: to.index() as u8,
            payload_len: 0,
        },
        payload: Vec::new(),
    }
}

fn dial(addr: SocketAddr, deadline: Instant) -> Result<TcpStream> {
    loop {
        match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if Instant::now() >= deadline {
                    return Err(Error::Transport(format!("could not reach {addr}: {e}")));
                }
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

impl SocketTransport {
    /// Connects `me` to the two other parties. `addrs[i]` is `P_i`'s
    /// listening address; `listener` must already be bound to `addrs[me]`.
    pub fn connect(
        me: PartyId,
        addrs: [SocketAddr; 3],
        listener: TcpListener,
        session_id: u64,
        profile: NetProfile,
        timeout: Duration,
    ) -> Result<Self> {
        let deadline = Instant::now() + timeout;
        let mut streams: [Option<TcpStream>; 3] = Default::default();

        for lower in 0..me.index() {
            let peer = PartyId::new(lower)?;
            let mut s = dial(addrs[lower], deadline)?;
            hello(me, peer, session_id).write_to(&mut s)?;
            streams[lower] = Some(s);
        }

        let expected = 2 - me.index();
        listener.set_nonblocking(true)?;
        let mut accepted = 0;
        while accepted < expected {
            match listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_read_timeout(Some(timeout))?;
                    let f = Frame::read_from(&mut s)?
                        .ok_or_else(|| Error::Transport("peer closed before hello".into()))?;
                    let h = f.header;
                    if h.protocol_tag != HELLO_TAG || h.receiver as usize != me.index() {
                        return Err(Error::Session("malformed hello".into()));
                    }
                    if h.session_id != session_id {
                        return Err(Error::Session(format!(
                            "session id mismatch: peer {} vs local {session_id}",
                            h.session_id
                        )));
                    }
                    let sender = h.sender as usize;
                    if sender <= me.index() || sender > 2 || streams[sender].is_some() {
                        return Err(Error::Session(format!("unexpected hello from P{sender}")));
                    }
                    s.set_read_timeout(None)?;
                    streams[sender] = Some(s);
                    accepted += 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::Transport(format!(
                            "{me}: only {accepted} of {expected} peers connected"
                        )));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut inbox: [Option<Inbox>; 3] = Default::default();
        for (i, s) in streams.iter().enumerate() {
            let Some(s) = s else { continue };
            s.set_nodelay(true)?;
            let mut reader = s.try_clone()?;
            let (tx, rx) = channel();
            thread::Builder::new()
                .name(format!("{me}-rx-P{i}"))
                .spawn(move || loop {
                    match Frame::read_from(&mut reader) {
                        Ok(Some(f)) => {
                            if tx.send((Ok(f), Instant::now())).is_err() {
                                break;
                            }
                        }
                        Ok(None) => {
                            let _ = tx.send((
                                Err(Error::Transport(format!("P{i} closed the connection"))),
                                Instant::now(),
                            ));
                            break;
                        }
                        Err(e) => {
                            let _ = tx.send((Err(e), Instant::now()));
                            break;
                        }
                    }
                })?;
            inbox[i] = Some(Inbox::new(rx, profile));
        }

        Ok(Self { me, streams, inbox })
    }
}

impl Transport for SocketTransport {
    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()> {
        let s = self.streams[to.index()]
            .as_mut()
            .ok_or_else(|| Error::Transport(format!("{} has no link to {to}", self.me)))?;
        frame
            .write_to(s)
            .map_err(|e| Error::Transport(format!("send to {to}: {e}")))
    }

    fn recv(&mut self, from: PartyId, timeout: Duration) -> Result<Frame> {
        let me = self.me;
        self.inbox[from.index()]
            .as_mut()
            .ok_or_else(|| Error::Transport(format!("{me} has no link from {from}")))?
            .recv(from, timeout)
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        for s in self.streams.iter().flatten() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}
