//! One-way tunnels over TCP and UDP.
//!
//! The sender reads a byte source, encodes it with the configured shaping
//! policy and writes the channel output to the socket; the receiver decodes
//! socket input and writes plaintext to a byte sink. The wire carries
//! exactly the channel's output, nothing else.
//!
//! Idle handling sits outside the channel model. When the source stalls for
//! `idle`, a stream sender under `fixed:P` writes a padding unit of `P`
//! bytes, and other policies flush anything still buffered. A datagram
//! sender sends a null datagram of the current target size. A datagram
//! receiver exits once it has seen no datagram for `idle`.
//!
//! UDP has no flow control, so the datagram sender pauses for
//! [`DGRAM_PAUSE`] after every [`DGRAM_BURST`] datagrams to let a loopback
//! receiver keep up.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs, UdpSocket};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context};
use fep_core::aead::AeadKey;
use fep_core::channel::{DgramMessage, DgramRecvOutcome, ShapeRequest};
use fep_core::dgram::{dgram_recv, dgram_send, DgramConfig};
use fep_core::rng::os_rng;
use fep_core::{StreamReceiver, StreamSender};
use serde::{Deserialize, Serialize};

use crate::config::{Endpoint, Mode, Role, ShapePolicy, TunnelConfig};

const READ_CHUNK: usize = 16 * 1024;

pub const DGRAM_BURST: usize = 32;
pub const DGRAM_PAUSE: Duration = Duration::from_millis(1);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TunnelStats {
    pub plaintext_bytes: u64,
    pub wire_bytes: u64,
    /// Sizes of socket writes (stream sender) or datagrams (datagram
    /// sender and receiver), with counts.
    pub unit_sizes: BTreeMap<usize, u64>,
    pub null_datagrams: u64,
    pub error_datagrams: u64,
    /// The stream receiver entered its silent failure state.
    pub failed: bool,
}

impl TunnelStats {
    fn unit(&mut self, len: usize) {
        *self.unit_sizes.entry(len).or_default() += 1;
        self.wire_bytes += len as u64;
    }
}

/// Records the size of every successful `write` on the inner writer.
pub struct AuditWriter<W> {
    inner: W,
    pub sizes: BTreeMap<usize, u64>,
}

impl<W: Write> AuditWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, sizes: BTreeMap::new() }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> Write for AuditWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        if n > 0 {
            *self.sizes.entry(n).or_default() += 1;
        }
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Reads `input` on its own thread so the sender can notice idle periods.
/// The channel disconnects at end of input.
fn spawn_reader(mut input: Box<dyn Read + Send>, chunk: usize) -> Receiver<io::Result<Vec<u8>>> {
    let (tx, rx) = mpsc::sync_channel(4);
    thread::spawn(move || {
        let mut buf = vec![0u8; chunk];
        loop {
            match input.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    if tx.send(Ok(buf[..n].to_vec())).is_err() {
                        break;
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

struct Targets<'a> {
    policy: &'a ShapePolicy,
    next: usize,
}

impl Targets<'_> {
    fn next(&mut self) -> ShapeRequest {
        match self.policy {
            ShapePolicy::Off => ShapeRequest::unshaped(),
            ShapePolicy::Fixed(p) => ShapeRequest::exact(*p as i64),
            ShapePolicy::Schedule(steps) => {
                let (p, f) = steps[self.next % steps.len()];
                self.next += 1;
                ShapeRequest::new(p, f)
            }
        }
    }
}

fn emit(out: &mut impl Write, c: &[u8], stats: &mut TunnelStats) -> io::Result<()> {
    if !c.is_empty() {
        out.write_all(c)?;
        out.flush()?;
        stats.wire_bytes += c.len() as u64;
    }
    Ok(())
}

/// Stream sender loop. Under `fixed:P` every write is exactly `P` bytes,
/// including the writes that drain the backlog at end of input.
pub fn stream_send<W: Write>(
    sender: &mut StreamSender,
    input: Box<dyn Read + Send>,
    out: W,
    policy: &ShapePolicy,
    idle: Duration,
) -> anyhow::Result<TunnelStats> {
    let mut out = AuditWriter::new(out);
    let mut stats = TunnelStats::default();
    let mut targets = Targets { policy, next: 0 };
    let rx = spawn_reader(input, READ_CHUNK);
    let fixed = match policy {
        ShapePolicy::Fixed(p) => Some(*p),
        _ => None,
    };
    let buffered = |s: &StreamSender| s.buffered_plaintext() + s.buffered_ciphertext();
    loop {
        // Keep the backlog below one unit before taking more input.
        if let Some(p) = fixed {
            if sender.buffered_plaintext() > 0 || sender.buffered_ciphertext() >= p {
                let c = sender.send(&[], targets.next())?;
                emit(&mut out, &c, &mut stats)?;
                continue;
            }
        }
        match rx.recv_timeout(idle) {
            Ok(chunk) => {
                let chunk = chunk.context("reading input")?;
                stats.plaintext_bytes += chunk.len() as u64;
                let c = sender.send(&chunk, targets.next())?;
                emit(&mut out, &c, &mut stats)?;
            }
            Err(RecvTimeoutError::Timeout) => {
                if fixed.is_some() {
                    let c = sender.send(&[], targets.next())?;
                    emit(&mut out, &c, &mut stats)?;
                } else if buffered(sender) > 0 {
                    let mut shape = targets.next();
                    shape.flush = true;
                    let c = sender.send(&[], shape)?;
                    emit(&mut out, &c, &mut stats)?;
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    while buffered(sender) > 0 {
        let mut shape = targets.next();
        shape.flush |= fixed.is_none();
        let c = sender.send(&[], shape)?;
        emit(&mut out, &c, &mut stats)?;
    }
    stats.unit_sizes = std::mem::take(&mut out.sizes);
    Ok(stats)
}

/// Stream receiver loop. Runs to end of input; after an authentication
/// failure it keeps reading and outputs nothing.
pub fn stream_recv<R: Read, W: Write>(receiver: &mut StreamReceiver, mut input: R, mut out: W) -> anyhow::Result<TunnelStats> {
    let mut stats = TunnelStats::default();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = match input.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e).context("reading socket"),
        };
        stats.wire_bytes += n as u64;
        let r = receiver.recv(&buf[..n]);
        if !r.message.is_empty() {
            out.write_all(&r.message)?;
            out.flush()?;
            stats.plaintext_bytes += r.message.len() as u64;
        }
        if r.close {
            break;
        }
    }
    stats.failed = receiver.is_failed();
    Ok(stats)
}

/// Payload bytes that fit a datagram of target `p`.
fn dgram_capacity(cfg: &DgramConfig, p: i64) -> usize {
    if p < 0 {
        cfg.max_in
    } else {
        (p as usize).saturating_sub(cfg.min_target_for(0)).min(cfg.max_in)
    }
}

/// Datagram sender loop: one datagram per send, sized by the policy.
pub fn dgram_sender(key: &AeadKey, input: Box<dyn Read + Send>, socket: &UdpSocket, policy: &ShapePolicy, idle: Duration) -> anyhow::Result<TunnelStats> {
    let cfg = DgramConfig::for_algorithm(key.algorithm());
    let mut rng = os_rng();
    let mut stats = TunnelStats::default();
    let mut targets = Targets { policy, next: 0 };
    let rx = spawn_reader(input, cfg.max_in);
    let mut pending: Vec<u8> = Vec::new();
    let mut pos = 0;
    let mut eof = false;
    let mut sent = 0usize;
    let mut send = |m: &DgramMessage, p: i64, stats: &mut TunnelStats| -> anyhow::Result<()> {
        let d = dgram_send(key, m, p, &mut rng)?;
        sent += 1;
        if sent % DGRAM_BURST == 0 {
            thread::sleep(DGRAM_PAUSE);
        }
        socket.send(&d).context("sending datagram")?;
        stats.unit(d.len());
        Ok(())
    };
    loop {
        if pos == pending.len() {
            if eof {
                break;
            }
            pending.clear();
            pos = 0;
            match rx.recv_timeout(idle) {
                Ok(chunk) => {
                    pending = chunk.context("reading input")?;
                    stats.plaintext_bytes += pending.len() as u64;
                }
                Err(RecvTimeoutError::Timeout) => {
                    if *policy != ShapePolicy::Off {
                        let p = targets.next().target_len;
                        send(&DgramMessage::Null, p, &mut stats)?;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => eof = true,
            }
            continue;
        }
        let p = targets.next().target_len;
        let cap = dgram_capacity(&cfg, p);
        if cap == 0 {
            send(&DgramMessage::Null, p, &mut stats)?;
            continue;
        }
        let take = cap.min(pending.len() - pos);
        send(&DgramMessage::Payload(pending[pos..pos + take].to_vec()), p, &mut stats)?;
        pos += take;
    }
    Ok(stats)
}

/// Datagram receiver loop. Waits for the first datagram indefinitely, then
/// exits after `idle` without one.
pub fn dgram_receiver<W: Write>(key: &AeadKey, socket: &UdpSocket, mut out: W, idle: Duration) -> anyhow::Result<TunnelStats> {
    let mut stats = TunnelStats::default();
    let mut buf = vec![0u8; 65536];
    socket.set_read_timeout(None)?;
    loop {
        let n = match socket.recv(&mut buf) {
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e).context("receiving datagram"),
        };
        if stats.unit_sizes.is_empty() {
            socket.set_read_timeout(Some(idle.max(Duration::from_millis(1))))?;
        }
        stats.unit(n);
        match dgram_recv(key, &buf[..n]) {
            DgramRecvOutcome::Payload(m) => {
                out.write_all(&m)?;
                stats.plaintext_bytes += m.len() as u64;
            }
            DgramRecvOutcome::Null => stats.null_datagrams += 1,
            DgramRecvOutcome::Error => stats.error_datagrams += 1,
        }
    }
    out.flush()?;
    Ok(stats)
}

pub enum Connection {
    Tcp(TcpStream),
    Udp(UdpSocket),
}

fn resolve(addr: &str) -> anyhow::Result<SocketAddr> {
    addr.to_socket_addrs()
        .with_context(|| format!("resolving {addr}"))?
        .next()
        .with_context(|| format!("no address for {addr}"))
}

/// Opens the socket described by `cfg`. A TCP listener accepts one
/// connection.
pub fn open_connection(cfg: &TunnelConfig) -> anyhow::Result<Connection> {
    Ok(match (cfg.mode, &cfg.endpoint) {
        (Mode::Stream, Endpoint::Listen(a)) => {
            let listener = TcpListener::bind(a).with_context(|| format!("listening on {a}"))?;
            Connection::Tcp(listener.accept().context("accepting connection")?.0)
        }
        (Mode::Stream, Endpoint::Connect(a)) => {
            Connection::Tcp(TcpStream::connect(a).with_context(|| format!("connecting to {a}"))?)
        }
        (Mode::Dgram, Endpoint::Listen(a)) => Connection::Udp(UdpSocket::bind(a).with_context(|| format!("binding {a}"))?),
        (Mode::Dgram, Endpoint::Connect(a)) => {
            let peer = resolve(a)?;
            let local: SocketAddr = if peer.is_ipv4() { "0.0.0.0:0".parse()? } else { "[::]:0".parse()? };
            let socket = UdpSocket::bind(local)?;
            socket.connect(peer).with_context(|| format!("connecting to {a}"))?;
            Connection::Udp(socket)
        }
    })
}

/// Runs the tunnel over an already open socket.
pub fn run_tunnel_with(
    cfg: &TunnelConfig,
    conn: Connection,
    input: Box<dyn Read + Send>,
    output: Box<dyn Write>,
) -> anyhow::Result<TunnelStats> {
    let key = cfg.key();
    match (cfg.mode, cfg.role, conn) {
        (Mode::Stream, Role::Send, Connection::Tcp(s)) => {
            s.set_nodelay(true)?;
            let mut sender = StreamSender::new(key);
            let stats = stream_send(&mut sender, input, &s, &cfg.shape, cfg.idle)?;
            s.shutdown(std::net::Shutdown::Write)?;
            Ok(stats)
        }
        (Mode::Stream, Role::Recv, Connection::Tcp(s)) => stream_recv(&mut StreamReceiver::new(key), s, output),
        (Mode::Dgram, Role::Send, Connection::Udp(s)) => dgram_sender(&key, input, &s, &cfg.shape, cfg.idle),
        (Mode::Dgram, Role::Recv, Connection::Udp(s)) => dgram_receiver(&key, &s, output, cfg.idle),
        _ => bail!("socket type does not match tunnel mode"),
    }
}

/// Opens files or stdio and the socket, then runs the tunnel.
pub fn run_tunnel(cfg: &TunnelConfig) -> anyhow::Result<TunnelStats> {
    let input: Box<dyn Read + Send> = match (&cfg.role, &cfg.input) {
        (Role::Send, Some(p)) => Box::new(std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?),
        (Role::Send, None) => Box::new(io::stdin()),
        (Role::Recv, _) => Box::new(io::empty()),
    };
    let output: Box<dyn Write> = match (&cfg.role, &cfg.output) {
        (Role::Recv, Some(p)) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        (Role::Recv, None) => Box::new(io::stdout().lock()),
        (Role::Send, _) => Box::new(io::sink()),
    };
    let conn = open_connection(cfg)?;
    run_tunnel_with(cfg, conn, input, output)
}
