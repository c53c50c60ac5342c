//! Security experiments as executable games.
//!
//! A [`GameSession`] holds one trial's oracle state: the secret bit, the
//! channel endpoints and the bookkeeping lists the oracles consult. An
//! [`Adversary`] queries the session's oracles and outputs a guess;
//! [`run_game`] repeats this over many trials with fresh keys and a fresh bit
//! and estimates the advantage with a 95% confidence interval.
//!
//! This finds distinguishers; it cannot prove their absence. "Polynomial
//! time" becomes an explicit per-trial query budget and "negligible" becomes
//! "statistically indistinguishable from zero at the chosen trial count".
//!
//! Oracle availability per game:
//!
//! | game          | oracles                                |
//! |---------------|----------------------------------------|
//! | `fep-cpfa`    | [`send`](GameSession::send) |
//! | `fep-ccfa`    | `send`, [`recv`](GameSession::recv) |
//! | `ind-cpfa-cl` | [`lor`](GameSession::lor), [`recv_cl`](GameSession::recv_cl) |
//! | `fep-cpa`     | [`dg_send`](GameSession::dg_send) |
//! | `fep-cca`     | `dg_send`, [`dg_recv`](GameSession::dg_recv) |
//! | `ind-cpa-dg`  | [`dg_lor`](GameSession::dg_lor) |
//! | `ind-cca-dg`  | `dg_lor`, `dg_recv` |
//! | `int-ctxt-dg` | `dg_send`, `dg_recv` |
//!
//! Datagram oracles report the rejection symbol as [`DgramRecvOutcome::Error`].

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::aead::AeadError;
use crate::channel::{
    DgramChannel, DgramMessage, DgramRecv, DgramRecvOutcome, DgramSend, ShapeRequest, StreamChannel, StreamRecv,
    StreamRecvOutcome, StreamSend,
};
use crate::close::{CloseContext, CloseFn};
use crate::par::{map_indexed, Execution};
use crate::registry::AnyChannel;
use crate::rng::{random_bytes, stream_rng, FepRng};
use crate::DEFAULT_SECURITY_PARAMETER;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameId {
    FepCpfa,
    FepCcfa,
    IndCpfaCl,
    FepCpa,
    FepCca,
    IndCpaDg,
    IndCcaDg,
    IntCtxtDg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    Stream,
    Dgram,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Oracle {
    Send,
    Recv,
    Lor,
    RecvCl,
    DgSend,
    DgRecv,
    DgLor,
}

impl GameId {
    pub const ALL: [GameId; 8] = [
        GameId::FepCpfa,
        GameId::FepCcfa,
        GameId::IndCpfaCl,
        GameId::FepCpa,
        GameId::FepCca,
        GameId::IndCpaDg,
        GameId::IndCcaDg,
        GameId::IntCtxtDg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GameId::FepCpfa => "fep-cpfa",
            GameId::FepCcfa => "fep-ccfa",
            GameId::IndCpfaCl => "ind-cpfa-cl",
            GameId::FepCpa => "fep-cpa",
            GameId::FepCca => "fep-cca",
            GameId::IndCpaDg => "ind-cpa-dg",
            GameId::IndCcaDg => "ind-cca-dg",
            GameId::IntCtxtDg => "int-ctxt-dg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        if s == "int-ctxt" {
            return Some(GameId::IntCtxtDg);
        }
        Self::ALL.into_iter().find(|g| g.name() == s)
    }

    pub fn setting(self) -> Setting {
        match self {
            GameId::FepCpfa | GameId::FepCcfa | GameId::IndCpfaCl => Setting::Stream,
            _ => Setting::Dgram,
        }
    }

    /// INT-CTXT has no secret bit; a trial records whether the adversary won.
    pub fn is_win_game(self) -> bool {
        self == GameId::IntCtxtDg
    }

    pub fn allows(self, oracle: Oracle) -> bool {
        use GameId::*;
        use Oracle::*;
        matches!(
            (self, oracle),
            (FepCpfa, Send)
                | (FepCcfa, Send | Recv)
                | (IndCpfaCl, Lor | RecvCl)
                | (FepCpa, DgSend)
                | (FepCca, DgSend | DgRecv)
                | (IndCpaDg, DgLor)
                | (IndCcaDg, DgLor | DgRecv)
                | (IntCtxtDg, DgSend | DgRecv)
        )
    }
}

impl fmt::Display for GameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("oracle {oracle:?} is not available in {game}")]
    Unavailable { game: GameId, oracle: Oracle },
    #[error("query budget of {budget} exhausted")]
    BudgetExceeded { budget: usize },
    #[error("channel failure: {0}")]
    Channel(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("{game} needs a {expected:?} channel, {channel} is not one")]
    ChannelMismatch { game: GameId, channel: String, expected: Setting },
    #[error("channel init failed: {0}")]
    Init(#[from] AeadError),
    #[error("trial {trial}: {error}")]
    Oracle { trial: usize, error: OracleError },
}

/// Longest common prefix of two byte strings.
pub fn lcp<'a>(a: &'a [u8], b: &[u8]) -> &'a [u8] {
    let n = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    &a[..n]
}

/// `a ⪯ b`.
pub fn is_prefix(a: &[u8], b: &[u8]) -> bool {
    b.starts_with(a)
}

#[derive(Clone, Copy)]
pub enum GameChannel<'a> {
    Stream(&'a dyn StreamChannel),
    Dgram(&'a dyn DgramChannel),
}

impl<'a> GameChannel<'a> {
    pub fn id(&self) -> &str {
        match self {
            GameChannel::Stream(c) => c.id(),
            GameChannel::Dgram(c) => c.id(),
        }
    }
}

impl<'a> From<&'a AnyChannel> for GameChannel<'a> {
    fn from(c: &'a AnyChannel) -> Self {
        match c {
            AnyChannel::Stream(s) => GameChannel::Stream(s.as_ref()),
            AnyChannel::Dgram(d) => GameChannel::Dgram(d.as_ref()),
        }
    }
}

/// One logged oracle query. `output_len` is `None` when the oracle rejected
/// the query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCall {
    pub oracle: Oracle,
    pub input_len: usize,
    pub output_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub close: Option<bool>,
}

struct StreamSide<'a> {
    sender: Box<dyn StreamSend>,
    receiver: Box<dyn StreamRecv>,
    close: &'a dyn CloseFn,
    close_rng: ChaCha20Rng,
    sent_concat: Vec<u8>,
    received: Vec<Vec<u8>>,
    received_concat: Vec<u8>,
    close_history: Vec<bool>,
    sync: bool,
}

impl StreamSide<'_> {
    fn push_received(&mut self, c: &[u8]) {
        self.received.push(c.to_vec());
        self.received_concat.extend_from_slice(c);
    }
}

struct DgramSide {
    sender: Box<dyn DgramSend>,
    receiver: Box<dyn DgramRecv>,
    issued: HashSet<Vec<u8>>,
    won: bool,
}

#[allow(clippy::large_enum_variant)]
enum Side<'a> {
    Stream(StreamSide<'a>),
    Dgram(DgramSide),
}

/// Oracle state of a single trial.
pub struct GameSession<'a> {
    game: GameId,
    b: bool,
    budget: usize,
    calls: Vec<OracleCall>,
    rng: ChaCha20Rng,
    side: Side<'a>,
}

fn stream_side<'s, 'a>(side: &'s mut Side<'a>) -> &'s mut StreamSide<'a> {
    match side {
        Side::Stream(s) => s,
        Side::Dgram(_) => unreachable!("stream oracle on a datagram session"),
    }
}

fn dgram_side<'s>(side: &'s mut Side<'_>) -> &'s mut DgramSide {
    match side {
        Side::Dgram(d) => d,
        Side::Stream(_) => unreachable!("datagram oracle on a stream session"),
    }
}

impl<'a> GameSession<'a> {
    /// Sets up a trial with secret bit `b` (ignored by INT-CTXT). Every coin
    /// the session flips derives from `seed`.
    pub fn new(
        game: GameId,
        channel: GameChannel<'a>,
        close: &'a dyn CloseFn,
        b: bool,
        seed: u64,
        budget: usize,
    ) -> Result<Self, GameError> {
        let mut init_rng = stream_rng(seed, 0);
        let side = match (game.setting(), channel) {
            (Setting::Stream, GameChannel::Stream(ch)) => {
                let e = ch.init(DEFAULT_SECURITY_PARAMETER, &mut init_rng)?;
                Side::Stream(StreamSide {
                    sender: e.sender,
                    receiver: e.receiver,
                    close,
                    close_rng: stream_rng(seed, 2),
                    sent_concat: Vec::new(),
                    received: Vec::new(),
                    received_concat: Vec::new(),
                    close_history: Vec::new(),
                    sync: true,
                })
            }
            (Setting::Dgram, GameChannel::Dgram(ch)) => {
                let e = ch.init(DEFAULT_SECURITY_PARAMETER, &mut init_rng)?;
                Side::Dgram(DgramSide { sender: e.sender, receiver: e.receiver, issued: HashSet::new(), won: false })
            }
            (expected, ch) => {
                return Err(GameError::ChannelMismatch { game, channel: ch.id().to_string(), expected })
            }
        };
        let b = b && !game.is_win_game();
        Ok(Self { game, b, budget, calls: Vec::new(), rng: stream_rng(seed, 1), side })
    }

    pub fn game(&self) -> GameId {
        self.game
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn calls(&self) -> &[OracleCall] {
        &self.calls
    }

    /// The `sync` flag of the active receive oracle; always true elsewhere.
    pub fn sync(&self) -> bool {
        match &self.side {
            Side::Stream(s) => s.sync,
            Side::Dgram(_) => true,
        }
    }

    /// Concatenation of everything the send oracle has returned.
    pub fn sent_concat(&self) -> &[u8] {
        match &self.side {
            Side::Stream(s) => &s.sent_concat,
            Side::Dgram(_) => &[],
        }
    }

    /// Inputs recorded in the receive list.
    pub fn received(&self) -> &[Vec<u8>] {
        match &self.side {
            Side::Stream(s) => &s.received,
            Side::Dgram(_) => &[],
        }
    }

    pub fn close_history(&self) -> &[bool] {
        match &self.side {
            Side::Stream(s) => &s.close_history,
            Side::Dgram(_) => &[],
        }
    }

    /// Byte encoding of the stream receiver state.
    pub fn receiver_snapshot(&self) -> Option<Vec<u8>> {
        match &self.side {
            Side::Stream(s) => Some(s.receiver.snapshot()),
            Side::Dgram(_) => None,
        }
    }

    /// INT-CTXT outcome so far.
    pub fn won(&self) -> bool {
        match &self.side {
            Side::Dgram(d) => d.won,
            Side::Stream(_) => false,
        }
    }

    fn charge(&mut self, oracle: Oracle) -> Result<(), OracleError> {
        if !self.game.allows(oracle) {
            return Err(OracleError::Unavailable { game: self.game, oracle });
        }
        if self.calls.len() >= self.budget {
            return Err(OracleError::BudgetExceeded { budget: self.budget });
        }
        Ok(())
    }

    fn log(&mut self, oracle: Oracle, input_len: usize, output_len: Option<usize>, close: Option<bool>) {
        self.calls.push(OracleCall { oracle, input_len, output_len, close });
    }

    /// FEP send oracle: the real `Send` output for `b = 0`, uniform bytes of
    /// the same length for `b = 1`.
    pub fn send(&mut self, m: &[u8], shape: ShapeRequest) -> Result<Vec<u8>, OracleError> {
        self.charge(Oracle::Send)?;
        let s = stream_side(&mut self.side);
        let c0 = s.sender.send(m, shape).map_err(|e| OracleError::Channel(e.to_string()))?;
        let c = if self.b { random_bytes(&mut self.rng, c0.len()) } else { c0 };
        s.sent_concat.extend_from_slice(&c);
        self.log(Oracle::Send, m.len(), Some(c.len()), None);
        Ok(c)
    }

    /// FEP receive oracle, including the partial-sync split that hides
    /// plaintext decoded from bytes still matching the sent stream.
    pub fn recv(&mut self, c: &[u8]) -> Result<StreamRecvOutcome, OracleError> {
        self.charge(Oracle::Recv)?;
        let s = stream_side(&mut self.side);
        let out = if !self.b {
            if !s.sync {
                s.receiver.recv(c)
            } else {
                let mut joined = s.received_concat.clone();
                joined.extend_from_slice(c);
                if is_prefix(&joined, &s.sent_concat) {
                    let r = s.receiver.recv(c);
                    s.push_received(c);
                    StreamRecvOutcome { message: Vec::new(), close: r.close }
                } else {
                    let common = lcp(&joined, &s.sent_concat);
                    let (message, close) = if common.len() > s.received_concat.len() {
                        let c_sync = &common[s.received_concat.len()..];
                        let mut shadow = s.receiver.clone_box();
                        let m_sync = shadow.recv(c_sync).message;
                        let r = s.receiver.recv(c);
                        let keep = lcp(&r.message, &m_sync).len();
                        (r.message[keep..].to_vec(), r.close)
                    } else {
                        let r = s.receiver.recv(c);
                        (r.message, r.close)
                    };
                    if !is_prefix(&s.sent_concat, &joined) || !message.is_empty() {
                        s.sync = false;
                    }
                    s.push_received(c);
                    StreamRecvOutcome { message, close }
                }
            }
        } else {
            let ctx = CloseContext {
                sent: &s.sent_concat,
                recv_inputs: &s.received,
                close_history: &s.close_history,
                final_input: c,
            };
            // Close coherence: after one close the oracle never closes again.
            let close = !ctx.already_closed() && s.close.decide(&ctx, &mut s.close_rng);
            s.push_received(c);
            s.close_history.push(close);
            StreamRecvOutcome { message: Vec::new(), close }
        };
        self.log(Oracle::Recv, c.len(), Some(out.message.len()), Some(out.close));
        Ok(out)
    }

    /// Left-or-right send oracle; `None` when `|m0| != |m1|`.
    pub fn lor(&mut self, m0: &[u8], m1: &[u8], shape: ShapeRequest) -> Result<Option<Vec<u8>>, OracleError> {
        self.charge(Oracle::Lor)?;
        if m0.len() != m1.len() {
            self.log(Oracle::Lor, m0.len(), None, None);
            return Ok(None);
        }
        let s = stream_side(&mut self.side);
        let m = if self.b { m1 } else { m0 };
        let c = s.sender.send(m, shape).map_err(|e| OracleError::Channel(e.to_string()))?;
        s.sent_concat.extend_from_slice(&c);
        self.log(Oracle::Lor, m.len(), Some(c.len()), None);
        Ok(Some(c))
    }

    /// Passive receive oracle: only the close flag, and only for deliveries
    /// that stay a prefix of the sent stream (`None` otherwise).
    pub fn recv_cl(&mut self, c: &[u8]) -> Result<Option<bool>, OracleError> {
        self.charge(Oracle::RecvCl)?;
        let s = stream_side(&mut self.side);
        let mut joined = s.received_concat.clone();
        joined.extend_from_slice(c);
        if !is_prefix(&joined, &s.sent_concat) {
            self.log(Oracle::RecvCl, c.len(), None, None);
            return Ok(None);
        }
        let close = s.receiver.recv(c).close;
        s.push_received(c);
        self.log(Oracle::RecvCl, c.len(), Some(0), Some(close));
        Ok(Some(close))
    }

    /// Datagram send oracle; `None` when `Send` fails.
    ///
    /// In FEP-CPA/CCA the output is replaced by uniform bytes when `b = 1`;
    /// in INT-CTXT it is always real.
    pub fn dg_send(&mut self, m: &DgramMessage, p: i64) -> Result<Option<Vec<u8>>, OracleError> {
        self.charge(Oracle::DgSend)?;
        let randomise = self.b;
        let rng = &mut self.rng;
        let d = dgram_side(&mut self.side);
        let c = match d.sender.send(m, p, rng) {
            Err(_) => None,
            Ok(c0) => {
                let c = if randomise { random_bytes(rng, c0.len()) } else { c0 };
                d.issued.insert(c.clone());
                Some(c)
            }
        };
        self.log(Oracle::DgSend, m.len().unwrap_or(0), c.as_ref().map(Vec::len), None);
        Ok(c)
    }

    /// Datagram receive oracle. FEP-CCA and IND-CCA suppress everything but
    /// fresh payloads (and FEP-CCA answers nothing when `b = 1`); INT-CTXT
    /// returns the raw outcome and records a win on a fresh payload.
    pub fn dg_recv(&mut self, c: &[u8]) -> Result<DgramRecvOutcome, OracleError> {
        self.charge(Oracle::DgRecv)?;
        let game = self.game;
        let b = self.b;
        let d = dgram_side(&mut self.side);
        let out = if game == GameId::FepCca && b {
            DgramRecvOutcome::Error
        } else {
            let m = d.receiver.recv(c);
            let fresh_payload = !d.issued.contains(c) && matches!(m, DgramRecvOutcome::Payload(_));
            if game == GameId::IntCtxtDg {
                d.won |= fresh_payload;
                m
            } else if fresh_payload {
                m
            } else {
                DgramRecvOutcome::Error
            }
        };
        let len = match &out {
            DgramRecvOutcome::Payload(m) => Some(m.len()),
            DgramRecvOutcome::Null => Some(0),
            DgramRecvOutcome::Error => None,
        };
        self.log(Oracle::DgRecv, c.len(), len, None);
        Ok(out)
    }

    /// Datagram left-or-right oracle. Rejects a null message paired with
    /// anything else and payloads of unequal length.
    pub fn dg_lor(&mut self, m0: &DgramMessage, m1: &DgramMessage, p: i64) -> Result<Option<Vec<u8>>, OracleError> {
        self.charge(Oracle::DgLor)?;
        let rejected = ((m0.is_null() || m1.is_null()) && m0 != m1) || m0.len() != m1.len();
        let c = if rejected {
            None
        } else {
            let m = if self.b { m1 } else { m0 };
            let rng = &mut self.rng;
            let d = dgram_side(&mut self.side);
            let c = d.sender.send(m, p, rng).ok();
            if let Some(c) = &c {
                d.issued.insert(c.clone());
            }
            c
        };
        self.log(Oracle::DgLor, m0.len().unwrap_or(0), c.as_ref().map(Vec::len), None);
        Ok(c)
    }
}

/// A strategy. `play` returns the guess `b'` (ignored in INT-CTXT).
pub trait Adversary: Send + Sync {
    fn id(&self) -> &str;

    fn play(&self, session: &mut GameSession<'_>, rng: &mut dyn FepRng) -> Result<bool, OracleError>;
}

/// Flips a coin without querying anything.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomGuess;

impl Adversary for RandomGuess {
    fn id(&self) -> &str {
        "random-guess"
    }

    fn play(&self, _session: &mut GameSession<'_>, rng: &mut dyn FepRng) -> Result<bool, OracleError> {
        Ok(rng.gen())
    }
}

/// Sends a random message, delivers it with one byte flipped and watches
/// the receiver. Any visible reaction (a close or plaintext) means `b = 0`.
#[derive(Clone, Copy, Debug)]
pub struct TamperWatch {
    pub message_len: usize,
    pub offset: usize,
}

impl Default for TamperWatch {
    fn default() -> Self {
        Self { message_len: 64, offset: 0 }
    }
}

impl Adversary for TamperWatch {
    fn id(&self) -> &str {
        "tamper-watch"
    }

    fn play(&self, session: &mut GameSession<'_>, rng: &mut dyn FepRng) -> Result<bool, OracleError> {
        let m = random_bytes(rng, self.message_len);
        match session.game() {
            GameId::FepCcfa => {
                let mut c = session.send(&m, ShapeRequest::unshaped())?;
                if c.is_empty() {
                    return Ok(rng.gen());
                }
                let i = self.offset % c.len();
                c[i] ^= 0x01;
                let r = session.recv(&c)?;
                Ok(!(r.close || !r.message.is_empty()))
            }
            GameId::FepCca => {
                let Some(mut c) = session.dg_send(&DgramMessage::Payload(m), -1)? else {
                    return Ok(rng.gen());
                };
                let i = self.offset % c.len();
                c[i] ^= 0x01;
                Ok(session.dg_recv(&c)? == DgramRecvOutcome::Error)
            }
            _ => Ok(rng.gen()),
        }
    }
}

/// Passive check for a cleartext two-byte record length: sends a message of
/// known length and tests whether the output starts with it.
#[derive(Clone, Copy, Debug, Default)]
pub struct LengthPrefix;

impl Adversary for LengthPrefix {
    fn id(&self) -> &str {
        "length-prefix"
    }

    fn play(&self, session: &mut GameSession<'_>, rng: &mut dyn FepRng) -> Result<bool, OracleError> {
        let len = rng.gen_range(256..1024usize);
        let m = random_bytes(rng, len);
        let c = match session.game() {
            GameId::FepCpfa | GameId::FepCcfa => session.send(&m, ShapeRequest::unshaped())?,
            GameId::IndCpfaCl => session.lor(&m, &m, ShapeRequest::unshaped())?.unwrap_or_default(),
            _ => return Ok(rng.gen()),
        };
        let leaked = c.len() >= 2 && usize::from(u16::from_be_bytes([c[0], c[1]])) == len;
        Ok(!leaked)
    }
}

/// Left-or-right probe: all-zero versus all-one messages, guessing 1 when
/// the all-one plaintext is visible in the output.
#[derive(Clone, Copy, Debug, Default)]
pub struct LorProbe;

impl LorProbe {
    const LEN: usize = 32;
}

impl Adversary for LorProbe {
    fn id(&self) -> &str {
        "lor-probe"
    }

    fn play(&self, session: &mut GameSession<'_>, rng: &mut dyn FepRng) -> Result<bool, OracleError> {
        let m0 = vec![0x00; Self::LEN];
        let m1 = vec![0xff; Self::LEN];
        let c = match session.game() {
            GameId::IndCpfaCl => session.lor(&m0, &m1, ShapeRequest::unshaped())?,
            GameId::IndCpaDg | GameId::IndCcaDg => {
                session.dg_lor(&DgramMessage::Payload(m0), &DgramMessage::Payload(m1.clone()), -1)?
            }
            _ => return Ok(rng.gen()),
        };
        Ok(c.is_some_and(|c| c.windows(Self::LEN).any(|w| w == m1.as_slice())))
    }
}

/// Datagram forger: obtains one real datagram, then submits bit flips,
/// truncations, extensions, a replay and random datagrams of many sizes.
/// In the bit games any accepted payload means `b = 0`.
#[derive(Clone, Copy, Debug)]
pub struct Forger {
    pub attempts: usize,
}

impl Default for Forger {
    fn default() -> Self {
        Self { attempts: 24 }
    }
}

impl Adversary for Forger {
    fn id(&self) -> &str {
        "forger"
    }

    fn play(&self, session: &mut GameSession<'_>, rng: &mut dyn FepRng) -> Result<bool, OracleError> {
        let m = DgramMessage::Payload(random_bytes(rng, 16));
        let c = match session.game() {
            GameId::FepCca | GameId::IntCtxtDg => session.dg_send(&m, 64)?,
            GameId::IndCcaDg => session.dg_lor(&m, &m, 64)?,
            _ => return Ok(rng.gen()),
        };
        let Some(c) = c else { return Ok(rng.gen()) };
        let mut candidates = vec![c.clone(), c[..c.len() - 1].to_vec(), [c.as_slice(), &[0]].concat()];
        while candidates.len() < self.attempts {
            let mut t = c.clone();
            match rng.gen_range(0..3) {
                0 => {
                    let i = rng.gen_range(0..t.len());
                    t[i] ^= 1 << rng.gen_range(0..8);
                }
                1 => {
                    let len = rng.gen_range(0..=c.len() + 8);
                    t = random_bytes(rng, len);
                }
                _ => {
                    let cut = rng.gen_range(0..t.len());
                    t.truncate(cut);
                }
            }
            candidates.push(t);
        }
        let mut accepted = false;
        for t in &candidates {
            if session.calls().len() >= session.budget() {
                break;
            }
            let r = session.dg_recv(t)?;
            accepted |= matches!(r, DgramRecvOutcome::Payload(_)) && session.game() != GameId::IntCtxtDg;
        }
        if accepted {
            Ok(false)
        } else {
            Ok(rng.gen())
        }
    }
}

pub const ADVERSARY_IDS: &[&str] = &["random-guess", "tamper-watch", "length-prefix", "lor-probe", "forger"];

pub fn adversary_by_name(name: &str) -> Option<Box<dyn Adversary>> {
    Some(match name {
        "random-guess" => Box::new(RandomGuess),
        "tamper-watch" => Box::new(TamperWatch::default()),
        "length-prefix" => Box::new(LengthPrefix),
        "lor-probe" => Box::new(LorProbe),
        "forger" => Box::new(Forger::default()),
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub trials: usize,
    pub seed: u64,
    /// Oracle queries allowed per trial.
    pub budget: usize,
    pub execution: Execution,
    /// Keep every trial's oracle log in the transcript.
    pub keep_calls: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self { trials: 1000, seed: 0, budget: 1024, execution: Execution::default(), keep_calls: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guess: Option<bool>,
    /// `b' = b`, or the win flag in INT-CTXT.
    pub success: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<OracleCall>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameTranscript {
    pub kind: String,
    pub game: GameId,
    pub channel: String,
    pub adversary: String,
    pub close_fn: String,
    pub seed: u64,
    pub trials: usize,
    pub successes: usize,
    /// `|P[b' = b] - 1/2|`, or the win rate in INT-CTXT.
    pub advantage: f64,
    pub ci95: (f64, f64),
    /// Standard error of the success rate under the null hypothesis.
    pub sigma: f64,
    pub records: Vec<TrialRecord>,
}

impl GameTranscript {
    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    pub fn within_sigmas(&self, k: f64) -> bool {
        self.advantage <= k * self.sigma
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, confidence: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + confidence / 2.0);
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn advantage_interval(game: GameId, (lo, hi): (f64, f64)) -> (f64, f64) {
    if game.is_win_game() {
        return (lo, hi);
    }
    let (a, b) = ((lo - 0.5).abs(), (hi - 0.5).abs());
    if lo <= 0.5 && 0.5 <= hi {
        (0.0, a.max(b))
    } else {
        (a.min(b), a.max(b))
    }
}

fn run_trial(
    game: GameId,
    channel: GameChannel<'_>,
    close: &dyn CloseFn,
    adversary: &dyn Adversary,
    config: &GameConfig,
    trial: usize,
) -> Result<TrialRecord, GameError> {
    let mut rng = stream_rng(config.seed, trial as u64);
    let b: bool = !game.is_win_game() && rng.gen();
    let session_seed = rng.next_u64();
    let mut adversary_rng = ChaCha20Rng::seed_from_u64(rng.next_u64());
    let mut session = GameSession::new(game, channel, close, b, session_seed, config.budget)?;
    let guess = adversary.play(&mut session, &mut adversary_rng).map_err(|error| GameError::Oracle { trial, error })?;
    let success = if game.is_win_game() { session.won() } else { guess == b };
    Ok(TrialRecord {
        trial,
        b: (!game.is_win_game()).then_some(b),
        guess: (!game.is_win_game()).then_some(guess),
        success,
        calls: if config.keep_calls { session.calls } else { Vec::new() },
    })
}

/// Runs `config.trials` independent trials. Trial `i` draws all of its
/// randomness from stream `i` of `config.seed`, so results do not depend on
/// the execution mode.
pub fn run_game(
    game: GameId,
    channel: GameChannel<'_>,
    close: &dyn CloseFn,
    adversary: &dyn Adversary,
    config: &GameConfig,
) -> Result<GameTranscript, GameError> {
    let expected = game.setting();
    let matches = matches!(
        (expected, channel),
        (Setting::Stream, GameChannel::Stream(_)) | (Setting::Dgram, GameChannel::Dgram(_))
    );
    if !matches {
        return Err(GameError::ChannelMismatch { game, channel: channel.id().to_string(), expected });
    }
    let records = map_indexed(config.trials, config.execution, |i| run_trial(game, channel, close, adversary, config, i))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let n = records.len();
    let successes = records.iter().filter(|r| r.success).count();
    let rate = if n == 0 { 0.0 } else { successes as f64 / n as f64 };
    let advantage = if game.is_win_game() { rate } else { (rate - 0.5).abs() };
    let ci95 = advantage_interval(game, wilson_interval(successes, n, 0.95));
    Ok(GameTranscript {
        kind: "game".into(),
        game,
        channel: channel.id().to_string(),
        adversary: adversary.id().to_string(),
        close_fn: close.meta().name.to_string(),
        seed: config.seed,
        trials: n,
        successes,
        advantage,
        ci95,
        sigma: if n == 0 { 0.5 } else { 0.5 / (n as f64).sqrt() },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{StreamEndpoints, StreamError};
    use crate::close::NeverClose;
    use crate::dgram::EncryptedDgram;
    use crate::foil::{AuthFailClose, PlainLenStream};
    use crate::stream::EncryptedStream;

    /// Sends plaintext in the clear and outputs whatever it receives.
    #[derive(Clone, Default)]
    struct Clear(Vec<u8>);

    impl StreamSend for Clear {
        fn send(&mut self, m: &[u8], _: ShapeRequest) -> Result<Vec<u8>, StreamError> {
            Ok(m.to_vec())
        }
    }

    impl StreamRecv for Clear {
        fn recv(&mut self, c: &[u8]) -> StreamRecvOutcome {
            self.0.extend_from_slice(c);
            StreamRecvOutcome { message: c.to_vec(), close: false }
        }
        fn clone_box(&self) -> Box<dyn StreamRecv> {
            Box::new(self.clone())
        }
        fn snapshot(&self) -> Vec<u8> {
            self.0.clone()
        }
    }

    struct ClearChannel;

    impl StreamChannel for ClearChannel {
        fn id(&self) -> &str {
            "clear"
        }
        fn init(&self, _: u32, _: &mut dyn FepRng) -> Result<StreamEndpoints, AeadError> {
            Ok(StreamEndpoints { sender: Box::new(Clear::default()), receiver: Box::new(Clear::default()) })
        }
    }

    const FIG2: EncryptedStream = EncryptedStream { algorithm: crate::aead::AeadAlgorithm::ChaCha20Poly1305 };
    const FIG3: EncryptedDgram = EncryptedDgram { algorithm: crate::aead::AeadAlgorithm::ChaCha20Poly1305 };

    fn session<'a>(game: GameId, ch: GameChannel<'a>, b: bool, seed: u64) -> GameSession<'a> {
        GameSession::new(game, ch, &NeverClose, b, seed, 64).unwrap()
    }

    #[test]
    fn lcp_examples() {
        assert_eq!(lcp(b"abcd", b"abef"), b"ab");
        assert_eq!(lcp(b"xyz", b"xyz"), b"xyz");
        assert_eq!(lcp(b"", b"xyz"), b"");
    }

    #[test]
    fn game_ids_round_trip() {
        for g in GameId::ALL {
            assert_eq!(GameId::parse(g.name()), Some(g));
            assert_eq!(serde_json::to_string(&g).unwrap(), format!("\"{}\"", g.name()));
        }
        assert_eq!(GameId::parse("INT-CTXT"), Some(GameId::IntCtxtDg));
        assert_eq!(GameId::parse("bogus"), None);
    }

    #[test]
    fn send_oracle_lengths_and_randomness() {
        let mut s = session(GameId::FepCpfa, GameChannel::Stream(&FIG2), false, 1);
        assert_eq!(s.send(b"hi", ShapeRequest::exact(50)).unwrap().len(), 50);
        let mut s = session(GameId::FepCpfa, GameChannel::Stream(&FIG2), true, 1);
        let a = s.send(b"same", ShapeRequest::exact(40)).unwrap();
        let b = s.send(b"same", ShapeRequest::exact(40)).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a, b);
    }

    #[test]
    fn send_lengths_independent_of_bit() {
        let queries = [(5usize, ShapeRequest::exact(3)), (70, ShapeRequest::unshaped()), (0, ShapeRequest::new(10, true))];
        let mut s0 = session(GameId::FepCcfa, GameChannel::Stream(&FIG2), false, 9);
        let mut s1 = session(GameId::FepCcfa, GameChannel::Stream(&FIG2), true, 9);
        for (len, shape) in queries {
            let m = vec![1u8; len];
            assert_eq!(s0.send(&m, shape).unwrap().len(), s1.send(&m, shape).unwrap().len());
        }
    }

    #[test]
    fn recv_oracle_in_sync_hides_output() {
        let mut s = session(GameId::FepCcfa, GameChannel::Stream(&FIG2), false, 2);
        let c = s.send(b"hello", ShapeRequest::unshaped()).unwrap();
        for chunk in c.chunks(5) {
            assert_eq!(s.recv(chunk).unwrap(), StreamRecvOutcome::empty());
        }
        assert!(s.sync());
        let mut s = session(GameId::FepCcfa, GameChannel::Stream(&FIG2), true, 2);
        let mut c = s.send(b"hello", ShapeRequest::unshaped()).unwrap();
        c[0] ^= 1;
        assert_eq!(s.recv(&c).unwrap(), StreamRecvOutcome::empty());
    }

    #[test]
    fn recv_oracle_exposes_foil_closure() {
        let mut s = session(GameId::FepCcfa, GameChannel::Stream(&AuthFailClose), false, 3);
        let mut c = s.send(b"hello", ShapeRequest::unshaped()).unwrap();
        c[0] ^= 1;
        let r = s.recv(&c).unwrap();
        assert!(r.close && r.message.is_empty());
        assert!(!s.sync());
    }

    #[test]
    fn partial_sync_returns_only_out_of_sync_suffix() {
        let mut s = session(GameId::FepCcfa, GameChannel::Stream(&ClearChannel), false, 4);
        s.send(b"abc", ShapeRequest::unshaped()).unwrap();
        assert_eq!(s.recv(b"a").unwrap().message, b"");
        let r = s.recv(b"bX").unwrap();
        assert_eq!(r.message, b"X");
        assert!(!s.sync());
        assert_eq!(s.recv(b"raw").unwrap().message, b"raw");
    }

    #[test]
    fn excess_bytes_keep_sync_when_sent_is_prefix() {
        let mut s = session(GameId::FepCcfa, GameChannel::Stream(&FIG2), false, 5);
        let c = s.send(b"abc", ShapeRequest::unshaped()).unwrap();
        let mut extra = c.clone();
        extra.extend([0u8; 10]);
        s.recv(&extra).unwrap();
        assert!(s.sync());
    }

    #[test]
    fn partial_sync_clone_leaves_original_as_single_recv() {
        let mut s = session(GameId::FepCcfa, GameChannel::Stream(&FIG2), false, 6);
        let mut c = s.send(b"first", ShapeRequest::unshaped()).unwrap();
        c.extend(s.send(b"second", ShapeRequest::unshaped()).unwrap());
        let tamper_at = c.len() - 3;
        c[tamper_at] ^= 0x80;
        s.recv(&c).unwrap();

        let mut fresh = FIG2.init(DEFAULT_SECURITY_PARAMETER, &mut stream_rng(6, 0)).unwrap();
        let direct = fresh.receiver.recv(&c);
        assert!(direct.message.is_empty());
        assert_eq!(s.receiver_snapshot().unwrap(), fresh.receiver.snapshot());
        assert!(!s.sync());
    }

    #[test]
    fn lor_and_recv_cl_guards() {
        let mut s = session(GameId::IndCpfaCl, GameChannel::Stream(&FIG2), true, 7);
        assert_eq!(s.lor(b"ab", b"abc", ShapeRequest::unshaped()).unwrap(), None);
        let c = s.lor(b"ab", b"cd", ShapeRequest::unshaped()).unwrap().unwrap();
        assert_eq!(s.recv_cl(&c[..10]).unwrap(), Some(false));
        assert_eq!(s.recv_cl(b"zz").unwrap(), None);
        assert_eq!(s.recv_cl(&c[10..]).unwrap(), Some(false));
        assert_eq!(s.recv_cl(b"z").unwrap(), None);
    }

    #[test]
    fn dgram_oracles() {
        let mut s = session(GameId::FepCca, GameChannel::Dgram(&FIG3), false, 8);
        let c = s.dg_send(&DgramMessage::payload(*b"m"), 60).unwrap().unwrap();
        assert_eq!(c.len(), 60);
        assert_eq!(s.dg_recv(&c).unwrap(), DgramRecvOutcome::Error);
        assert_eq!(s.dg_recv(&[0u8; 10]).unwrap(), DgramRecvOutcome::Error);
        assert_eq!(s.dg_send(&DgramMessage::payload(*b"m"), 70_000).unwrap(), None);

        let mut s = session(GameId::IndCpaDg, GameChannel::Dgram(&FIG3), false, 8);
        assert_eq!(s.dg_lor(&DgramMessage::Null, &DgramMessage::payload(*b"x"), 40).unwrap(), None);
        assert_eq!(s.dg_lor(&DgramMessage::payload(*b"xy"), &DgramMessage::payload(*b"x"), 40).unwrap(), None);
        assert!(s.dg_lor(&DgramMessage::Null, &DgramMessage::Null, 40).unwrap().is_some());

        let mut s = session(GameId::IntCtxtDg, GameChannel::Dgram(&FIG3), false, 8);
        let c = s.dg_send(&DgramMessage::payload(*b"m"), -1).unwrap().unwrap();
        assert_eq!(s.dg_recv(&c).unwrap(), DgramRecvOutcome::Payload(b"m".to_vec()));
        assert!(!s.won());
    }

    #[test]
    fn availability_budget_and_mismatch() {
        let mut s = session(GameId::FepCpfa, GameChannel::Stream(&FIG2), false, 9);
        assert!(matches!(s.recv(b"x"), Err(OracleError::Unavailable { .. })));
        let mut s = GameSession::new(GameId::FepCpfa, GameChannel::Stream(&FIG2), &NeverClose, false, 9, 2).unwrap();
        s.send(b"", ShapeRequest::exact(1)).unwrap();
        s.send(b"", ShapeRequest::exact(1)).unwrap();
        assert_eq!(s.send(b"", ShapeRequest::exact(1)), Err(OracleError::BudgetExceeded { budget: 2 }));
        assert!(matches!(
            GameSession::new(GameId::FepCpa, GameChannel::Stream(&FIG2), &NeverClose, false, 0, 1),
            Err(GameError::ChannelMismatch { .. })
        ));
    }

    fn play(game: GameId, ch: GameChannel<'_>, adv: &dyn Adversary, trials: usize) -> GameTranscript {
        let cfg = GameConfig { trials, seed: 11, ..GameConfig::default() };
        run_game(game, ch, &NeverClose, adv, &cfg).unwrap()
    }

    #[test]
    fn random_guess_is_near_zero() {
        for game in GameId::ALL {
            let ch = match game.setting() {
                Setting::Stream => GameChannel::Stream(&FIG2),
                Setting::Dgram => GameChannel::Dgram(&FIG3),
            };
            let t = play(game, ch, &RandomGuess, 400);
            assert!(t.within_sigmas(3.0), "{game}: {}", t.advantage);
        }
    }

    #[test]
    fn tamper_watch_separates_foil_from_construction() {
        let foil = play(GameId::FepCcfa, GameChannel::Stream(&AuthFailClose), &TamperWatch::default(), 200);
        assert!(foil.advantage >= 0.49, "{}", foil.advantage);
        let fig2 = play(GameId::FepCcfa, GameChannel::Stream(&FIG2), &TamperWatch::default(), 200);
        assert!(fig2.within_sigmas(3.0), "{}", fig2.advantage);
    }

    #[test]
    fn leaky_channels_give_full_advantage() {
        let t = play(GameId::FepCpfa, GameChannel::Stream(&PlainLenStream), &LengthPrefix, 200);
        assert!(t.advantage > 0.45 && t.ci95.1 <= 0.5, "{:?}", t.ci95);
        let t = play(GameId::IndCpfaCl, GameChannel::Stream(&ClearChannel), &LorProbe, 200);
        assert_eq!(t.advantage, 0.5);
        let t = play(GameId::FepCpfa, GameChannel::Stream(&FIG2), &LengthPrefix, 200);
        assert!(t.within_sigmas(3.0));
    }

    #[test]
    fn forger_never_wins_against_construction() {
        let t = play(GameId::IntCtxtDg, GameChannel::Dgram(&FIG3), &Forger::default(), 200);
        assert_eq!(t.successes, 0);
        let t = play(GameId::FepCca, GameChannel::Dgram(&FIG3), &Forger::default(), 200);
        assert!(t.within_sigmas(3.0));
    }

    #[test]
    fn execution_modes_agree() {
        let mut cfg = GameConfig { trials: 64, seed: 3, keep_calls: true, ..GameConfig::default() };
        cfg.execution = Execution::Sequential;
        let a = run_game(GameId::FepCcfa, GameChannel::Stream(&FIG2), &NeverClose, &TamperWatch::default(), &cfg).unwrap();
        cfg.execution = Execution::Parallel;
        let b = run_game(GameId::FepCcfa, GameChannel::Stream(&FIG2), &NeverClose, &TamperWatch::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<GameTranscript>(&json).unwrap(), a);
    }

    #[test]
    fn wilson_interval_sane() {
        let (lo, hi) = wilson_interval(500, 1000, 0.95);
        assert!(lo < 0.5 && hi > 0.5 && (hi - lo - 0.062).abs() < 0.002);
        assert_eq!(advantage_interval(GameId::FepCpfa, (0.45, 0.55)).0, 0.0);
    }
}
