//! Channel interfaces shared by the constructions, the foil channels, the
//! network simulator and the game harness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aead::AeadError;
use crate::rng::FepRng;

/// Output length `p` and flush flag `f` attached to every stream send.
///
/// A negative `target_len` switches shaping off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeRequest {
    pub target_len: i64,
    pub flush: bool,
}

impl ShapeRequest {
    pub const fn new(target_len: i64, flush: bool) -> Self {
        Self { target_len, flush }
    }

    /// Shaping off, everything flushed.
    pub const fn unshaped() -> Self {
        Self { target_len: -1, flush: true }
    }

    pub const fn exact(target_len: i64) -> Self {
        Self { target_len, flush: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRecvOutcome {
    #[serde(with = "crate::hexbytes")]
    pub message: Vec<u8>,
    pub close: bool,
}

impl StreamRecvOutcome {
    pub fn empty() -> Self {
        Self::default()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    /// Local abort: the next block pair would reuse or overflow a nonce.
    #[error("sequence number space exhausted")]
    SequenceExhausted,
}

pub trait StreamSend: Send {
    fn send(&mut self, m: &[u8], shape: ShapeRequest) -> Result<Vec<u8>, StreamError>;
}

pub trait StreamRecv: Send {
    fn recv(&mut self, c: &[u8]) -> StreamRecvOutcome;

    fn clone_box(&self) -> Box<dyn StreamRecv>;

    /// Byte encoding of the full receiver state, for bitwise comparison.
    fn snapshot(&self) -> Vec<u8>;
}

impl Clone for Box<dyn StreamRecv> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub struct StreamEndpoints {
    pub sender: Box<dyn StreamSend>,
    pub receiver: Box<dyn StreamRecv>,
}

/// A datastream channel: `Init` plus the endpoint types it hands out.
pub trait StreamChannel: Send + Sync {
    fn id(&self) -> &str;

    fn init(&self, security_parameter: u32, rng: &mut dyn FepRng) -> Result<StreamEndpoints, AeadError>;
}

/// Datagram input: either the null message or a (possibly empty) payload.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgramMessage {
    Null,
    Payload(#[serde(with = "crate::hexbytes")] Vec<u8>),
}

impl DgramMessage {
    pub fn payload(bytes: impl Into<Vec<u8>>) -> Self {
        DgramMessage::Payload(bytes.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, DgramMessage::Null)
    }

    /// Payload length; the null message has none.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> Option<usize> {
        match self {
            DgramMessage::Null => None,
            DgramMessage::Payload(m) => Some(m.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgramRecvOutcome {
    Payload(#[serde(with = "crate::hexbytes")] Vec<u8>),
    /// Behave as if nothing was received.
    Null,
    Error,
}

impl DgramRecvOutcome {
    /// Whether this outcome is what an honest delivery of `m` must produce.
    pub fn matches(&self, m: &DgramMessage) -> bool {
        match (self, m) {
            (DgramRecvOutcome::Null, DgramMessage::Null) => true,
            (DgramRecvOutcome::Payload(a), DgramMessage::Payload(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DgramSendError {
    #[error("requested length {0} exceeds the maximum datagram size")]
    TargetTooLarge(i64),
    #[error("message of {len} bytes does not fit in {target} output bytes")]
    MessageDoesNotFit { len: usize, target: i64 },
}

pub trait DgramSend: Send {
    fn send(&mut self, m: &DgramMessage, p: i64, rng: &mut dyn FepRng) -> Result<Vec<u8>, DgramSendError>;
}

pub trait DgramRecv: Send {
    fn recv(&mut self, c: &[u8]) -> DgramRecvOutcome;
}

pub struct DgramEndpoints {
    pub sender: Box<dyn DgramSend>,
    pub receiver: Box<dyn DgramRecv>,
}

pub trait DgramChannel: Send + Sync {
    fn id(&self) -> &str;

    fn init(&self, security_parameter: u32, rng: &mut dyn FepRng) -> Result<DgramEndpoints, AeadError>;
}
