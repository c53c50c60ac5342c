//! Fully encrypted protocols (FEPs): channels whose every output byte looks
//! uniformly random, with traffic shaping down to single bytes.
//!
//! The crate has two constructions and the machinery used to exercise them:
//!
//! - [`stream`]: a datastream channel (TCP-like) built from length/payload
//!   block pairs, with exact output lengths and a silent fail state.
//! - [`dgram`]: a stateless datagram channel (UDP-like) with null messages
//!   and exact datagram sizes, down to zero bytes.
//! - [`close`]: close functions deciding when a receiver observably closes.
//! - [`netsim`]: a deterministic adversarial network (re-chunking, tampering,
//!   drop/duplicate/reorder).
//! - [`games`]: executable security experiments with Monte Carlo advantage
//!   estimation.
//! - [`fingerprint`]: minimum-size scans, close-behaviour classification and
//!   randomness screens, plus deliberately flawed foil channels.
//!
//! The game harness can find distinguishers and sanity-check channels. It
//! cannot prove security: advantages are estimated from a finite number of
//! trials against concrete adversaries.

pub mod aead;
pub mod channel;
pub mod close;
pub mod dgram;
pub mod fingerprint;
pub mod foil;
pub mod games;
pub(crate) mod hexbytes;
pub mod netsim;
pub mod par;
pub mod registry;
pub mod rng;
pub mod stream;

pub use aead::{AeadAlgorithm, AeadKey, AeadParams};
pub use channel::{
    DgramChannel, DgramMessage, DgramRecvOutcome, ShapeRequest, StreamChannel, StreamRecvOutcome,
};
pub use dgram::{EncryptedDgram, DgramConfig};
pub use stream::{EncryptedStream, StreamConfig, StreamReceiver, StreamSender};

/// Security parameter used when callers do not pick one.
pub const DEFAULT_SECURITY_PARAMETER: u32 = 128;
