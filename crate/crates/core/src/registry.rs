//! Channel lookup by id.
//!
//! | id              | channel                                  |
//! |-----------------|------------------------------------------|
//! | `fig2`          | datastream construction, ChaCha20-Poly1305 |
//! | `fig2-aes`      | datastream construction, AES-256-GCM      |
//! | `fig3`          | datagram construction, ChaCha20-Poly1305  |
//! | `fig3-aes`      | datagram construction, AES-256-GCM        |
//! | `foil-authfail` | closes on authentication failure          |
//! | `foil-drain[:N]`| closes after ~N total bytes once failed   |
//! | `foil-plainlen` | cleartext record lengths                  |

use crate::aead::AeadAlgorithm;
use crate::channel::{DgramChannel, StreamChannel};
use crate::dgram::EncryptedDgram;
use crate::foil::{AuthFailClose, DrainClose, PlainLenStream};
use crate::stream::EncryptedStream;

pub const CHANNEL_IDS: &[&str] =
    &["fig2", "fig2-aes", "fig3", "fig3-aes", "foil-authfail", "foil-drain", "foil-plainlen"];

pub enum AnyChannel {
    Stream(Box<dyn StreamChannel>),
    Dgram(Box<dyn DgramChannel>),
}

impl AnyChannel {
    pub fn id(&self) -> &str {
        match self {
            AnyChannel::Stream(c) => c.id(),
            AnyChannel::Dgram(c) => c.id(),
        }
    }

    pub fn is_stream(&self) -> bool {
        matches!(self, AnyChannel::Stream(_))
    }
}

pub fn channel_by_id(id: &str) -> Option<AnyChannel> {
    let (head, arg) = match id.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (id, None),
    };
    let ch = match (head, arg) {
        ("fig2", None) => AnyChannel::Stream(Box::new(EncryptedStream::new(AeadAlgorithm::ChaCha20Poly1305))),
        ("fig2-aes", None) => AnyChannel::Stream(Box::new(EncryptedStream::new(AeadAlgorithm::Aes256Gcm))),
        ("fig3", None) => AnyChannel::Dgram(Box::new(EncryptedDgram::new(AeadAlgorithm::ChaCha20Poly1305))),
        ("fig3-aes", None) => AnyChannel::Dgram(Box::new(EncryptedDgram::new(AeadAlgorithm::Aes256Gcm))),
        ("foil-authfail", None) => AnyChannel::Stream(Box::new(AuthFailClose)),
        ("foil-plainlen", None) => AnyChannel::Stream(Box::new(PlainLenStream)),
        ("foil-drain", None) => AnyChannel::Stream(Box::new(DrainClose::default())),
        ("foil-drain", Some(n)) => AnyChannel::Stream(Box::new(DrainClose::new(n.parse().ok().filter(|&n| n > 0)?))),
        _ => return None,
    };
    Some(ch)
}
