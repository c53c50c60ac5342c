//! Datagram fully encrypted channel.
//!
//! Stateless given the key. Each datagram is a fresh random nonce followed by
//! the AEAD encryption of
//!
//! ```text
//! 0x00 || 0^k                      null message (chaff)
//! 0x01 || u16 len || 0^k || m      payload, big-endian length
//! ```
//!
//! with the padding `k` chosen so the datagram is exactly the requested size.
//! Requests too small to hold a nonce and tag can only carry the null
//! message and are answered with uniformly random bytes.

use crate::aead::{self, AeadAlgorithm, AeadError, AeadKey, AeadParams, Nonce};
use crate::channel::{
    DgramChannel, DgramEndpoints, DgramMessage, DgramRecv, DgramRecvOutcome, DgramSend, DgramSendError,
};
use crate::rng::{random_bytes, FepRng};

/// Largest UDP payload.
pub const MAX_DATAGRAM: usize = 65507;

const TYPE_NULL: u8 = 0x00;
const TYPE_PAYLOAD: u8 = 0x01;

/// Size limits derived from the AEAD overhead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DgramConfig {
    pub overhead: usize,
    /// `ℓ_out`
    pub max_out: usize,
    /// `ℓ_in`: two bytes of length and one type byte are reserved.
    pub max_in: usize,
    /// `ℓ_null`: size of an encrypted null message without padding.
    pub null_len: usize,
}

impl DgramConfig {
    pub const fn new(overhead: usize) -> Self {
        Self {
            overhead,
            max_out: MAX_DATAGRAM,
            max_in: MAX_DATAGRAM - overhead - 3,
            null_len: 1 + overhead,
        }
    }

    pub fn for_algorithm(algorithm: AeadAlgorithm) -> Self {
        Self::new(AeadParams::datagram(algorithm).overhead)
    }

    /// Smallest request that carries a payload of `len` bytes.
    pub const fn min_target_for(&self, len: usize) -> usize {
        self.overhead + 3 + len
    }
}

/// `(ℓ_in, ℓ_out, ℓ_null)`.
pub fn dgram_limits(config: &DgramConfig) -> (usize, usize, usize) {
    (config.max_in, config.max_out, config.null_len)
}

/// Both sides hold the same key; there is no other state.
pub fn dgram_init(
    algorithm: AeadAlgorithm,
    security_parameter: u32,
    rng: &mut dyn FepRng,
) -> Result<(AeadKey, AeadKey), AeadError> {
    let key = aead::keygen(algorithm, security_parameter, rng)?;
    Ok((key.clone(), key))
}

fn encrypt(key: &AeadKey, plaintext: &[u8], rng: &mut dyn FepRng) -> Vec<u8> {
    let nonce = Nonce::random(rng);
    let mut out = Vec::with_capacity(nonce.as_bytes().len() + plaintext.len() + key.algorithm().tag_len());
    out.extend_from_slice(nonce.as_bytes());
    out.extend(aead::seal(key, &nonce, plaintext));
    out
}

fn payload_plaintext(m: &[u8], pad: usize) -> Vec<u8> {
    let mut pt = Vec::with_capacity(3 + pad + m.len());
    pt.push(TYPE_PAYLOAD);
    pt.extend_from_slice(&(m.len() as u16).to_be_bytes());
    pt.resize(3 + pad, 0);
    pt.extend_from_slice(m);
    pt
}

/// Encodes `m` into one datagram of exactly `p` bytes, or unshaped if `p < 0`.
pub fn dgram_send(
    key: &AeadKey,
    m: &DgramMessage,
    p: i64,
    rng: &mut dyn FepRng,
) -> Result<Vec<u8>, DgramSendError> {
    let cfg = DgramConfig::for_algorithm(key.algorithm());
    if p < 0 {
        match m {
            DgramMessage::Null => return Ok(encrypt(key, &[TYPE_NULL], rng)),
            DgramMessage::Payload(data) if data.len() <= cfg.max_in => {
                return Ok(encrypt(key, &payload_plaintext(data, 0), rng));
            }
            DgramMessage::Payload(data) => {
                return Err(DgramSendError::MessageDoesNotFit { len: data.len(), target: p });
            }
        }
    }
    let target = p as u64;
    if m.is_null() && target < cfg.null_len as u64 {
        return Ok(random_bytes(rng, target as usize));
    }
    if target > cfg.max_out as u64 {
        return Err(DgramSendError::TargetTooLarge(p));
    }
    let target = target as usize;
    match m {
        DgramMessage::Null => {
            let mut pt = vec![0u8; 1 + target - cfg.null_len];
            pt[0] = TYPE_NULL;
            Ok(encrypt(key, &pt, rng))
        }
        DgramMessage::Payload(data) => {
            if cfg.min_target_for(data.len()) > target {
                return Err(DgramSendError::MessageDoesNotFit { len: data.len(), target: p });
            }
            let pad = target - cfg.min_target_for(data.len());
            Ok(encrypt(key, &payload_plaintext(data, pad), rng))
        }
    }
}

pub fn dgram_recv(key: &AeadKey, c: &[u8]) -> DgramRecvOutcome {
    let cfg = DgramConfig::for_algorithm(key.algorithm());
    if c.len() < cfg.null_len {
        return DgramRecvOutcome::Null;
    }
    let nonce_len = key.algorithm().nonce_len();
    let nonce = Nonce::from_slice(&c[..nonce_len]).expect("nonce length");
    let Ok(pt) = aead::open(key, &nonce, &c[nonce_len..]) else {
        return DgramRecvOutcome::Error;
    };
    match pt.first() {
        Some(&TYPE_NULL) => return DgramRecvOutcome::Null,
        // Authentic but malformed; an honest sender never produces these.
        _ if pt.len() < 3 => return DgramRecvOutcome::Error,
        _ => {}
    }
    let len = u16::from_be_bytes([pt[1], pt[2]]) as usize;
    let len = len.min(pt.len() - 3);
    DgramRecvOutcome::Payload(pt[pt.len() - len..].to_vec())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DgramSender {
    key: AeadKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DgramReceiver {
    key: AeadKey,
}

impl DgramSender {
    pub fn new(key: AeadKey) -> Self {
        Self { key }
    }

    pub fn config(&self) -> DgramConfig {
        DgramConfig::for_algorithm(self.key.algorithm())
    }
}

impl DgramReceiver {
    pub fn new(key: AeadKey) -> Self {
        Self { key }
    }
}

impl DgramSend for DgramSender {
    fn send(&mut self, m: &DgramMessage, p: i64, rng: &mut dyn FepRng) -> Result<Vec<u8>, DgramSendError> {
        dgram_send(&self.key, m, p, rng)
    }
}

impl DgramRecv for DgramReceiver {
    fn recv(&mut self, c: &[u8]) -> DgramRecvOutcome {
        dgram_recv(&self.key, c)
    }
}

/// The datagram construction as a pluggable [`DgramChannel`].
#[derive(Clone, Copy, Debug, Default)]
pub struct EncryptedDgram {
    pub algorithm: AeadAlgorithm,
}

impl EncryptedDgram {
    pub const ID: &'static str = "fig3";

    pub fn new(algorithm: AeadAlgorithm) -> Self {
        Self { algorithm }
    }
}

impl DgramChannel for EncryptedDgram {
    fn id(&self) -> &str {
        match self.algorithm {
            AeadAlgorithm::ChaCha20Poly1305 => Self::ID,
            AeadAlgorithm::Aes256Gcm => "fig3-aes",
        }
    }

    fn init(&self, security_parameter: u32, rng: &mut dyn FepRng) -> Result<DgramEndpoints, AeadError> {
        let (ks, kr) = dgram_init(self.algorithm, security_parameter, rng)?;
        Ok(DgramEndpoints {
            sender: Box::new(DgramSender::new(ks)),
            receiver: Box::new(DgramReceiver::new(kr)),
        })
    }
}
