//! Length-additive AEAD used by both channel constructions.
//!
//! Every scheme exposed here has a fixed nonce size and a fixed tag size, and
//! `|seal(k, n, m)| = |m| + tag_len` for every input. The channels only rely
//! on those size contracts, so any scheme in [`AeadAlgorithm`] can back them.
//! Associated data is not supported.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::FepRng;

/// Nonce length shared by every supported scheme.
pub const NONCE_LEN: usize = 12;
/// Authentication tag length shared by every supported scheme.
pub const TAG_LEN: usize = 16;
/// Key length shared by every supported scheme.
pub const KEY_LEN: usize = 32;

/// Largest security parameter a 256-bit key can honour.
pub const MAX_SECURITY_PARAMETER: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AeadError {
    #[error("unsupported security parameter {0} (supported: 1..={MAX_SECURITY_PARAMETER})")]
    UnsupportedSecurityParameter(u32),
    #[error("invalid key length {got}, expected {expected}")]
    InvalidKeyLength { got: usize, expected: usize },
}

/// Authentication failure while opening a ciphertext.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("decryption failed")]
pub struct DecryptError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeadAlgorithm {
    #[default]
    ChaCha20Poly1305,
    Aes256Gcm,
}

impl AeadAlgorithm {
    pub const ALL: [AeadAlgorithm; 2] = [AeadAlgorithm::ChaCha20Poly1305, AeadAlgorithm::Aes256Gcm];

    pub fn nonce_len(self) -> usize {
        NONCE_LEN
    }

    pub fn tag_len(self) -> usize {
        TAG_LEN
    }

    pub fn key_len(self) -> usize {
        KEY_LEN
    }

    pub fn name(self) -> &'static str {
        match self {
            AeadAlgorithm::ChaCha20Poly1305 => "chacha20-poly1305",
            AeadAlgorithm::Aes256Gcm => "aes-256-gcm",
        }
    }
}

/// Size contract of a scheme as seen by one channel.
///
/// The datastream channel derives nonces from its sequence number and never
/// sends them, so its overhead is the tag alone. The datagram channel sends a
/// fresh nonce in front of every ciphertext, so its overhead covers both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeadParams {
    pub nonce_len: usize,
    pub tag_len: usize,
    pub overhead: usize,
}

impl AeadParams {
    pub fn stream(algorithm: AeadAlgorithm) -> Self {
        Self {
            nonce_len: algorithm.nonce_len(),
            tag_len: algorithm.tag_len(),
            overhead: algorithm.tag_len(),
        }
    }

    pub fn datagram(algorithm: AeadAlgorithm) -> Self {
        Self {
            nonce_len: algorithm.nonce_len(),
            tag_len: algorithm.tag_len(),
            overhead: algorithm.nonce_len() + algorithm.tag_len(),
        }
    }
}

#[derive(Clone)]
enum Cipher {
    ChaCha(chacha20poly1305::ChaCha20Poly1305),
    Aes(Box<aes_gcm::Aes256Gcm>),
}

/// Symmetric key together with its initialised cipher.
#[derive(Clone)]
pub struct AeadKey {
    algorithm: AeadAlgorithm,
    bytes: [u8; KEY_LEN],
    cipher: Cipher,
}

impl AeadKey {
    /// Wraps externally supplied key material, e.g. a key derived from a
    /// pre-shared secret.
    pub fn from_bytes(algorithm: AeadAlgorithm, bytes: &[u8]) -> Result<Self, AeadError> {
        let bytes: [u8; KEY_LEN] = bytes.try_into().map_err(|_| AeadError::InvalidKeyLength {
            got: bytes.len(),
            expected: KEY_LEN,
        })?;
        let cipher = match algorithm {
            AeadAlgorithm::ChaCha20Poly1305 => {
                Cipher::ChaCha(chacha20poly1305::ChaCha20Poly1305::new(&bytes.into()))
            }
            AeadAlgorithm::Aes256Gcm => Cipher::Aes(Box::new(aes_gcm::Aes256Gcm::new(&bytes.into()))),
        };
        Ok(Self { algorithm, bytes, cipher })
    }

    pub fn algorithm(&self) -> AeadAlgorithm {
        self.algorithm
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }
}

impl PartialEq for AeadKey {
    fn eq(&self, other: &Self) -> bool {
        self.algorithm == other.algorithm && self.bytes == other.bytes
    }
}

impl Eq for AeadKey {}

impl fmt::Debug for AeadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AeadKey")
            .field("algorithm", &self.algorithm)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Nonce([u8; NONCE_LEN]);

impl Nonce {
    /// Big-endian sequence number in the low-order bytes of a zeroed nonce.
    pub fn from_seqno(seqno: u64) -> Self {
        let mut n = [0u8; NONCE_LEN];
        n[NONCE_LEN - 8..].copy_from_slice(&seqno.to_be_bytes());
        Self(n)
    }

    pub fn random(rng: &mut dyn FepRng) -> Self {
        let mut n = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut n);
        Self(n)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

/// Draws a fresh key for `algorithm`. Any security parameter up to the key
/// size is served by the same 256-bit key.
pub fn keygen(
    algorithm: AeadAlgorithm,
    security_parameter: u32,
    rng: &mut dyn FepRng,
) -> Result<AeadKey, AeadError> {
    if security_parameter == 0 || security_parameter > MAX_SECURITY_PARAMETER {
        return Err(AeadError::UnsupportedSecurityParameter(security_parameter));
    }
    let mut bytes = [0u8; KEY_LEN];
    rng.fill_bytes(&mut bytes);
    AeadKey::from_bytes(algorithm, &bytes)
}

pub fn seal(key: &AeadKey, nonce: &Nonce, plaintext: &[u8]) -> Vec<u8> {
    let n = nonce.as_bytes().into();
    let out = match &key.cipher {
        Cipher::ChaCha(c) => c.encrypt(n, plaintext),
        Cipher::Aes(c) => c.encrypt(n, plaintext),
    };
    // Both backends only fail for inputs beyond 2^36 bytes.
    out.expect("plaintext within AEAD limits")
}

pub fn open(key: &AeadKey, nonce: &Nonce, ciphertext: &[u8]) -> Result<Vec<u8>, DecryptError> {
    let n = nonce.as_bytes().into();
    match &key.cipher {
        Cipher::ChaCha(c) => c.decrypt(n, ciphertext),
        Cipher::Aes(c) => c.decrypt(n, ciphertext),
    }
    .map_err(|_| DecryptError)
}
