//! Datastream fully encrypted channel.
//!
//! The sender turns buffered plaintext into pairs of AEAD ciphertexts: a
//! fixed-size length block carrying the length of the next block, then a
//! payload block holding a two-byte padding length, that many zero bytes, and
//! up to `il` bytes of data. Pairs accumulate in an output buffer from which
//! each `send` emits exactly the requested number of bytes (or at least that
//! many when flushing), padding a pair as needed so the request can be met.
//!
//! Wire layout of one pair, all integers big-endian:
//!
//! ```text
//! Enc(seqno,   u16 ct_len)                              2 + tag bytes
//! Enc(seqno+1, u16 pad_len || 0^pad_len || data)        ct_len bytes
//! ```
//!
//! The receiver never closes and never reports errors in-band: the first
//! authentication failure moves it into a silent fail state.

use std::collections::VecDeque;

use thiserror::Error;

use crate::aead::{self, AeadAlgorithm, AeadError, AeadKey, Nonce, KEY_LEN};
use crate::channel::{
    ShapeRequest, StreamChannel, StreamEndpoints, StreamError, StreamRecv, StreamRecvOutcome, StreamSend,
};
use crate::rng::FepRng;

/// Largest payload block ciphertext, bounded by the two-byte length field.
pub const MAX_PAYLOAD_CT: usize = (1 << 16) - 1;

/// Highest sequence number from which a full pair (two nonces) can still be
/// produced without the counter passing `2^64 - 2`.
const LAST_PAIR_SEQNO: u64 = u64::MAX - 3;

/// Size constants of the block format for a given tag length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamConfig {
    pub tag_len: usize,
    /// `ℓ_len`: every length block is `2 + tag_len` bytes.
    pub len_block_len: usize,
    /// `ol`: largest payload block ciphertext.
    pub max_payload_ct: usize,
    /// `il`: largest data chunk that fits in one payload block.
    pub max_plaintext_per_block: usize,
}

impl StreamConfig {
    pub const fn new(tag_len: usize) -> Self {
        Self {
            tag_len,
            len_block_len: 2 + tag_len,
            max_payload_ct: MAX_PAYLOAD_CT,
            max_plaintext_per_block: (1 << 16) - 3 - tag_len,
        }
    }

    pub fn for_algorithm(algorithm: AeadAlgorithm) -> Self {
        Self::new(algorithm.tag_len())
    }

    /// Length of the smallest possible pair: no data, no padding.
    pub const fn min_pair_len(&self) -> usize {
        self.len_block_len + 2 + self.tag_len
    }

    /// Length of the largest possible pair.
    pub const fn max_pair_len(&self) -> usize {
        self.len_block_len + self.max_payload_ct
    }
}

/// Free-function form of [`StreamConfig::min_pair_len`].
pub fn stream_min_pair_len(config: &StreamConfig) -> usize {
    config.min_pair_len()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateDecodeError {
    #[error("state encoding truncated")]
    Truncated,
    #[error("unknown algorithm tag {0}")]
    UnknownAlgorithm(u8),
    #[error("trailing bytes after state encoding")]
    Trailing,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSender {
    key: AeadKey,
    config: StreamConfig,
    seqno: u64,
    buf: VecDeque<u8>,
    obuf: VecDeque<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamReceiver {
    key: AeadKey,
    config: StreamConfig,
    seqno: u64,
    buf: VecDeque<u8>,
    fail: bool,
}

/// Fresh sender and receiver sharing one new key.
pub fn stream_init(
    algorithm: AeadAlgorithm,
    security_parameter: u32,
    rng: &mut dyn FepRng,
) -> Result<(StreamSender, StreamReceiver), AeadError> {
    let key = aead::keygen(algorithm, security_parameter, rng)?;
    Ok((StreamSender::new(key.clone()), StreamReceiver::new(key)))
}

impl StreamSender {
    pub fn new(key: AeadKey) -> Self {
        let config = StreamConfig::for_algorithm(key.algorithm());
        Self { key, config, seqno: 0, buf: VecDeque::new(), obuf: VecDeque::new() }
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn key(&self) -> &AeadKey {
        &self.key
    }

    pub fn seqno(&self) -> u64 {
        self.seqno
    }

    pub fn buffered_plaintext(&self) -> usize {
        self.buf.len()
    }

    pub fn buffered_ciphertext(&self) -> usize {
        self.obuf.len()
    }

    /// Appends `m` to the plaintext buffer and emits a fragment of the
    /// ciphertext stream.
    ///
    /// With `p = shape.target_len ≥ 0` the fragment is exactly `p` bytes when
    /// not flushing. When flushing, all buffered plaintext is encrypted and
    /// the whole output buffer is emitted, at least `p` bytes. A negative `p`
    /// encrypts the buffered plaintext into minimally padded pairs and emits
    /// everything.
    pub fn send(&mut self, m: &[u8], shape: ShapeRequest) -> Result<Vec<u8>, StreamError> {
        self.buf.extend(m);
        let Ok(p) = usize::try_from(shape.target_len) else {
            while !self.buf.is_empty() {
                self.push_pair(None)?;
            }
            return Ok(self.obuf.drain(..).collect());
        };
        loop {
            if self.obuf.len() >= p && (!shape.flush || self.buf.is_empty()) {
                let n = if shape.flush { self.obuf.len() } else { p };
                return Ok(self.obuf.drain(..n).collect());
            }
            self.push_pair(Some(p))?;
        }
    }

    /// Encrypts up to `il` buffered bytes into one pair, padded so that the
    /// output buffer reaches `target` bytes where the block size allows.
    fn push_pair(&mut self, target: Option<usize>) -> Result<(), StreamError> {
        if self.seqno > LAST_PAIR_SEQNO {
            return Err(StreamError::SequenceExhausted);
        }
        let cfg = self.config;
        let data_len = self.buf.len().min(cfg.max_plaintext_per_block);
        let unpadded = 2 + data_len + cfg.tag_len;
        let ct_len = match target {
            Some(p) => {
                let room = p.saturating_sub(self.obuf.len() + cfg.len_block_len);
                unpadded.max(room.min(cfg.max_payload_ct))
            }
            None => unpadded,
        };
        let pad_len = ct_len - unpadded;

        let length_block = aead::seal(&self.key, &Nonce::from_seqno(self.seqno), &(ct_len as u16).to_be_bytes());

        let mut payload = Vec::with_capacity(2 + pad_len + data_len);
        payload.extend_from_slice(&(pad_len as u16).to_be_bytes());
        payload.resize(2 + pad_len, 0);
        payload.extend(self.buf.drain(..data_len));
        let payload_block = aead::seal(&self.key, &Nonce::from_seqno(self.seqno + 1), &payload);
        debug_assert_eq!(payload_block.len(), ct_len);

        self.seqno += 2;
        self.obuf.extend(length_block);
        self.obuf.extend(payload_block);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = encode_key_and_seqno(&self.key, self.seqno);
        encode_queue(&mut out, &self.buf);
        encode_queue(&mut out, &self.obuf);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StateDecodeError> {
        let mut r = Reader(bytes);
        let (key, seqno) = r.key_and_seqno()?;
        let buf = r.queue()?;
        let obuf = r.queue()?;
        r.finish()?;
        let config = StreamConfig::for_algorithm(key.algorithm());
        Ok(Self { key, config, seqno, buf, obuf })
    }

    #[cfg(test)]
    pub(crate) fn set_seqno(&mut self, seqno: u64) {
        self.seqno = seqno;
    }
}

impl StreamReceiver {
    pub fn new(key: AeadKey) -> Self {
        let config = StreamConfig::for_algorithm(key.algorithm());
        Self { key, config, seqno: 0, buf: VecDeque::new(), fail: false }
    }

    pub fn seqno(&self) -> u64 {
        self.seqno
    }

    pub fn is_failed(&self) -> bool {
        self.fail
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Buffers `c` and returns the data of every pair completed so far. The
    /// close flag is never set. Any authentication failure discards this
    /// call's output and silences the receiver for good.
    pub fn recv(&mut self, c: &[u8]) -> StreamRecvOutcome {
        if self.fail {
            return StreamRecvOutcome::empty();
        }
        self.buf.extend(c);
        let len_block_len = self.config.len_block_len;
        let mut message = Vec::new();
        while self.buf.len() >= len_block_len {
            if self.seqno > LAST_PAIR_SEQNO {
                return self.enter_fail();
            }
            let length_block: Vec<u8> = self.buf.range(..len_block_len).copied().collect();
            let ct_len = match aead::open(&self.key, &Nonce::from_seqno(self.seqno), &length_block) {
                Ok(field) if field.len() == 2 => u16::from_be_bytes([field[0], field[1]]) as usize,
                _ => return self.enter_fail(),
            };
            if self.buf.len() < len_block_len + ct_len {
                break;
            }
            self.buf.drain(..len_block_len);
            let payload_block: Vec<u8> = self.buf.drain(..ct_len).collect();
            let opened = aead::open(&self.key, &Nonce::from_seqno(self.seqno + 1), &payload_block);
            self.seqno += 2;
            let payload = match opened {
                Ok(p) if p.len() >= 2 => p,
                _ => return self.enter_fail(),
            };
            let pad_field = u16::from_be_bytes([payload[0], payload[1]]) as usize;
            let pad_len = pad_field.min(payload.len() - 2);
            message.extend_from_slice(&payload[2 + pad_len..]);
        }
        StreamRecvOutcome { message, close: false }
    }

    fn enter_fail(&mut self) -> StreamRecvOutcome {
        self.fail = true;
        StreamRecvOutcome::empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = encode_key_and_seqno(&self.key, self.seqno);
        out.push(self.fail as u8);
        encode_queue(&mut out, &self.buf);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StateDecodeError> {
        let mut r = Reader(bytes);
        let (key, seqno) = r.key_and_seqno()?;
        let fail = r.take(1)?[0] != 0;
        let buf = r.queue()?;
        r.finish()?;
        let config = StreamConfig::for_algorithm(key.algorithm());
        Ok(Self { key, config, seqno, buf, fail })
    }
}

fn algorithm_tag(a: AeadAlgorithm) -> u8 {
    match a {
        AeadAlgorithm::ChaCha20Poly1305 => 1,
        AeadAlgorithm::Aes256Gcm => 2,
    }
}

fn encode_key_and_seqno(key: &AeadKey, seqno: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + KEY_LEN + 8);
    out.push(algorithm_tag(key.algorithm()));
    out.extend_from_slice(key.as_bytes());
    out.extend_from_slice(&seqno.to_be_bytes());
    out
}

fn encode_queue(out: &mut Vec<u8>, q: &VecDeque<u8>) {
    out.extend_from_slice(&(q.len() as u64).to_be_bytes());
    out.extend(q.iter());
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StateDecodeError> {
        if self.0.len() < n {
            return Err(StateDecodeError::Truncated);
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, StateDecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn key_and_seqno(&mut self) -> Result<(AeadKey, u64), StateDecodeError> {
        let algorithm = match self.take(1)?[0] {
            1 => AeadAlgorithm::ChaCha20Poly1305,
            2 => AeadAlgorithm::Aes256Gcm,
            t => return Err(StateDecodeError::UnknownAlgorithm(t)),
        };
        let key = AeadKey::from_bytes(algorithm, self.take(KEY_LEN)?).expect("fixed key length");
        Ok((key, self.u64()?))
    }

    fn queue(&mut self) -> Result<VecDeque<u8>, StateDecodeError> {
        let n = usize::try_from(self.u64()?).map_err(|_| StateDecodeError::Truncated)?;
        Ok(self.take(n)?.iter().copied().collect())
    }

    fn finish(self) -> Result<(), StateDecodeError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(StateDecodeError::Trailing)
        }
    }
}

impl StreamSend for StreamSender {
    fn send(&mut self, m: &[u8], shape: ShapeRequest) -> Result<Vec<u8>, StreamError> {
        StreamSender::send(self, m, shape)
    }
}

impl StreamRecv for StreamReceiver {
    fn recv(&mut self, c: &[u8]) -> StreamRecvOutcome {
        StreamReceiver::recv(self, c)
    }

    fn clone_box(&self) -> Box<dyn StreamRecv> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Vec<u8> {
        self.to_bytes()
    }
}

/// The datastream construction as a pluggable [`StreamChannel`].
#[derive(Clone, Copy, Debug, Default)]
pub struct EncryptedStream {
    pub algorithm: AeadAlgorithm,
}

impl EncryptedStream {
    pub const ID: &'static str = "fig2";

    pub fn new(algorithm: AeadAlgorithm) -> Self {
        Self { algorithm }
    }
}

impl StreamChannel for EncryptedStream {
    fn id(&self) -> &str {
        match self.algorithm {
            AeadAlgorithm::ChaCha20Poly1305 => Self::ID,
            AeadAlgorithm::Aes256Gcm => "fig2-aes",
        }
    }

    fn init(&self, security_parameter: u32, rng: &mut dyn FepRng) -> Result<StreamEndpoints, AeadError> {
        let (sender, receiver) = stream_init(self.algorithm, security_parameter, rng)?;
        Ok(StreamEndpoints { sender: Box::new(sender), receiver: Box::new(receiver) })
    }
}
