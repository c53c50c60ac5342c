//! Deliberately flawed stream channels.
//!
//! Each foil breaks exactly one property so the harness can be checked
//! against a known answer:
//!
//! - [`AuthFailClose`]: length-prefixed AEAD records, closes as soon as a
//!   record fails to authenticate.
//! - [`DrainClose`]: same records, but after a failure keeps reading until the
//!   connection has carried a per-session random number of bytes, then closes.
//! - [`PlainLenStream`]: never closes, but each record starts with a cleartext
//!   two-byte length.
//!
//! None of them honour shaping requests; every non-empty `send` emits whole
//! records immediately.

use rand::Rng;

use crate::aead::{self, AeadAlgorithm, AeadError, AeadKey, Nonce, KEY_LEN, TAG_LEN};
use crate::channel::{ShapeRequest, StreamChannel, StreamEndpoints, StreamError, StreamRecv, StreamRecvOutcome, StreamSend};
use crate::rng::FepRng;

/// Largest plaintext per record, as in common length-prefixed AEAD proxies.
pub const MAX_RECORD_PAYLOAD: usize = 0x3fff;

/// Bytes of the encrypted length block of a record.
pub const RECORD_LEN_BLOCK: usize = 2 + TAG_LEN;

fn keygen(security_parameter: u32, rng: &mut dyn FepRng) -> Result<AeadKey, AeadError> {
    aead::keygen(AeadAlgorithm::ChaCha20Poly1305, security_parameter, rng)
}

#[derive(Clone)]
struct RecordSender {
    key: AeadKey,
    seqno: u64,
}

impl RecordSender {
    fn send(&mut self, m: &[u8]) -> Result<Vec<u8>, StreamError> {
        let mut out = Vec::new();
        for chunk in m.chunks(MAX_RECORD_PAYLOAD) {
            if self.seqno > u64::MAX - 3 {
                return Err(StreamError::SequenceExhausted);
            }
            let len = (chunk.len() as u16).to_be_bytes();
            out.extend(aead::seal(&self.key, &Nonce::from_seqno(self.seqno), &len));
            out.extend(aead::seal(&self.key, &Nonce::from_seqno(self.seqno + 1), chunk));
            self.seqno += 2;
        }
        Ok(out)
    }
}

impl StreamSend for RecordSender {
    fn send(&mut self, m: &[u8], _shape: ShapeRequest) -> Result<Vec<u8>, StreamError> {
        RecordSender::send(self, m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum OnFailure {
    Close,
    /// Close once this many bytes have been received in total.
    DrainTo(usize),
}

#[derive(Clone)]
struct RecordReceiver {
    key: AeadKey,
    seqno: u64,
    buf: Vec<u8>,
    total: usize,
    failed: bool,
    closed: bool,
    on_failure: OnFailure,
}

impl RecordReceiver {
    fn new(key: AeadKey, on_failure: OnFailure) -> Self {
        Self { key, seqno: 0, buf: Vec::new(), total: 0, failed: false, closed: false, on_failure }
    }

    fn should_close(&self) -> bool {
        match self.on_failure {
            OnFailure::Close => true,
            OnFailure::DrainTo(limit) => self.total >= limit,
        }
    }

    fn recv(&mut self, c: &[u8]) -> StreamRecvOutcome {
        if self.closed {
            return StreamRecvOutcome::empty();
        }
        self.total += c.len();
        let mut message = Vec::new();
        if !self.failed {
            self.buf.extend_from_slice(c);
            self.failed = self.decode(&mut message).is_err();
            if self.failed {
                self.buf.clear();
            }
        }
        if self.failed && self.should_close() {
            self.closed = true;
            return StreamRecvOutcome { message, close: true };
        }
        StreamRecvOutcome { message, close: false }
    }

    fn decode(&mut self, out: &mut Vec<u8>) -> Result<(), aead::DecryptError> {
        loop {
            if self.buf.len() < RECORD_LEN_BLOCK {
                return Ok(());
            }
            let len_pt = aead::open(&self.key, &Nonce::from_seqno(self.seqno), &self.buf[..RECORD_LEN_BLOCK])?;
            let len = u16::from_be_bytes([len_pt[0], len_pt[1]]) as usize;
            let end = RECORD_LEN_BLOCK + len + TAG_LEN;
            if self.buf.len() < end {
                return Ok(());
            }
            let m = aead::open(&self.key, &Nonce::from_seqno(self.seqno + 1), &self.buf[RECORD_LEN_BLOCK..end])?;
            out.extend(m);
            self.buf.drain(..end);
            self.seqno += 2;
        }
    }

    fn snapshot(&self) -> Vec<u8> {
        let mut s = Vec::new();
        s.extend(self.key.as_bytes());
        s.extend(self.seqno.to_be_bytes());
        s.extend((self.total as u64).to_be_bytes());
        s.push(self.failed as u8);
        s.push(self.closed as u8);
        s.extend(self.buf.iter());
        s
    }
}

impl StreamRecv for RecordReceiver {
    fn recv(&mut self, c: &[u8]) -> StreamRecvOutcome {
        RecordReceiver::recv(self, c)
    }

    fn clone_box(&self) -> Box<dyn StreamRecv> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Vec<u8> {
        RecordReceiver::snapshot(self)
    }
}

/// Closes immediately when a record fails to authenticate.
#[derive(Clone, Copy, Debug, Default)]
pub struct AuthFailClose;

impl AuthFailClose {
    pub const ID: &'static str = "foil-authfail";
}

impl StreamChannel for AuthFailClose {
    fn id(&self) -> &str {
        Self::ID
    }

    fn init(&self, security_parameter: u32, rng: &mut dyn FepRng) -> Result<StreamEndpoints, AeadError> {
        let key = keygen(security_parameter, rng)?;
        Ok(StreamEndpoints {
            sender: Box::new(RecordSender { key: key.clone(), seqno: 0 }),
            receiver: Box::new(RecordReceiver::new(key, OnFailure::Close)),
        })
    }
}

/// After an authentication failure, closes once the total number of bytes
/// received reaches a threshold drawn per session from
/// `[0.75 * nominal, 1.25 * nominal]`.
#[derive(Clone, Copy, Debug)]
pub struct DrainClose {
    pub nominal: usize,
}

impl DrainClose {
    pub const ID: &'static str = "foil-drain";
    pub const DEFAULT_NOMINAL: usize = 4096;

    pub fn new(nominal: usize) -> Self {
        Self { nominal }
    }

    pub fn threshold_range(&self) -> (usize, usize) {
        let lo = self.nominal * 3 / 4;
        let hi = (self.nominal * 5 / 4).max(lo);
        (lo, hi)
    }
}

impl Default for DrainClose {
    fn default() -> Self {
        Self::new(Self::DEFAULT_NOMINAL)
    }
}

impl StreamChannel for DrainClose {
    fn id(&self) -> &str {
        Self::ID
    }

    fn init(&self, security_parameter: u32, rng: &mut dyn FepRng) -> Result<StreamEndpoints, AeadError> {
        let key = keygen(security_parameter, rng)?;
        let (lo, hi) = self.threshold_range();
        let threshold = rng.gen_range(lo..=hi);
        Ok(StreamEndpoints {
            sender: Box::new(RecordSender { key: key.clone(), seqno: 0 }),
            receiver: Box::new(RecordReceiver::new(key, OnFailure::DrainTo(threshold))),
        })
    }
}

#[derive(Clone)]
struct PlainLenSender {
    key: AeadKey,
    seqno: u64,
}

impl StreamSend for PlainLenSender {
    fn send(&mut self, m: &[u8], _shape: ShapeRequest) -> Result<Vec<u8>, StreamError> {
        let mut out = Vec::new();
        for chunk in m.chunks(usize::from(u16::MAX) - TAG_LEN) {
            if self.seqno == u64::MAX {
                return Err(StreamError::SequenceExhausted);
            }
            out.extend((chunk.len() as u16).to_be_bytes());
            out.extend(aead::seal(&self.key, &Nonce::from_seqno(self.seqno), chunk));
            self.seqno += 1;
        }
        Ok(out)
    }
}

#[derive(Clone)]
struct PlainLenReceiver {
    key: AeadKey,
    seqno: u64,
    buf: Vec<u8>,
    failed: bool,
}

impl StreamRecv for PlainLenReceiver {
    fn recv(&mut self, c: &[u8]) -> StreamRecvOutcome {
        if self.failed {
            return StreamRecvOutcome::empty();
        }
        self.buf.extend_from_slice(c);
        let mut message = Vec::new();
        while self.buf.len() >= 2 {
            let end = 2 + u16::from_be_bytes([self.buf[0], self.buf[1]]) as usize + TAG_LEN;
            if self.buf.len() < end {
                break;
            }
            match aead::open(&self.key, &Nonce::from_seqno(self.seqno), &self.buf[2..end]) {
                Ok(m) => message.extend(m),
                Err(_) => {
                    self.failed = true;
                    self.buf.clear();
                    return StreamRecvOutcome::empty();
                }
            }
            self.buf.drain(..end);
            self.seqno += 1;
        }
        StreamRecvOutcome { message, close: false }
    }

    fn clone_box(&self) -> Box<dyn StreamRecv> {
        Box::new(self.clone())
    }

    fn snapshot(&self) -> Vec<u8> {
        let mut s = Vec::with_capacity(KEY_LEN + 9 + self.buf.len());
        s.extend(self.key.as_bytes());
        s.extend(self.seqno.to_be_bytes());
        s.push(self.failed as u8);
        s.extend(self.buf.iter());
        s
    }
}

/// Authenticated records behind a cleartext two-byte length. Never closes.
#[derive(Clone, Copy, Debug, Default)]
pub struct PlainLenStream;

impl PlainLenStream {
    pub const ID: &'static str = "foil-plainlen";
}

impl StreamChannel for PlainLenStream {
    fn id(&self) -> &str {
        Self::ID
    }

    fn init(&self, security_parameter: u32, rng: &mut dyn FepRng) -> Result<StreamEndpoints, AeadError> {
        let key = keygen(security_parameter, rng)?;
        Ok(StreamEndpoints {
            sender: Box::new(PlainLenSender { key: key.clone(), seqno: 0 }),
            receiver: Box::new(PlainLenReceiver { key, seqno: 0, buf: Vec::new(), failed: false }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn endpoints(ch: &dyn StreamChannel, seed: u64) -> StreamEndpoints {
        ch.init(128, &mut seeded_rng(seed)).unwrap()
    }

    fn roundtrip(ch: &dyn StreamChannel) {
        let mut e = endpoints(ch, 1);
        let mut wire = Vec::new();
        for m in [&b"a"[..], b"", b"hello world", &[7u8; 20_000]] {
            wire.extend(e.sender.send(m, ShapeRequest::exact(5)).unwrap());
        }
        let mut out = Vec::new();
        for chunk in wire.chunks(13) {
            let r = e.receiver.recv(chunk);
            assert!(!r.close);
            out.extend(r.message);
        }
        let mut expected = b"ahello world".to_vec();
        expected.extend([7u8; 20_000]);
        assert_eq!(out, expected);
    }

    #[test]
    fn foils_are_correct_when_untouched() {
        roundtrip(&AuthFailClose);
        roundtrip(&DrainClose::default());
        roundtrip(&PlainLenStream);
    }

    #[test]
    fn record_sizes() {
        let mut e = endpoints(&AuthFailClose, 2);
        assert_eq!(e.sender.send(b"x", ShapeRequest::exact(1)).unwrap().len(), 35);
        assert!(e.sender.send(b"", ShapeRequest::new(0, true)).unwrap().is_empty());
        let mut e = endpoints(&PlainLenStream, 2);
        let c = e.sender.send(b"x", ShapeRequest::exact(1)).unwrap();
        assert_eq!(c.len(), 3 + TAG_LEN);
        assert_eq!(&c[..2], &[0, 1]);
    }

    #[test]
    fn authfail_closes_once_on_tamper() {
        let mut e = endpoints(&AuthFailClose, 3);
        let mut c = e.sender.send(b"hello", ShapeRequest::unshaped()).unwrap();
        c[0] ^= 1;
        assert!(e.receiver.recv(&c).close);
        assert!(!e.receiver.recv(b"more").close);
    }

    #[test]
    fn drain_closes_at_threshold() {
        let ch = DrainClose::new(1000);
        let (lo, hi) = ch.threshold_range();
        assert_eq!((lo, hi), (750, 1250));
        let mut e = endpoints(&ch, 4);
        let mut c = e.sender.send(&[0u8; 3000], ShapeRequest::unshaped()).unwrap();
        c[0] ^= 1;
        let mut closed_at = None;
        let mut total = 0;
        for chunk in c.chunks(10) {
            total += chunk.len();
            let r = e.receiver.recv(chunk);
            assert!(r.message.is_empty());
            if r.close {
                assert!(closed_at.is_none());
                closed_at = Some(total);
            }
        }
        let at = closed_at.unwrap();
        assert!(at >= lo && at < hi + 10, "{at}");
    }

    #[test]
    fn plainlen_fails_silently() {
        let mut e = endpoints(&PlainLenStream, 5);
        let mut c = e.sender.send(b"hello", ShapeRequest::unshaped()).unwrap();
        c[4] ^= 1;
        let r = e.receiver.recv(&c);
        assert_eq!(r, StreamRecvOutcome::empty());
        let good = e.sender.send(b"again", ShapeRequest::unshaped()).unwrap();
        assert_eq!(e.receiver.recv(&good), StreamRecvOutcome::empty());
    }
}
