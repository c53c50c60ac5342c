//! Deterministic adversarial network between one sender and one receiver.
//!
//! Datastream sessions re-chunk the sender's byte stream (fragmenting and
//! merging `Send` outputs), optionally deliver only a prefix, and XOR-tamper
//! selected byte offsets. Datagram sessions drop, duplicate, delay and tamper
//! individual datagrams. Everything is driven by a seed; identical seeds give
//! byte-identical transcripts.
//!
//! Channels here are unidirectional and receivers never see the sender, so
//! sends run first and deliveries follow. Any interleaving of the two yields
//! the same receiver inputs and therefore the same transcript.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aead::AeadError;
use crate::channel::{
    DgramChannel, DgramMessage, DgramRecvOutcome, ShapeRequest, StreamChannel, StreamError, StreamRecvOutcome,
};
use crate::rng::stream_rng;
use crate::DEFAULT_SECURITY_PARAMETER;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetsimError {
    #[error("channel init failed: {0}")]
    Init(#[from] AeadError),
    #[error("send failed: {0}")]
    Send(#[from] StreamError),
    #[error("tamper offset {offset} beyond delivered stream of {len} bytes")]
    TamperOutOfRange { offset: usize, len: usize },
    #[error("delivery limit {limit} beyond sent stream of {len} bytes")]
    DeliveryBeyondStream { limit: usize, len: usize },
    #[error("{fates} fates given for {datagrams} datagrams")]
    FateCountMismatch { fates: usize, datagrams: usize },
    #[error("tamper targets datagram {index}, which does not exist or was not sent")]
    TamperMissingDatagram { index: usize },
    #[error("tamper offset {offset} beyond datagram {index} of {len} bytes")]
    TamperBeyondDatagram { index: usize, offset: usize, len: usize },
}

/// How a delivered byte range is cut into `Recv` inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkPolicy {
    /// One chunk holding everything.
    Whole,
    /// Chunks of exactly `n` bytes, the last one possibly shorter.
    Fixed(usize),
    /// Chunk sizes drawn uniformly from `min..=max`.
    Uniform { min: usize, max: usize },
}

/// Cuts `bytes` into chunks whose concatenation is `bytes`.
pub fn chunk_stream(bytes: &[u8], policy: &ChunkPolicy, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = stream_rng(seed, 7);
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let size = match *policy {
            ChunkPolicy::Whole => bytes.len(),
            ChunkPolicy::Fixed(n) => n.max(1),
            ChunkPolicy::Uniform { min, max } => {
                let lo = min.max(1);
                rng.gen_range(lo..=max.max(lo))
            }
        };
        let end = (pos + size).min(bytes.len());
        out.push(bytes[pos..end].to_vec());
        pos = end;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperEvent {
    /// Offset into the sender's concatenated output.
    pub offset: usize,
    pub mask: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSchedule {
    pub seed: u64,
    pub policy: ChunkPolicy,
    #[serde(default)]
    pub tamper: Vec<TamperEvent>,
    /// Deliver only this many leading bytes; `None` delivers everything.
    #[serde(default)]
    pub deliver_limit: Option<usize>,
}

impl StreamSchedule {
    pub fn honest(seed: u64, policy: ChunkPolicy) -> Self {
        Self { seed, policy, tamper: Vec::new(), deliver_limit: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInput {
    #[serde(with = "crate::hexbytes")]
    pub message: Vec<u8>,
    pub shape: ShapeRequest,
}

impl StreamInput {
    pub fn new(message: impl Into<Vec<u8>>, shape: ShapeRequest) -> Self {
        Self { message: message.into(), shape }
    }
}

/// Record of a datastream session: `M, P, F, C` on the sending side and
/// `C', M', CL` on the receiving side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamTranscript {
    pub kind: String,
    pub channel: String,
    pub seed: u64,
    pub inputs: Vec<StreamInput>,
    #[serde(with = "crate::hexbytes::list")]
    pub sent: Vec<Vec<u8>>,
    #[serde(with = "crate::hexbytes::list")]
    pub recv_inputs: Vec<Vec<u8>>,
    pub outputs: Vec<StreamRecvOutcome>,
    pub tampered: bool,
}

impl StreamTranscript {
    pub fn sent_concat(&self) -> Vec<u8> {
        self.sent.concat()
    }

    pub fn received_concat(&self) -> Vec<u8> {
        self.recv_inputs.concat()
    }

    pub fn message_concat(&self) -> Vec<u8> {
        self.inputs.iter().flat_map(|i| i.message.iter().copied()).collect()
    }

    pub fn output_concat(&self) -> Vec<u8> {
        self.outputs.iter().flat_map(|o| o.message.iter().copied()).collect()
    }

    pub fn closes(&self) -> Vec<bool> {
        self.outputs.iter().map(|o| o.close).collect()
    }
}

pub fn run_stream_session(
    inputs: &[StreamInput],
    schedule: &StreamSchedule,
    channel: &dyn StreamChannel,
) -> Result<StreamTranscript, NetsimError> {
    let mut endpoints = channel.init(DEFAULT_SECURITY_PARAMETER, &mut stream_rng(schedule.seed, 0))?;
    let mut sent = Vec::with_capacity(inputs.len());
    for input in inputs {
        sent.push(endpoints.sender.send(&input.message, input.shape)?);
    }
    let mut wire: Vec<u8> = sent.concat();
    let limit = schedule.deliver_limit.unwrap_or(wire.len());
    if limit > wire.len() {
        return Err(NetsimError::DeliveryBeyondStream { limit, len: wire.len() });
    }
    wire.truncate(limit);
    for t in &schedule.tamper {
        let byte = wire
            .get_mut(t.offset)
            .ok_or(NetsimError::TamperOutOfRange { offset: t.offset, len: limit })?;
        *byte ^= t.mask;
    }
    let recv_inputs = chunk_stream(&wire, &schedule.policy, schedule.seed);
    let outputs = recv_inputs.iter().map(|c| endpoints.receiver.recv(c)).collect();
    Ok(StreamTranscript {
        kind: "stream-session".into(),
        channel: channel.id().to_string(),
        seed: schedule.seed,
        inputs: inputs.to_vec(),
        sent,
        recv_inputs,
        outputs,
        tampered: schedule.tamper.iter().any(|t| t.mask != 0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    Deliver,
    Drop,
    /// Delivered once plus `n` extra copies.
    Duplicate(usize),
    /// Delivered `n` slots late.
    Delay(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FatePlan {
    /// One fate per datagram.
    Explicit(Vec<Fate>),
    /// Independent draws per datagram.
    Random { drop: f64, duplicate: f64, delay: f64, max_copies: usize, max_delay: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgramTamper {
    pub index: usize,
    pub offset: usize,
    pub mask: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgramSchedule {
    pub seed: u64,
    pub fates: FatePlan,
    #[serde(default)]
    pub tamper: Vec<DgramTamper>,
}

impl DgramSchedule {
    pub fn in_order(seed: u64, n: usize) -> Self {
        Self { seed, fates: FatePlan::Explicit(vec![Fate::Deliver; n]), tamper: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgramInput {
    pub message: DgramMessage,
    pub target_len: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgramSendRecord {
    #[serde(with = "crate::hexbytes")]
    pub datagram: Vec<u8>,
    /// Send error text; the datagram is empty and never delivered.
    pub error: Option<String>,
    pub fate: Option<Fate>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgramDelivery {
    pub index: usize,
    pub copy: usize,
    pub tampered: bool,
    pub outcome: DgramRecvOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgramTranscript {
    pub kind: String,
    pub channel: String,
    pub seed: u64,
    pub inputs: Vec<DgramInput>,
    pub sends: Vec<DgramSendRecord>,
    pub deliveries: Vec<DgramDelivery>,
}

fn draw_fate(rng: &mut impl Rng, plan: &FatePlan, i: usize) -> Fate {
    match plan {
        FatePlan::Explicit(f) => f[i],
        FatePlan::Random { drop, duplicate, delay, max_copies, max_delay } => {
            let u: f64 = rng.gen();
            if u < *drop {
                Fate::Drop
            } else if u < drop + duplicate {
                Fate::Duplicate(rng.gen_range(1..=(*max_copies).max(1)))
            } else if u < drop + duplicate + delay {
                Fate::Delay(rng.gen_range(1..=(*max_delay).max(1)))
            } else {
                Fate::Deliver
            }
        }
    }
}

pub fn run_dgram_session(
    inputs: &[DgramInput],
    schedule: &DgramSchedule,
    channel: &dyn DgramChannel,
) -> Result<DgramTranscript, NetsimError> {
    if let FatePlan::Explicit(f) = &schedule.fates {
        if f.len() != inputs.len() {
            return Err(NetsimError::FateCountMismatch { fates: f.len(), datagrams: inputs.len() });
        }
    }
    let mut endpoints = channel.init(DEFAULT_SECURITY_PARAMETER, &mut stream_rng(schedule.seed, 0))?;
    let mut fate_rng = stream_rng(schedule.seed, 1);
    let mut send_rng = stream_rng(schedule.seed, 2);

    let mut sends = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let fate = draw_fate(&mut fate_rng, &schedule.fates, i);
        sends.push(match endpoints.sender.send(&input.message, input.target_len, &mut send_rng) {
            Ok(datagram) => DgramSendRecord { datagram, error: None, fate: Some(fate) },
            Err(e) => DgramSendRecord { datagram: Vec::new(), error: Some(e.to_string()), fate: None },
        });
    }

    let mut wire: Vec<Vec<u8>> = sends.iter().map(|s| s.datagram.clone()).collect();
    let mut tampered = vec![false; inputs.len()];
    for t in &schedule.tamper {
        let record = sends.get(t.index).filter(|s| s.error.is_none());
        let Some(record) = record else {
            return Err(NetsimError::TamperMissingDatagram { index: t.index });
        };
        if t.offset >= record.datagram.len() {
            return Err(NetsimError::TamperBeyondDatagram {
                index: t.index,
                offset: t.offset,
                len: record.datagram.len(),
            });
        }
        wire[t.index][t.offset] ^= t.mask;
        tampered[t.index] |= t.mask != 0;
    }

    // (slot, index, copy), delivered in slot order; ties keep send order.
    let mut order = Vec::new();
    for (i, s) in sends.iter().enumerate() {
        match s.fate {
            None | Some(Fate::Drop) => {}
            Some(Fate::Deliver) => order.push((i, i, 0)),
            Some(Fate::Delay(d)) => order.push((i + d, i, 0)),
            Some(Fate::Duplicate(n)) => order.extend((0..=n).map(|copy| (i, i, copy))),
        }
    }
    order.sort_by_key(|&(slot, i, copy)| (slot, i, copy));

    let deliveries = order
        .into_iter()
        .map(|(_, index, copy)| DgramDelivery {
            index,
            copy,
            tampered: tampered[index],
            outcome: endpoints.receiver.recv(&wire[index]),
        })
        .collect();

    Ok(DgramTranscript {
        kind: "dgram-session".into(),
        channel: channel.id().to_string(),
        seed: schedule.seed,
        inputs: inputs.to_vec(),
        sends,
        deliveries,
    })
}
