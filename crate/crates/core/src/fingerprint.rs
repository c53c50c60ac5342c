//! Passive and active fingerprinting of channels.
//!
//! - [`scan_stream_sizes`] / [`scan_dgram_sizes`]: smallest emitted unit over
//!   a message corpus and a sweep of shaping requests.
//! - [`classify_close`]: tamper early in a long stream, feed it in small
//!   chunks and see whether, and where, the receiver closes.
//! - [`analyze_bytes`] / [`stream_randomness`]: chi-square byte frequency,
//!   serial correlation and compressibility screens.
//!
//! The statistical screens are one-sided at a fixed significance level. A
//! pass means the output is consistent with random bytes, nothing more.

use std::collections::BTreeMap;
use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{DgramChannel, DgramMessage, ShapeRequest, StreamChannel};
use crate::par::{map_indexed, Execution};
use crate::registry::AnyChannel;
use crate::rng::{random_bytes, stream_rng};
use crate::DEFAULT_SECURITY_PARAMETER;

/// Significance level of the chi-square screen.
pub const CHI_SQUARE_ALPHA: f64 = 0.001;
/// Largest acceptable |serial correlation|.
pub const MAX_SERIAL_CORRELATION: f64 = 0.01;
/// Smallest acceptable compressed/original size ratio.
pub const MIN_COMPRESSION_RATIO: f64 = 0.99;
/// Fewest trials a close classification may rest on.
pub const MIN_CLASSIFY_TRIALS: usize = 30;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeScan {
    /// Smallest observed unit; `None` if nothing was emitted.
    pub min_size: Option<usize>,
    pub histogram: BTreeMap<usize, u64>,
}

impl SizeScan {
    fn record(&mut self, len: usize) {
        self.min_size = Some(self.min_size.map_or(len, |m| m.min(len)));
        *self.histogram.entry(len).or_default() += 1;
    }

    fn merge(&mut self, other: SizeScan) {
        for (len, n) in other.histogram {
            *self.histogram.entry(len).or_default() += n;
        }
        self.min_size = match (self.min_size, other.min_size) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
}

/// Messages used by the size scans: empty, tiny, and a few larger ones.
pub fn default_stream_corpus() -> Vec<Vec<u8>> {
    [0usize, 1, 2, 3, 16, 100, 1000].iter().map(|&n| vec![0x61; n]).collect()
}

pub fn default_dgram_corpus() -> Vec<DgramMessage> {
    let mut c = vec![DgramMessage::Null];
    c.extend([0usize, 1, 16, 100].iter().map(|&n| DgramMessage::Payload(vec![0x61; n])));
    c
}

/// Output lengths requested during scans; negative means unshaped.
pub const DEFAULT_TARGETS: &[i64] = &[-1, 0, 1, 2, 3, 16, 64, 512];

/// Drives one fresh sender per trial over `corpus × targets` (flush off for
/// non-negative targets), then a run of empty keepalive-like sends and a
/// final flush. Only non-empty outputs count as emitted units.
pub fn scan_stream_sizes(
    channel: &dyn StreamChannel,
    corpus: &[Vec<u8>],
    targets: &[i64],
    trials: usize,
    seed: u64,
) -> SizeScan {
    let mut scan = SizeScan::default();
    for trial in 0..trials {
        let Ok(mut e) = channel.init(DEFAULT_SECURITY_PARAMETER, &mut stream_rng(seed, trial as u64)) else {
            continue;
        };
        let mut emit = |m: &[u8], shape: ShapeRequest, scan: &mut SizeScan| {
            if let Ok(c) = e.sender.send(m, shape) {
                if !c.is_empty() {
                    scan.record(c.len());
                }
            }
        };
        for m in corpus {
            for &p in targets {
                let shape = if p < 0 { ShapeRequest::unshaped() } else { ShapeRequest::exact(p) };
                emit(m, shape, &mut scan);
            }
        }
        for &p in targets {
            emit(&[], ShapeRequest::new(p, false), &mut scan);
        }
        emit(&[], ShapeRequest::new(0, true), &mut scan);
    }
    scan
}

/// Datagram counterpart of [`scan_stream_sizes`]. Zero-length datagrams are
/// real packets and count.
pub fn scan_dgram_sizes(
    channel: &dyn DgramChannel,
    corpus: &[DgramMessage],
    targets: &[i64],
    trials: usize,
    seed: u64,
) -> SizeScan {
    let mut scan = SizeScan::default();
    for trial in 0..trials {
        let mut rng = stream_rng(seed, trial as u64);
        let Ok(mut e) = channel.init(DEFAULT_SECURITY_PARAMETER, &mut rng) else {
            continue;
        };
        for m in corpus {
            for &p in targets {
                if let Ok(c) = e.sender.send(m, p, &mut rng) {
                    scan.record(c.len());
                }
            }
        }
    }
    scan
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum CloseClass {
    Never,
    /// Closes right after the tampered record.
    AuthFail,
    /// Closes at a byte count unrelated to where the tamper happened.
    Drain { estimate: f64 },
    /// Mixed or inconclusive behaviour.
    Other,
}

impl CloseClass {
    pub fn label(&self) -> String {
        match self {
            CloseClass::Never => "Never".into(),
            CloseClass::AuthFail => "AuthFail".into(),
            CloseClass::Drain { estimate } => format!("Drain(~{estimate:.0})"),
            CloseClass::Other => "Other".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub trials: usize,
    pub seed: u64,
    /// Tamper offsets are drawn from `0..tamper_window`.
    pub tamper_window: usize,
    /// Bytes of ciphertext generated per trial.
    pub stream_len: usize,
    /// Receiver input size.
    pub chunk: usize,
    pub execution: Execution,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { trials: 64, seed: 0, tamper_window: 2048, stream_len: 16384, chunk: 16, execution: Execution::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseClassification {
    pub class: CloseClass,
    pub trials: usize,
    pub closed_trials: usize,
    /// Pearson correlation between tamper offset and close position.
    pub correlation: Option<f64>,
    pub mean_close: Option<f64>,
    pub mean_delay: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct CloseObservation {
    tamper: usize,
    close: Option<usize>,
}

fn observe_close(channel: &dyn StreamChannel, config: &ClassifyConfig, trial: usize) -> Option<CloseObservation> {
    let mut rng = stream_rng(config.seed, trial as u64);
    let mut e = channel.init(DEFAULT_SECURITY_PARAMETER, &mut rng).ok()?;
    let mut wire = Vec::new();
    while wire.len() < config.stream_len {
        let len = rng.gen_range(1..=64);
        let m = random_bytes(&mut rng, len);
        wire.extend(e.sender.send(&m, ShapeRequest::unshaped()).ok()?);
    }
    let tamper = rng.gen_range(0..config.tamper_window.min(wire.len()).max(1));
    wire[tamper] ^= 1 << rng.gen_range(0..8);
    let mut delivered = 0;
    for chunk in wire.chunks(config.chunk.max(1)) {
        delivered += chunk.len();
        if e.receiver.recv(chunk).close {
            return Some(CloseObservation { tamper, close: Some(delivered) });
        }
    }
    Some(CloseObservation { tamper, close: None })
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Tampers one random bit early in each trial's stream and classifies when
/// the receiver closes. Closes tracking the tamper offset (correlation at
/// least 0.9) mean AuthFail; closes uncorrelated with it (|r| < 0.5) mean
/// Drain, estimated by the mean close position. Fewer than
/// [`MIN_CLASSIFY_TRIALS`] trials, or only some trials closing, is Other.
pub fn classify_close(channel: &dyn StreamChannel, config: &ClassifyConfig) -> CloseClassification {
    let obs: Vec<CloseObservation> =
        map_indexed(config.trials, config.execution, |i| observe_close(channel, config, i)).into_iter().flatten().collect();
    let closed: Vec<(f64, f64)> =
        obs.iter().filter_map(|o| o.close.map(|c| (o.tamper as f64, c as f64))).collect();
    let mut out = CloseClassification {
        class: CloseClass::Other,
        trials: obs.len(),
        closed_trials: closed.len(),
        correlation: None,
        mean_close: None,
        mean_delay: None,
    };
    if !closed.is_empty() {
        let n = closed.len() as f64;
        out.mean_close = Some(closed.iter().map(|c| c.1).sum::<f64>() / n);
        out.mean_delay = Some(closed.iter().map(|c| c.1 - c.0).sum::<f64>() / n);
        let (ts, cs): (Vec<f64>, Vec<f64>) = closed.iter().copied().unzip();
        out.correlation = pearson(&ts, &cs);
    }
    if obs.len() < MIN_CLASSIFY_TRIALS {
        return out;
    }
    out.class = if closed.is_empty() {
        CloseClass::Never
    } else if closed.len() < obs.len() {
        CloseClass::Other
    } else {
        match out.correlation {
            Some(r) if r >= 0.9 => CloseClass::AuthFail,
            Some(r) if r.abs() < 0.5 => CloseClass::Drain { estimate: out.mean_close.unwrap_or_default() },
            _ => CloseClass::Other,
        }
    };
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomnessReport {
    pub bytes: usize,
    pub chi_square: f64,
    pub chi_critical: f64,
    pub chi_pass: bool,
    pub serial_correlation: f64,
    pub serial_pass: bool,
    pub compression_ratio: f64,
    pub compression_pass: bool,
}

impl RandomnessReport {
    /// All three screens passed.
    pub fn consistent_with_random(&self) -> bool {
        self.chi_pass && self.serial_pass && self.compression_pass
    }
}

/// Chi-square statistic of the byte histogram against uniform.
pub fn chi_square_bytes(data: &[u8]) -> f64 {
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let expected = data.len() as f64 / 256.0;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Lag-1 serial correlation coefficient, computed cyclically.
pub fn serial_correlation(data: &[u8]) -> f64 {
    let n = data.len() as f64;
    let (mut t1, mut sum, mut sq) = (0.0f64, 0.0f64, 0.0f64);
    for (i, &b) in data.iter().enumerate() {
        let x = b as f64;
        let next = data[(i + 1) % data.len()] as f64;
        t1 += x * next;
        sum += x;
        sq += x * x;
    }
    let denom = n * sq - sum * sum;
    if denom == 0.0 {
        1.0
    } else {
        (n * t1 - sum * sum) / denom
    }
}

/// Deflate-compressed size divided by original size.
pub fn compression_ratio(data: &[u8]) -> f64 {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(data).expect("writing to a Vec cannot fail");
    let compressed = enc.finish().expect("writing to a Vec cannot fail");
    compressed.len() as f64 / data.len().max(1) as f64
}

pub fn analyze_bytes(data: &[u8]) -> RandomnessReport {
    let chi_critical = ChiSquared::new(255.0).expect("valid degrees of freedom").inverse_cdf(1.0 - CHI_SQUARE_ALPHA);
    let chi_square = chi_square_bytes(data);
    let serial = if data.is_empty() { 1.0 } else { serial_correlation(data) };
    let ratio = compression_ratio(data);
    RandomnessReport {
        bytes: data.len(),
        chi_square,
        chi_critical,
        chi_pass: chi_square < chi_critical,
        serial_correlation: serial,
        serial_pass: serial.abs() < MAX_SERIAL_CORRELATION,
        compression_ratio: ratio,
        compression_pass: ratio >= MIN_COMPRESSION_RATIO,
    }
}

/// First `bytes` bytes of stream output produced from all-zero plaintext sent
/// unshaped in `record_len`-byte messages.
pub fn stream_output_on_zeros(channel: &dyn StreamChannel, bytes: usize, record_len: usize, seed: u64) -> Vec<u8> {
    let mut e = channel.init(DEFAULT_SECURITY_PARAMETER, &mut stream_rng(seed, 0)).expect("default parameter");
    let zeros = vec![0u8; record_len.max(1)];
    let mut out = Vec::with_capacity(bytes + 2 * record_len);
    while out.len() < bytes {
        out.extend(e.sender.send(&zeros, ShapeRequest::unshaped()).expect("fresh sender"));
    }
    out.truncate(bytes);
    out
}

/// Concatenated datagrams carrying all-zero payloads.
pub fn dgram_output_on_zeros(channel: &dyn DgramChannel, bytes: usize, record_len: usize, seed: u64) -> Vec<u8> {
    let mut rng = stream_rng(seed, 0);
    let mut e = channel.init(DEFAULT_SECURITY_PARAMETER, &mut rng).expect("default parameter");
    let m = DgramMessage::Payload(vec![0u8; record_len.clamp(1, 60_000)]);
    let mut out = Vec::with_capacity(bytes + 2 * record_len);
    while out.len() < bytes {
        out.extend(e.sender.send(&m, -1, &mut rng).expect("payload fits"));
    }
    out.truncate(bytes);
    out
}

pub fn stream_randomness(channel: &dyn StreamChannel, bytes: usize, record_len: usize, seed: u64) -> RandomnessReport {
    analyze_bytes(&stream_output_on_zeros(channel, bytes, record_len, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerprintConfig {
    pub trials: usize,
    pub seed: u64,
    /// Bytes of output for the randomness screens; 0 skips them.
    pub randomness_bytes: usize,
    pub record_len: usize,
    pub execution: Execution,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        Self { trials: 64, seed: 0, randomness_bytes: 1 << 20, record_len: 1024, execution: Execution::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerprintReport {
    pub kind: String,
    pub channel: String,
    pub setting: String,
    pub trials: usize,
    pub seed: u64,
    pub min_size: Option<usize>,
    pub histogram: BTreeMap<usize, u64>,
    /// Datastream channels only.
    pub close: Option<CloseClassification>,
    pub randomness: Option<RandomnessReport>,
}

impl FingerprintReport {
    pub fn close_label(&self) -> String {
        self.close.as_ref().map_or_else(|| "-".into(), |c| c.class.label())
    }
}

/// Size scan, close classification and randomness screens in one report.
pub fn fingerprint(channel: &AnyChannel, config: &FingerprintConfig) -> FingerprintReport {
    let scan_trials = config.trials.clamp(1, 8);
    let (setting, scan, close, randomness) = match channel {
        AnyChannel::Stream(ch) => {
            let scan = scan_stream_sizes(ch.as_ref(), &default_stream_corpus(), DEFAULT_TARGETS, scan_trials, config.seed);
            let classify = ClassifyConfig {
                trials: config.trials,
                seed: config.seed,
                execution: config.execution,
                ..ClassifyConfig::default()
            };
            let close = classify_close(ch.as_ref(), &classify);
            let randomness = (config.randomness_bytes > 0)
                .then(|| stream_randomness(ch.as_ref(), config.randomness_bytes, config.record_len, config.seed));
            ("stream", scan, Some(close), randomness)
        }
        AnyChannel::Dgram(ch) => {
            let scan = scan_dgram_sizes(ch.as_ref(), &default_dgram_corpus(), DEFAULT_TARGETS, scan_trials, config.seed);
            let randomness = (config.randomness_bytes > 0).then(|| {
                analyze_bytes(&dgram_output_on_zeros(ch.as_ref(), config.randomness_bytes, config.record_len, config.seed))
            });
            ("dgram", scan, None, randomness)
        }
    };
    FingerprintReport {
        kind: "fingerprint".into(),
        channel: channel.id().to_string(),
        setting: setting.into(),
        trials: config.trials,
        seed: config.seed,
        min_size: scan.min_size,
        histogram: scan.histogram,
        close,
        randomness,
    }
}

/// Merges scans from independent runs.
pub fn merge_scans(scans: impl IntoIterator<Item = SizeScan>) -> SizeScan {
    let mut out = SizeScan::default();
    for s in scans {
        out.merge(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgram::EncryptedDgram;
    use crate::foil::{AuthFailClose, DrainClose, PlainLenStream};
    use crate::rng::seeded_rng;
    use crate::stream::EncryptedStream;

    #[test]
    fn min_sizes() {
        let corpus = default_stream_corpus();
        let s = scan_stream_sizes(&EncryptedStream::default(), &corpus, &[1], 1, 0);
        assert_eq!(s.min_size, Some(1));
        let s = scan_stream_sizes(&PlainLenStream, &corpus, DEFAULT_TARGETS, 2, 0);
        assert_eq!(s.min_size, Some(19));
        let s = scan_stream_sizes(&AuthFailClose, &corpus, DEFAULT_TARGETS, 2, 0);
        assert_eq!(s.min_size, Some(35));
        let s = scan_dgram_sizes(&EncryptedDgram::default(), &[DgramMessage::Null], &[0], 1, 0);
        assert_eq!(s.min_size, Some(0));
    }

    #[test]
    fn close_classes() {
        let cfg = ClassifyConfig { trials: 40, seed: 1, ..ClassifyConfig::default() };
        assert_eq!(classify_close(&EncryptedStream::default(), &cfg).class, CloseClass::Never);
        assert_eq!(classify_close(&PlainLenStream, &cfg).class, CloseClass::Never);
        assert_eq!(classify_close(&AuthFailClose, &cfg).class, CloseClass::AuthFail);
        match classify_close(&DrainClose::new(4096), &cfg).class {
            CloseClass::Drain { estimate } => assert!((estimate - 4096.0).abs() < 409.6, "{estimate}"),
            other => panic!("{other:?}"),
        }
        let few = ClassifyConfig { trials: 10, ..cfg };
        assert_eq!(classify_close(&AuthFailClose, &few).class, CloseClass::Other);
    }

    #[test]
    fn screens_calibrate_on_random_bytes() {
        let data = random_bytes(&mut seeded_rng(5), 1 << 18);
        assert!(analyze_bytes(&data).consistent_with_random());
        let zeros = vec![0u8; 4096];
        let r = analyze_bytes(&zeros);
        assert!(!r.chi_pass && !r.compression_pass);
    }

    #[test]
    fn serial_correlation_detects_structure() {
        let ramp: Vec<u8> = (0..10_000).map(|i| (i / 8) as u8).collect();
        assert!(serial_correlation(&ramp) > 0.5);
    }

    #[test]
    fn plainlen_fails_randomness() {
        let r = stream_randomness(&PlainLenStream, 1 << 18, 1024, 0);
        assert!(!r.consistent_with_random());
    }
}
