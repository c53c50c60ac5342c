//! Tunnel configuration: JSON file values overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context};
use fep_core::aead::{AeadAlgorithm, AeadKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stream,
    Dgram,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Send,
    Recv,
}

/// Which half of a bidirectional pair this tunnel carries. Each direction
/// uses its own key.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    C2s,
    S2c,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::C2s => "c2s",
            Direction::S2c => "s2c",
        }
    }
}

/// Target lengths handed to `Send`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ShapeRepr", into = "String")]
pub enum ShapePolicy {
    /// Unshaped sends.
    #[default]
    Off,
    /// Every send targets exactly `p` bytes.
    Fixed(usize),
    /// Cycles through `(p, f)` pairs, one per send.
    Schedule(Vec<(i64, bool)>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ShapeRepr {
    Text(String),
    Fixed { fixed: usize },
    Schedule { schedule: Vec<(i64, bool)> },
}

impl TryFrom<ShapeRepr> for ShapePolicy {
    type Error = String;

    fn try_from(r: ShapeRepr) -> Result<Self, String> {
        let policy = match r {
            ShapeRepr::Text(s) => s.parse().map_err(|e: anyhow::Error| e.to_string())?,
            ShapeRepr::Fixed { fixed } => ShapePolicy::Fixed(fixed),
            ShapeRepr::Schedule { schedule } => ShapePolicy::Schedule(schedule),
        };
        policy.validate().map_err(|e| e.to_string())?;
        Ok(policy)
    }
}

impl ShapePolicy {
    fn validate(&self) -> anyhow::Result<()> {
        match self {
            ShapePolicy::Fixed(0) => bail!("fixed shaping needs p >= 1"),
            ShapePolicy::Schedule(s) if s.is_empty() => bail!("empty shaping schedule"),
            _ => Ok(()),
        }
    }
}

/// `off`, `fixed:P`, or `schedule:P/F,P/F,...` with `F` in `{0, 1}`.
impl FromStr for ShapePolicy {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let policy = match s.split_once(':') {
            None if s == "off" => ShapePolicy::Off,
            Some(("fixed", p)) => ShapePolicy::Fixed(p.parse().with_context(|| format!("bad fixed size {p:?}"))?),
            Some(("schedule", list)) => {
                let mut steps = Vec::new();
                for item in list.split(',') {
                    let (p, f) = item.split_once('/').unwrap_or((item, "0"));
                    let p = p.trim().parse().with_context(|| format!("bad target {p:?}"))?;
                    let f = match f.trim() {
                        "0" => false,
                        "1" => true,
                        other => bail!("bad flush flag {other:?}"),
                    };
                    steps.push((p, f));
                }
                ShapePolicy::Schedule(steps)
            }
            _ => bail!("unknown shaping policy {s:?}; expected off, fixed:P or schedule:P/F,..."),
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl fmt::Display for ShapePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapePolicy::Off => f.write_str("off"),
            ShapePolicy::Fixed(p) => write!(f, "fixed:{p}"),
            ShapePolicy::Schedule(steps) => {
                f.write_str("schedule:")?;
                for (i, (p, flush)) in steps.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{p}/{}", u8::from(*flush))?;
                }
                Ok(())
            }
        }
    }
}

impl From<ShapePolicy> for String {
    fn from(p: ShapePolicy) -> String {
        p.to_string()
    }
}

pub fn parse_algorithm(s: &str) -> anyhow::Result<AeadAlgorithm> {
    AeadAlgorithm::ALL
        .into_iter()
        .find(|a| a.name() == s)
        .with_context(|| format!("unknown AEAD {s:?}; expected chacha20-poly1305 or aes-256-gcm"))
}

/// Parses a 32-byte pre-shared key written as 64 hex digits.
pub fn parse_psk(text: &str) -> anyhow::Result<[u8; 32]> {
    let text = text.trim();
    if text.len() != 64 {
        bail!("key must be 64 hex characters, got {}", text.len());
    }
    let bytes = hex::decode(text).context("key is not valid hex")?;
    Ok(bytes.try_into().expect("32 bytes"))
}

pub fn read_psk(path: &Path) -> anyhow::Result<[u8; 32]> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading key file {}", path.display()))?;
    parse_psk(&text)
}

/// `SHA-256(label || 0x00 || psk)`.
pub fn derive_key(psk: &[u8; 32], direction: Direction, algorithm: AeadAlgorithm) -> AeadKey {
    let mut h = Sha256::new();
    h.update(direction.label().as_bytes());
    h.update([0u8]);
    h.update(psk);
    AeadKey::from_bytes(algorithm, &h.finalize()).expect("32-byte key")
}

/// Config file contents. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunnelFile {
    pub mode: Option<Mode>,
    pub role: Option<Role>,
    pub listen: Option<String>,
    pub connect: Option<String>,
    /// Hex key inline.
    pub key: Option<String>,
    pub key_file: Option<PathBuf>,
    pub shape: Option<ShapePolicy>,
    pub direction: Option<Direction>,
    pub aead: Option<String>,
    pub idle_ms: Option<u64>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl TunnelFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `other` replace ours.
    pub fn overlay(self, other: TunnelFile) -> TunnelFile {
        TunnelFile {
            mode: other.mode.or(self.mode),
            role: other.role.or(self.role),
            listen: other.listen.or(self.listen),
            connect: other.connect.or(self.connect),
            key: other.key.or(self.key),
            key_file: other.key_file.or(self.key_file),
            shape: other.shape.or(self.shape),
            direction: other.direction.or(self.direction),
            aead: other.aead.or(self.aead),
            idle_ms: other.idle_ms.or(self.idle_ms),
            input: other.input.or(self.input),
            output: other.output.or(self.output),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Listen(String),
    Connect(String),
}

pub const DEFAULT_IDLE: Duration = Duration::from_millis(200);

/// Fully resolved tunnel settings.
#[derive(Clone, Debug)]
pub struct TunnelConfig {
    pub mode: Mode,
    pub role: Role,
    pub endpoint: Endpoint,
    pub psk: [u8; 32],
    pub shape: ShapePolicy,
    pub direction: Direction,
    pub algorithm: AeadAlgorithm,
    /// Sender: pause before idle flushing or padding. Datagram receiver:
    /// silence after which it exits.
    pub idle: Duration,
    /// `None` means stdin / stdout.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl TunnelConfig {
    pub fn key(&self) -> AeadKey {
        derive_key(&self.psk, self.direction, self.algorithm)
    }

    pub fn resolve(f: TunnelFile) -> anyhow::Result<Self> {
        let mode = f.mode.context("missing --mode")?;
        let role = f.role.context("missing --role")?;
        let endpoint = match (f.listen, f.connect) {
            (Some(a), None) => Endpoint::Listen(a),
            (None, Some(a)) => Endpoint::Connect(a),
            (Some(_), Some(_)) => bail!("give only one of --listen and --connect"),
            (None, None) => bail!("missing --listen or --connect"),
        };
        if mode == Mode::Dgram {
            match (role, &endpoint) {
                (Role::Recv, Endpoint::Listen(_)) | (Role::Send, Endpoint::Connect(_)) => {}
                _ => bail!("datagram receivers --listen and datagram senders --connect"),
            }
        }
        let psk = match (f.key, f.key_file) {
            (Some(k), _) => parse_psk(&k)?,
            (None, Some(p)) => read_psk(&p)?,
            (None, None) => bail!("missing --key-file"),
        };
        let algorithm = match f.aead {
            Some(a) => parse_algorithm(&a)?,
            None => AeadAlgorithm::default(),
        };
        Ok(Self {
            mode,
            role,
            endpoint,
            psk,
            shape: f.shape.unwrap_or_default(),
            direction: f.direction.unwrap_or_default(),
            algorithm,
            idle: f.idle_ms.map_or(DEFAULT_IDLE, Duration::from_millis),
            input: f.input,
            output: f.output,
        })
    }
}
