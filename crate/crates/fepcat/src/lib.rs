//! Library side of the `fepcat` tool: tunnel plumbing, run reports and
//! table rendering. The binary is a thin argument parser over these.

pub mod config;
pub mod report;
pub mod tunnel;

pub use config::{Direction, Mode, Role, ShapePolicy, TunnelConfig, TunnelFile};
pub use report::{cmd_fingerprint, cmd_game, render_report, GameArgs, RunReport, UsageError};
pub use tunnel::{run_tunnel, run_tunnel_with, Connection, TunnelStats};
