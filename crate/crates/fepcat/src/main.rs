use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fepcat::config::{Direction, Mode, Role, ShapePolicy, TunnelConfig, TunnelFile};
use fepcat::report::{cmd_fingerprint, cmd_game, render_report, GameArgs, RunReport, UsageError};
use fepcat::tunnel::run_tunnel;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fepcat", version, about = "Fully encrypted channels over loopback sockets, plus the game and fingerprint harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Carry one direction of traffic over TCP (stream) or UDP (dgram).
    Tunnel(TunnelArgs),
    /// Run a security game and check the measured advantage.
    Game {
        game: String,
        channel: String,
        adversary: String,
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Close function used by the ideal receive oracle.
        #[arg(long, default_value = "never")]
        close: String,
        /// Oracle queries allowed per trial.
        #[arg(long, default_value_t = 1024)]
        budget: usize,
        /// Expect the adversary to win (advantage >= 0.49).
        #[arg(long)]
        expect_break: bool,
        #[arg(long)]
        json: bool,
    },
    /// Minimum size scan, close classification and randomness screens.
    Fingerprint {
        channel: String,
        #[arg(long, default_value_t = 64)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output bytes fed to the randomness screens; 0 skips them.
        #[arg(long, default_value_t = 1 << 20)]
        randomness_bytes: usize,
        #[arg(long)]
        json: bool,
    },
    /// Render JSON-lines run reports as tables ("-" reads stdin).
    Report { file: PathBuf },
}

#[derive(clap::Args)]
struct TunnelArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    role: Option<Role>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    connect: Option<String>,
    /// File holding the pre-shared key as 64 hex characters.
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// off, fixed:P or schedule:P/F,P/F,...
    #[arg(long)]
    shape: Option<ShapePolicy>,
    #[arg(long, value_enum)]
    direction: Option<Direction>,
    /// chacha20-poly1305 (default) or aes-256-gcm.
    #[arg(long)]
    aead: Option<String>,
    #[arg(long)]
    idle_ms: Option<u64>,
    /// Read plaintext from a file instead of stdin.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write plaintext to a file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print a run report to stderr when done.
    #[arg(long)]
    json: bool,
}

fn tunnel(args: TunnelArgs) -> anyhow::Result<ExitCode> {
    let file = match &args.config {
        Some(p) => TunnelFile::load(p).map_err(|e| UsageError(format!("{e:#}")))?,
        None => TunnelFile::default(),
    };
    let flags = TunnelFile {
        mode: args.mode,
        role: args.role,
        listen: args.listen,
        connect: args.connect,
        key: None,
        key_file: args.key_file,
        shape: args.shape,
        direction: args.direction,
        aead: args.aead,
        idle_ms: args.idle_ms,
        input: args.input,
        output: args.output,
    };
    let cfg = TunnelConfig::resolve(file.overlay(flags)).map_err(|e| UsageError(format!("{e:#}")))?;
    let stats = run_tunnel(&cfg)?;
    if args.json {
        let report = RunReport {
            kind: "run".into(),
            subcommand: "tunnel".into(),
            parameters: json!({
                "mode": cfg.mode,
                "role": cfg.role,
                "shape": cfg.shape,
                "direction": cfg.direction,
                "aead": cfg.algorithm.name(),
            }),
            outcomes: serde_json::to_value(&stats)?,
            checks: Vec::new(),
            pass: true,
        };
        eprintln!("{}", report.to_json_line());
    }
    Ok(ExitCode::SUCCESS)
}

fn print_run(report: &RunReport, json: bool, human: impl FnOnce(&RunReport) -> String) -> ExitCode {
    if json {
        println!("{}", report.to_json_line());
    } else {
        print!("{}", human(report));
    }
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn game_summary(r: &RunReport) -> String {
    let o = &r.outcomes;
    let mut s = format!(
        "{} {} vs {}: {} / {} successes, advantage {:.4}, 95% CI [{:.4}, {:.4}]\n",
        o["game"].as_str().unwrap_or("?"),
        o["channel"].as_str().unwrap_or("?"),
        o["adversary"].as_str().unwrap_or("?"),
        o["successes"],
        o["trials"],
        o["advantage"].as_f64().unwrap_or(f64::NAN),
        o["ci95"][0].as_f64().unwrap_or(f64::NAN),
        o["ci95"][1].as_f64().unwrap_or(f64::NAN),
    );
    for c in &r.checks {
        s.push_str(&format!("{}: {:.4} {} -> {}\n", c.name, c.value, c.threshold, if c.pass { "pass" } else { "FAIL" }));
    }
    s
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Tunnel(args) => tunnel(args),
        Command::Game { game, channel, adversary, trials, seed, close, budget, expect_break, json } => {
            let report = cmd_game(&GameArgs { game, channel, adversary, trials, seed, close, budget, expect_break })?;
            Ok(print_run(&report, json, game_summary))
        }
        Command::Fingerprint { channel, trials, seed, randomness_bytes, json } => {
            let report = cmd_fingerprint(&channel, trials, seed, randomness_bytes)?;
            Ok(print_run(&report, json, |r| render_report(&r.to_json_line()).unwrap_or_default()))
        }
        Command::Report { file } => {
            let text = if file.as_os_str() == "-" {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s)?;
                s
            } else {
                std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?
            };
            print!("{}", render_report(&text)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
