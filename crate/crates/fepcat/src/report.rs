//! JSON-lines run reports and their table rendering.

use anyhow::{bail, Context};
use fep_core::close::close_fn_by_name;
use fep_core::fingerprint::{fingerprint, FingerprintConfig, FingerprintReport, MIN_CLASSIFY_TRIALS};
use fep_core::games::{adversary_by_name, run_game, GameConfig, GameId, GameTranscript, ADVERSARY_IDS};
use fep_core::registry::{channel_by_id, CHANNEL_IDS};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Advantage above which a channel counts as broken by an adversary.
pub const BREAK_THRESHOLD: f64 = 0.49;
/// Advantage at or below which a channel counts as holding.
pub const HOLD_THRESHOLD: f64 = 0.05;
/// Random guessing must stay within this many null standard errors of 0.
pub const GUESS_SIGMAS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: String,
    pub subcommand: String,
    pub parameters: Value,
    pub outcomes: Value,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl RunReport {
    fn new(subcommand: &str, parameters: Value, outcomes: Value, checks: Vec<Check>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self { kind: "run".into(), subcommand: subcommand.into(), parameters, outcomes, checks, pass }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Clone, Debug)]
pub struct GameArgs {
    pub game: String,
    pub channel: String,
    pub adversary: String,
    pub trials: usize,
    pub seed: u64,
    pub close: String,
    pub budget: usize,
    pub expect_break: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: String) -> anyhow::Error {
    UsageError(msg).into()
}

/// Threshold applied to a finished game.
pub fn game_check(t: &GameTranscript, expect_break: bool) -> Check {
    let (threshold, pass) = if t.adversary == "random-guess" {
        (format!("<= {GUESS_SIGMAS} sigma ({:.4})", GUESS_SIGMAS * t.sigma), t.within_sigmas(GUESS_SIGMAS))
    } else if expect_break {
        (format!(">= {BREAK_THRESHOLD}"), t.advantage >= BREAK_THRESHOLD)
    } else {
        (format!("<= {HOLD_THRESHOLD}"), t.advantage <= HOLD_THRESHOLD)
    };
    Check { name: "advantage".into(), value: t.advantage, threshold, pass }
}

pub fn cmd_game(args: &GameArgs) -> anyhow::Result<RunReport> {
    let game = GameId::parse(&args.game).ok_or_else(|| {
        let names: Vec<_> = GameId::ALL.iter().map(|g| g.name()).collect();
        usage(format!("unknown game {:?}; expected one of {}", args.game, names.join(", ")))
    })?;
    let channel = channel_by_id(&args.channel)
        .ok_or_else(|| usage(format!("unknown channel {:?}; expected one of {}", args.channel, CHANNEL_IDS.join(", "))))?;
    let adversary = adversary_by_name(&args.adversary).ok_or_else(|| {
        usage(format!("unknown adversary {:?}; expected one of {}", args.adversary, ADVERSARY_IDS.join(", ")))
    })?;
    let close = close_fn_by_name(&args.close).ok_or_else(|| usage(format!("unknown close function {:?}", args.close)))?;
    if args.trials == 0 {
        return Err(usage("trials must be positive".into()));
    }
    let config = GameConfig { trials: args.trials, seed: args.seed, budget: args.budget, ..GameConfig::default() };
    let t = run_game(game, (&channel).into(), close.as_ref(), adversary.as_ref(), &config)
        .map_err(|e| usage(e.to_string()))?;
    let check = game_check(&t, args.expect_break);
    let mut outcomes = serde_json::to_value(&t)?;
    outcomes.as_object_mut().expect("object").remove("records");
    let parameters = json!({
        "game": game.name(),
        "channel": args.channel,
        "adversary": args.adversary,
        "trials": args.trials,
        "seed": args.seed,
        "close": args.close,
        "budget": args.budget,
        "expect_break": args.expect_break,
    });
    Ok(RunReport::new("game", parameters, outcomes, vec![check]))
}

pub fn cmd_fingerprint(channel_id: &str, trials: usize, seed: u64, randomness_bytes: usize) -> anyhow::Result<RunReport> {
    let channel = channel_by_id(channel_id)
        .ok_or_else(|| usage(format!("unknown channel {channel_id:?}; expected one of {}", CHANNEL_IDS.join(", "))))?;
    let config = FingerprintConfig { trials, seed, randomness_bytes, ..FingerprintConfig::default() };
    let r = fingerprint(&channel, &config);
    let mut checks = Vec::new();
    if r.close.is_some() {
        checks.push(Check {
            name: "classification_trials".into(),
            value: trials as f64,
            threshold: format!(">= {MIN_CLASSIFY_TRIALS}"),
            pass: trials >= MIN_CLASSIFY_TRIALS,
        });
    }
    let parameters = json!({ "channel": channel_id, "trials": trials, "seed": seed, "randomness_bytes": randomness_bytes });
    Ok(RunReport::new("fingerprint", parameters, serde_json::to_value(&r)?, checks))
}

fn game_row(r: &RunReport) -> anyhow::Result<Vec<String>> {
    let t: GameTranscript = serde_json::from_value({
        let mut v = r.outcomes.clone();
        v.as_object_mut().context("game outcomes")?.insert("records".into(), json!([]));
        v
    })?;
    Ok(vec![
        t.game.name().into(),
        t.channel,
        t.adversary,
        t.trials.to_string(),
        format!("{:.4}", t.advantage),
        format!("[{:.3}, {:.3}]", t.ci95.0, t.ci95.1),
        if r.pass { "pass" } else { "FAIL" }.into(),
    ])
}

fn fingerprint_row(r: &RunReport) -> anyhow::Result<Vec<String>> {
    let f: FingerprintReport = serde_json::from_value(r.outcomes.clone())?;
    let randomness = match &f.randomness {
        None => "-".to_string(),
        Some(x) if x.consistent_with_random() => "consistent".into(),
        Some(_) => "non-random".into(),
    };
    Ok(vec![
        f.channel.clone(),
        f.setting.clone(),
        f.close_label(),
        f.min_size.map_or_else(|| "-".into(), |m| m.to_string()),
        randomness,
        f.trials.to_string(),
    ])
}

fn render(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(headers.to_vec());
    out.push_str(&format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// Renders every fingerprint and game report found in JSON-lines text.
/// Blank lines are skipped; any other line must be a run report.
pub fn render_report(jsonl: &str) -> anyhow::Result<String> {
    let mut fingerprints = Vec::new();
    let mut games = Vec::new();
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RunReport = serde_json::from_str(line).with_context(|| format!("line {}: not a run report", i + 1))?;
        match r.subcommand.as_str() {
            "fingerprint" => fingerprints.push(fingerprint_row(&r).with_context(|| format!("line {}", i + 1))?),
            "game" => games.push(game_row(&r).with_context(|| format!("line {}", i + 1))?),
            "tunnel" => {}
            other => bail!("line {}: unknown subcommand {other:?}", i + 1),
        }
    }
    let mut out = String::new();
    if !fingerprints.is_empty() {
        out.push_str(&render(&["Channel", "Setting", "Close Behavior", "Min Size", "Randomness", "Trials"], &fingerprints));
    }
    if !games.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&render(&["Game", "Channel", "Adversary", "Trials", "Advantage", "95% CI", "Result"], &games));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(game: &str, channel: &str, adversary: &str, expect_break: bool) -> GameArgs {
        GameArgs {
            game: game.into(),
            channel: channel.into(),
            adversary: adversary.into(),
            trials: 200,
            seed: 7,
            close: "never".into(),
            budget: 1024,
            expect_break,
        }
    }

    #[test]
    fn game_thresholds() {
        assert!(cmd_game(&args("fep-ccfa", "fig2", "tamper-watch", false)).unwrap().pass);
        assert!(cmd_game(&args("fep-ccfa", "foil-authfail", "tamper-watch", true)).unwrap().pass);
        assert!(!cmd_game(&args("fep-ccfa", "foil-authfail", "tamper-watch", false)).unwrap().pass);
        assert!(cmd_game(&args("ind-cpa-dg", "fig3", "random-guess", false)).unwrap().pass);
    }

    #[test]
    fn unknown_ids_are_usage_errors() {
        for a in [
            args("nope", "fig2", "tamper-watch", false),
            args("fep-ccfa", "nope", "tamper-watch", false),
            args("fep-ccfa", "fig2", "nope", false),
            args("fep-ccfa", "fig3", "tamper-watch", false),
        ] {
            assert!(cmd_game(&a).unwrap_err().is::<UsageError>());
        }
        assert!(cmd_fingerprint("nope", 30, 0, 0).unwrap_err().is::<UsageError>());
    }

    #[test]
    fn report_table_round_trip() {
        let g = cmd_game(&args("fep-ccfa", "fig2", "tamper-watch", false)).unwrap();
        let f = cmd_fingerprint("fig3", 30, 1, 0).unwrap();
        let text = format!("{}\n\n{}\n", g.to_json_line(), f.to_json_line());
        let table = render_report(&text).unwrap();
        assert!(table.contains("Close Behavior") && table.contains("Min Size"));
        assert!(table.contains("| fig3 "));
        assert!(table.contains("fep-ccfa"));
        assert!(render_report("{\"x\":1}").is_err());
    }
}
