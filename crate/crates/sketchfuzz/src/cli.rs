//! Command-line entry point: configuration merging (flags > environment >
//! config file > defaults), campaign lifecycle, persistence paths, and
//! report output.
//!
//! Exit codes: 0 no bugs (or replay reproduced), 1 bugs found (or replay not
//! reproduced), 2 configuration error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::campaign::{run_campaign, CampaignConfig, SharedStore};
use crate::connector::{open, parse_target, ConnectorConfig};
use crate::model::FragmentStore;
use crate::report::{parse_report, replay_report};
use crate::synthesizer::{CompletionBackend, SynthesisContext, Transcript};

#[derive(Parser)]
#[command(
    name = "sketchfuzz",
    about = "Dialect-agnostic DBMS fuzzer with learned engine-specific SQL features",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuzz a target engine with metamorphic oracles.
    Fuzz(RunArgs),
    /// Learning-only passes: synthesize fragments, validate, persist.
    Learn(RunArgs),
    /// Replay a bug report file against a target.
    Replay(ReplayArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Target descriptor: embedded:<path> (empty path = in-memory) or
    /// mock:<fault>.
    #[arg(long)]
    target: Option<String>,
    /// Output directory for transcripts, bug reports, and the summary.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fragment store file (line-delimited records), loaded and appended.
    #[arg(long)]
    fragments: Option<PathBuf>,
    /// Local documentation corpus directory (*.txt files).
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Completion backend: live, replay:<dir>, or null.
    #[arg(long)]
    backend: Option<String>,
    /// Enable the learning phases.
    #[arg(long, conflicts_with = "no_learn")]
    learn: bool,
    /// Disable learning: base features plus persisted fragments only.
    #[arg(long)]
    no_learn: bool,
    #[arg(long)]
    threads: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-clock stop condition in seconds.
    #[arg(long)]
    duration: Option<u64>,
    /// Statement-count stop condition.
    #[arg(long)]
    num_statements: Option<u64>,
    /// Oracle checks per testing phase.
    #[arg(long)]
    max_queries: Option<u32>,
    /// Selection-weight multiplier for newly learned fragments.
    #[arg(long)]
    boost: Option<f64>,
    /// Probability of using a learned fragment at an eligible grammar node.
    #[arg(long)]
    fragment_probability: Option<f64>,
    /// Posterior-mean threshold below which fragments are demoted.
    #[arg(long)]
    prune_threshold: Option<f64>,
    /// Executions required before a fragment can be demoted.
    #[arg(long)]
    min_trials: Option<u64>,
    /// Per-statement timeout in milliseconds.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// DBMS name used in prompts and retrieval keys.
    #[arg(long)]
    dbms: Option<String>,
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    target: String,
    /// Per-statement timeout in milliseconds.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Bug report script produced by a fuzzing run.
    report: PathBuf,
}

const KNOWN_KEYS: [&str; 18] = [
    "target",
    "out_dir",
    "fragments",
    "docs",
    "backend",
    "learn",
    "threads",
    "seed",
    "duration",
    "num_statements",
    "max_queries",
    "boost",
    "fragment_probability",
    "prune_threshold",
    "min_trials",
    "statement_timeout_ms",
    "dbms",
    "queries_per_state",
];

/// Flat key=value settings from the optional config file, with environment
/// overrides (SKETCHFUZZ_<KEY>).
struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, String> {
        let mut file = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
            for (no, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(format!("config line {}: expected key=value", no + 1));
                };
                let key = key.trim().to_string();
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    return Err(format!("config line {}: unknown key '{key}'", no + 1));
                }
                file.insert(key, value.trim().to_string());
            }
        }
        Ok(Settings { file })
    }

    fn get(&self, key: &str) -> Option<String> {
        let env_key = format!("SKETCHFUZZ_{}", key.to_uppercase());
        std::env::var(env_key).ok().or_else(|| self.file.get(key).cloned())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| format!("bad value '{v}' for key '{key}'")),
        }
    }
}

struct Resolved {
    campaign: CampaignConfig,
    connector: ConnectorConfig,
    backend: CompletionBackend,
    docs: Option<PathBuf>,
    fragments: Option<PathBuf>,
    out_dir: PathBuf,
}

fn resolve(args: &RunArgs, learning_default: bool) -> Result<Resolved, String> {
    let settings = Settings::load(args.config.as_deref())?;

    let target_text = args
        .target
        .clone()
        .or_else(|| settings.get("target"))
        .ok_or("missing --target")?;
    let target = parse_target(&target_text).map_err(|e| e.to_string())?;
    let timeout_ms = args
        .timeout_ms
        .map(Ok)
        .unwrap_or_else(|| settings.parse("statement_timeout_ms").map(|v| v.unwrap_or(5_000)))?;
    let mut connector = ConnectorConfig::new(target);
    if timeout_ms == 0 {
        return Err("statement_timeout_ms must be positive".into());
    }
    connector.statement_timeout = Duration::from_millis(timeout_ms);

    let backend_text = args
        .backend
        .clone()
        .or_else(|| settings.get("backend"))
        .unwrap_or_else(|| "null".to_string());
    let backend = CompletionBackend::parse(&backend_text).map_err(|e| e.to_string())?;

    let learning_enabled = if args.no_learn {
        false
    } else if args.learn {
        true
    } else if let Some(v) = settings.parse::<bool>("learn")? {
        v
    } else {
        learning_default && !backend.is_null()
    };

    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| settings.get("out_dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let fragments = args
        .fragments
        .clone()
        .or_else(|| settings.get("fragments").map(PathBuf::from))
        .map(|p| if p.is_absolute() { p } else { out_dir.join(p) });
    let docs = args
        .docs
        .clone()
        .or_else(|| settings.get("docs").map(PathBuf::from));

    let mut campaign = CampaignConfig {
        learning_enabled,
        dbms_name: args
            .dbms
            .clone()
            .or_else(|| settings.get("dbms"))
            .unwrap_or_else(|| "sqlite".into()),
        out_dir: Some(out_dir.clone()),
        ..CampaignConfig::default()
    };
    campaign.threads = args
        .threads
        .map(Ok)
        .unwrap_or_else(|| settings.parse("threads").map(|o| o.unwrap_or(1)))?;
    campaign.gen.seed = args
        .seed
        .map(Ok)
        .unwrap_or_else(|| settings.parse("seed").map(|o| o.unwrap_or(0)))?;
    if let Some(v) = args.max_queries.map(Some).unwrap_or(settings.parse("max_queries")?) {
        campaign.max_queries = v;
    }
    if let Some(v) = settings.parse("queries_per_state")? {
        campaign.queries_per_state = v;
    }
    if let Some(v) = args.boost.map(Some).unwrap_or(settings.parse("boost")?) {
        if v < 1.0 {
            return Err("boost must be >= 1".into());
        }
        campaign.boost_factor = v;
    }
    if let Some(v) = args
        .fragment_probability
        .map(Some)
        .unwrap_or(settings.parse("fragment_probability")?)
    {
        if !(0.0..=1.0).contains(&v) {
            return Err("fragment_probability must be in [0, 1]".into());
        }
        campaign.gen.fragment_probability = v;
    }
    if let Some(v) = args
        .prune_threshold
        .map(Some)
        .unwrap_or(settings.parse("prune_threshold")?)
    {
        if !(0.0 < v && v < 1.0) {
            return Err("prune_threshold must be in (0, 1)".into());
        }
        campaign.prune_threshold = v;
    }
    if let Some(v) = args.min_trials.map(Some).unwrap_or(settings.parse("min_trials")?) {
        campaign.min_trials = v;
    }
    campaign.statement_budget = args
        .num_statements
        .map(Some)
        .unwrap_or(settings.parse("num_statements")?);
    campaign.wall_clock = args
        .duration
        .map(Some)
        .unwrap_or(settings.parse("duration")?)
        .map(Duration::from_secs);
    if campaign.statement_budget.is_none() && campaign.wall_clock.is_none() {
        campaign.statement_budget = Some(100_000);
    }

    Ok(Resolved { campaign, connector, backend, docs, fragments, out_dir })
}

fn build_context(r: &mut Resolved) -> SynthesisContext {
    let transcript = std::fs::create_dir_all(&r.out_dir)
        .ok()
        .and_then(|_| Transcript::to_file(&r.out_dir.join("llm-transcript.jsonl")).ok())
        .unwrap_or_else(Transcript::disabled);
    let backend = std::mem::replace(&mut r.backend, CompletionBackend::Null);
    SynthesisContext::new(backend, r.campaign.dbms_name.clone())
        .with_docs(r.docs.clone())
        .with_transcript(transcript)
}

fn open_store(r: &Resolved) -> Result<SharedStore, String> {
    match &r.fragments {
        Some(path) => {
            if let Some(parent) = path.parent() {
                let _ = std::fs::create_dir_all(parent);
            }
            SharedStore::with_persistence(path).map_err(|e| e.to_string())
        }
        None => Ok(SharedStore::new(FragmentStore::new())),
    }
}

fn cmd_fuzz(args: &RunArgs) -> i32 {
    let mut resolved = match resolve(args, false) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    let ctx = build_context(&mut resolved);
    let store = match open_store(&resolved) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    // Fail fast on an unreachable target.
    match open(&resolved.connector) {
        Ok(mut conn) => {
            if conn.probe_alive() == crate::connector::Liveness::Dead {
                eprintln!("configuration error: target is not reachable");
                return 2;
            }
        }
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    }
    match run_campaign(&resolved.campaign, &resolved.connector, &ctx, &store) {
        Ok(report) => {
            print!("{}", report.render());
            if report.bugs_found() > 0 {
                1
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("configuration error: {e}");
            2
        }
    }
}

fn cmd_learn(args: &RunArgs) -> i32 {
    let mut resolved = match resolve(args, true) {
        Ok(mut r) => {
            r.campaign.learning_enabled = true;
            r.campaign.stop_when_pool_learned = true;
            // Minimal testing per learning phase.
            if args.max_queries.is_none() {
                r.campaign.max_queries = 50;
                r.campaign.queries_per_state = 50;
            }
            if r.fragments.is_none() {
                r.fragments = Some(r.out_dir.join("fragments.jsonl"));
            }
            r
        }
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    let ctx = build_context(&mut resolved);
    let store = match open_store(&resolved) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    match run_campaign(&resolved.campaign, &resolved.connector, &ctx, &store) {
        Ok(report) => {
            print!("{}", report.render());
            0
        }
        Err(e) => {
            eprintln!("configuration error: {e}");
            2
        }
    }
}

fn cmd_replay(args: &ReplayArgs) -> i32 {
    let target = match parse_target(&args.target) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    let mut cfg = ConnectorConfig::new(target);
    if let Some(ms) = args.timeout_ms {
        cfg.statement_timeout = Duration::from_millis(ms);
    }
    let report = match parse_report(&args.report) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("malformed report: {e}");
            return 2;
        }
    };
    let mut conn = match open(&cfg) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    let verdict = replay_report(&report, conn.as_mut());
    if verdict == report.kind {
        println!("reproduced: {}", verdict.name());
        0
    } else {
        println!("not reproduced: recorded {}, observed {}", report.kind.name(), verdict.name());
        1
    }
}

/// Entry point used by main; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match &cli.command {
        Command::Fuzz(args) => cmd_fuzz(args),
        Command::Learn(args) => cmd_learn(args),
        Command::Replay(args) => cmd_replay(args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_args() -> RunArgs {
        RunArgs {
            target: Some("embedded:".into()),
            out_dir: None,
            fragments: None,
            docs: None,
            backend: None,
            learn: false,
            no_learn: false,
            threads: None,
            seed: None,
            duration: None,
            num_statements: None,
            max_queries: None,
            boost: None,
            fragment_probability: None,
            prune_threshold: None,
            min_trials: None,
            timeout_ms: None,
            dbms: None,
            config: None,
        }
    }

    #[test]
    fn defaults_resolve() {
        let r = resolve(&base_args(), false).unwrap();
        assert_eq!(r.campaign.statement_budget, Some(100_000));
        assert_eq!(r.campaign.gen.max_tables, 2);
        assert_eq!(r.campaign.gen.max_views, 1);
        assert_eq!(r.campaign.gen.max_inserts, 20);
        assert!(!r.campaign.learning_enabled);
        assert_eq!(r.campaign.boost_factor, 10.0);
        assert_eq!(r.campaign.prune_threshold, 0.5);
        assert_eq!(r.campaign.min_trials, 20);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "bogus_key=1\n").unwrap();
        let mut args = base_args();
        args.config = Some(path);
        let err = match resolve(&args, false) {
            Err(e) => e,
            Ok(_) => panic!("unknown key accepted"),
        };
        assert!(err.contains("unknown key"), "{err}");
    }

    #[test]
    fn config_file_supplies_values_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        std::fs::write(&path, "seed=9\nmax_queries=77\nstatement_timeout_ms=123\n").unwrap();
        let mut args = base_args();
        args.config = Some(path);
        let r = resolve(&args, false).unwrap();
        assert_eq!(r.campaign.gen.seed, 9);
        assert_eq!(r.campaign.max_queries, 77);
        assert_eq!(r.connector.statement_timeout, Duration::from_millis(123));
        args.seed = Some(4);
        let mut args2 = args.clone();
        args2.max_queries = Some(5);
        let r2 = resolve(&args2, false).unwrap();
        assert_eq!(r2.campaign.gen.seed, 4);
        assert_eq!(r2.campaign.max_queries, 5);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut args = base_args();
        args.boost = Some(0.5);
        assert!(resolve(&args, false).is_err());
        let mut args = base_args();
        args.fragment_probability = Some(1.5);
        assert!(resolve(&args, false).is_err());
        let mut args = base_args();
        args.timeout_ms = Some(0);
        assert!(resolve(&args, false).is_err());
        let mut args = base_args();
        args.target = Some("postgres://nope".into());
        assert!(resolve(&args, false).is_err());
    }
}
