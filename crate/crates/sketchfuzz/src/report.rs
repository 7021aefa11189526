//! Bug reports as standalone script files: a comment header with the
//! verdict, oracle, engine, and seed, then the reduced statements, then the
//! oracle queries with both observed results.

use std::path::{Path, PathBuf};

use crate::connector::Connector;
use crate::error::ReportError;
use crate::oracles::{oracle_check, OracleKind, VerdictKind};

#[derive(Debug, Clone)]
pub struct BugReport {
    pub kind: VerdictKind,
    pub oracle: Option<OracleKind>,
    pub engine: String,
    pub seed: u64,
    /// FROM source of the oracle queries ("t0" or "t0, t1").
    pub source: Option<String>,
    pub predicate: Option<String>,
    /// Reduced statement list; for logic bugs the final statement is the
    /// unfiltered query.
    pub statements: Vec<String>,
    /// Oracle queries with their observed result renderings.
    pub observations: Vec<(String, String)>,
    pub details: String,
}

impl BugReport {
    /// Dedup key: one report per (oracle, kind, leading details).
    pub fn dedup_key(&self) -> String {
        let prefix: String = self.details.chars().take(80).collect();
        format!(
            "{}|{}|{}",
            self.oracle.map(|o| o.name()).unwrap_or("-"),
            self.kind.name(),
            prefix
        )
    }
}

pub fn render_report(r: &BugReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("-- verdict: {}\n", r.kind.name()));
    out.push_str(&format!(
        "-- oracle: {}\n",
        r.oracle.map(|o| o.name()).unwrap_or("none")
    ));
    out.push_str(&format!("-- engine: {}\n", r.engine));
    out.push_str(&format!("-- seed: {}\n", r.seed));
    if let Some(s) = &r.source {
        out.push_str(&format!("-- source: {s}\n"));
    }
    if let Some(p) = &r.predicate {
        out.push_str(&format!("-- predicate: {p}\n"));
    }
    if !r.details.is_empty() {
        for line in r.details.lines() {
            out.push_str(&format!("-- details: {line}\n"));
        }
    }
    for stmt in &r.statements {
        out.push_str(stmt);
        if !stmt.ends_with(';') {
            out.push(';');
        }
        out.push('\n');
    }
    for (query, result) in &r.observations {
        out.push_str(&format!("-- query: {query}\n"));
        out.push_str(&format!("-- result: {result}\n"));
    }
    out
}

pub fn write_report(dir: &Path, index: usize, r: &BugReport) -> Result<PathBuf, ReportError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("bug-{index:04}-{}.sql", r.kind.name().to_lowercase()));
    std::fs::write(&path, render_report(r))?;
    Ok(path)
}

pub fn parse_report(path: &Path) -> Result<BugReport, ReportError> {
    let text = std::fs::read_to_string(path)?;
    let mut kind = None;
    let mut oracle = None;
    let mut engine = String::new();
    let mut seed = 0u64;
    let mut source = None;
    let mut predicate = None;
    let mut statements = Vec::new();
    let mut details: Vec<String> = Vec::new();

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("--") {
            let rest = rest.trim();
            if let Some((key, value)) = rest.split_once(':') {
                let value = value.trim();
                match key.trim() {
                    "verdict" => kind = VerdictKind::parse(value),
                    "oracle" => oracle = OracleKind::parse(value),
                    "engine" => engine = value.to_string(),
                    "seed" => seed = value.parse().unwrap_or(0),
                    "source" => source = Some(value.to_string()),
                    "predicate" => predicate = Some(value.to_string()),
                    "details" => details.push(value.to_string()),
                    _ => {}
                }
            }
            continue;
        }
        statements.push(line.to_string());
    }

    let kind = kind.ok_or_else(|| ReportError::Malformed("missing verdict header".into()))?;
    if kind.is_bug() && statements.is_empty() {
        return Err(ReportError::Malformed("report carries no statements".into()));
    }
    Ok(BugReport {
        kind,
        oracle,
        engine,
        seed,
        source,
        predicate,
        statements,
        observations: Vec::new(),
        details: details.join("\n"),
    })
}

/// Replays a parsed report: executes the statements on a clean database and
/// re-runs the recorded oracle (or expects the recorded crash/hang).
/// Returns the reproduced verdict kind.
pub fn replay_report(r: &BugReport, conn: &mut dyn Connector) -> VerdictKind {
    if conn.reset_database().is_err() {
        let _ = conn.restart();
        if conn.reset_database().is_err() {
            return VerdictKind::ExpectedError;
        }
    }
    match r.kind {
        VerdictKind::LogicBug => {
            let (Some(source), Some(predicate)) = (&r.source, &r.predicate) else {
                return VerdictKind::ExpectedError;
            };
            // The final statement of a logic-bug report is the oracle's own
            // unfiltered query; the replayed context is everything before it.
            let context = if r.statements.len() > 1 {
                &r.statements[..r.statements.len() - 1]
            } else {
                &r.statements[..]
            };
            for s in context {
                conn.execute(s);
            }
            let oracle = r.oracle.unwrap_or(OracleKind::Tlp);
            oracle_check(oracle, source, predicate, conn).kind
        }
        VerdictKind::Crash | VerdictKind::Hang => {
            for s in &r.statements {
                let outcome = conn.execute(s);
                if !outcome.is_ok() {
                    let probe = conn.probe_alive();
                    return crate::oracles::classify_failure(outcome.status, probe);
                }
            }
            VerdictKind::Pass
        }
        other => other,
    }
}
