//! Sketch validation by execution, the Beta-posterior support estimate, and
//! run-time pruning of fragments that keep failing in the field.

use crate::connector::{Connector, ExecStatus};
use crate::error::ValidationError;
use crate::generator::{expand_fragment, ExpandCtx, GenRng, GeneratorRegistry};
use crate::model::{
    FragmentId, FragmentStore, SupportStats, Sketch, Validity,
};

/// How one hole is filled during validation.
#[derive(Debug, Clone)]
pub enum HoleFill {
    /// A candidate fragment under test (validity and stats get updated).
    Fragment(FragmentId),
    /// The empty clause.
    Empty,
    /// A known-universal filler that is not itself under test.
    Literal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationOutcome {
    Valid,
    Invalid,
}

#[derive(Debug, Clone)]
pub struct ValidationResult {
    pub outcome: ValidationOutcome,
    pub error_message: Option<String>,
    /// Statements that were executed, for reporting.
    pub statements: Vec<String>,
}

/// The engine died or hung while validating: a learning-time crash is still
/// a bug. Fragments keep their Candidate state.
#[derive(Debug, Clone)]
pub struct CrashSignal {
    pub status: ExecStatus,
    pub statement: String,
    pub message: String,
    pub executed: Vec<String>,
}

/// Substitutes each `{k}` with its assigned text. An empty fill whose
/// placeholder directly follows a separator comma (clause list positions)
/// removes that comma, so "COL INT {1}, {2}" with both empty yields
/// "COL INT".
pub fn fill_sketch(
    sketch: &Sketch,
    assignment: &[(usize, String)],
) -> Result<Vec<String>, ValidationError> {
    let mut fills = vec![None; sketch.holes.len()];
    for (idx, text) in assignment {
        let slot = fills
            .get_mut(*idx)
            .ok_or(ValidationError::IncompleteAssignment)?;
        if slot.is_some() {
            return Err(ValidationError::IncompleteAssignment);
        }
        *slot = Some(text.clone());
    }
    if fills.iter().any(Option::is_none) {
        return Err(ValidationError::IncompleteAssignment);
    }
    let fills: Vec<String> = fills.into_iter().map(Option::unwrap).collect();

    let mut statements: Vec<String> = sketch.context_statements.clone();
    for stmt in &sketch.holed_statements {
        statements.push(substitute(stmt, &fills));
    }
    Ok(statements)
}

fn substitute(stmt: &str, fills: &[String]) -> String {
    let bytes = stmt.as_bytes();
    let mut out = String::with_capacity(stmt.len() + 32);
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut end = start;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end > start && end < bytes.len() && bytes[end] == b'}' {
                if let Ok(k) = stmt[start..end].parse::<usize>() {
                    if let Some(fill) = fills.get(k) {
                        if fill.trim().is_empty() {
                            // Drop one separator comma to the left.
                            let trimmed = out.trim_end();
                            if trimmed.ends_with(',') {
                                let cut = trimmed.len() - 1;
                                out.truncate(cut);
                            }
                        } else {
                            out.push_str(fill.trim());
                        }
                        i = end + 1;
                        continue;
                    }
                }
            }
        }
        out.push(bytes[i] as char);
        i += 1;
    }
    tidy(&out)
}

fn tidy(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut last_space = false;
    for c in s.chars() {
        if c == ' ' {
            if last_space {
                continue;
            }
            last_space = true;
            out.push(c);
        } else {
            if matches!(c, ',' | ')' | ';') && last_space {
                out.pop();
            }
            last_space = false;
            out.push(c);
        }
    }
    out.trim().to_string()
}

/// Expands the fragments of an assignment and executes the filled sketch on
/// a clean database. Every statement must come back Ok for the candidates to
/// be marked Valid; the first engine error marks them Invalid. A lost
/// connection aborts with a crash signal and leaves the candidates untouched.
pub fn validate_candidate(
    sketch: &Sketch,
    assignment: &[(usize, HoleFill)],
    store: &mut FragmentStore,
    conn: &mut dyn Connector,
    registry: &GeneratorRegistry,
    rng: &mut GenRng,
) -> Result<ValidationResult, CrashSignal> {
    let mut texts: Vec<(usize, String)> = Vec::with_capacity(assignment.len());
    let mut under_test: Vec<FragmentId> = Vec::new();
    let mut expand_failure: Option<String> = None;

    let anchor = sketch.schema.tables.first();
    for (idx, fill) in assignment {
        let text = match fill {
            HoleFill::Empty => String::new(),
            HoleFill::Literal(t) => t.clone(),
            HoleFill::Fragment(id) => {
                under_test.push(*id);
                let raw = store
                    .fragment(*id)
                    .map(|f| f.text.clone())
                    .unwrap_or_default();
                let ctx = ExpandCtx {
                    schema: &sketch.schema,
                    anchor_table: anchor,
                    anchor_column: None,
                };
                match expand_fragment(&raw, registry, &ctx, rng) {
                    Ok(t) => t,
                    Err(e) => {
                        expand_failure = Some(e.to_string());
                        String::new()
                    }
                }
            }
        };
        texts.push((*idx, text));
    }

    if let Some(msg) = expand_failure {
        for id in &under_test {
            store.set_validity(*id, Validity::Invalid);
            store.record_execution(*id, false);
        }
        return Ok(ValidationResult {
            outcome: ValidationOutcome::Invalid,
            error_message: Some(msg),
            statements: Vec::new(),
        });
    }

    let statements = match fill_sketch(sketch, &texts) {
        Ok(s) => s,
        Err(e) => {
            return Ok(ValidationResult {
                outcome: ValidationOutcome::Invalid,
                error_message: Some(e.to_string()),
                statements: Vec::new(),
            })
        }
    };

    if conn.reset_database().is_err() {
        return Err(CrashSignal {
            status: ExecStatus::ConnectionLost,
            statement: String::new(),
            message: "engine unavailable before validation".into(),
            executed: Vec::new(),
        });
    }

    let mut executed = Vec::new();
    for stmt in &statements {
        let outcome = conn.execute(stmt);
        executed.push(stmt.clone());
        match outcome.status {
            ExecStatus::Ok => continue,
            ExecStatus::SqlError | ExecStatus::Timeout => {
                for id in &under_test {
                    store.set_validity(*id, Validity::Invalid);
                    store.record_execution(*id, false);
                }
                return Ok(ValidationResult {
                    outcome: ValidationOutcome::Invalid,
                    error_message: outcome.message,
                    statements: executed,
                });
            }
            ExecStatus::ConnectionLost => {
                return Err(CrashSignal {
                    status: outcome.status,
                    statement: stmt.clone(),
                    message: outcome.message.unwrap_or_default(),
                    executed,
                });
            }
        }
    }

    for id in &under_test {
        store.set_validity(*id, Validity::Valid);
        store.record_execution(*id, true);
    }
    Ok(ValidationResult {
        outcome: ValidationOutcome::Valid,
        error_message: None,
        statements: executed,
    })
}

/// Posterior mean success probability under a uniform Beta(1,1) prior.
pub fn estimate_support_prob(stats: &SupportStats) -> f64 {
    (stats.successes as f64 + 1.0) / (stats.trials() as f64 + 2.0)
}

/// Demotes every Valid fragment with at least `min_trials` recorded
/// executions whose posterior mean sits below `threshold`. Demoted fragments
/// disappear from valid lookups. Returns the demoted ids.
pub fn runtime_prune(
    store: &mut FragmentStore,
    threshold: f64,
    min_trials: u64,
) -> Vec<FragmentId> {
    assert!(threshold > 0.0 && threshold < 1.0);
    let demote: Vec<FragmentId> = store
        .fragments()
        .iter()
        .filter(|f| f.validity == Validity::Valid)
        .filter(|f| f.stats.trials() >= min_trials)
        .filter(|f| estimate_support_prob(&f.stats) < threshold)
        .map(|f| f.id)
        .collect();
    for id in &demote {
        store.set_validity(*id, Validity::Demoted);
    }
    demote
}
