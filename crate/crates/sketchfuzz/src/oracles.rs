//! Metamorphic test oracles (ternary predicate partitioning and the
//! optimization-resistant count comparison), crash/hang classification, and
//! ddmin test-case reduction.

use std::fmt;

use crate::connector::{Connector, ExecOutcome, ExecStatus, Liveness, NULL_MARKER};
use crate::error::ReduceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Tlp,
    Norec,
}

impl OracleKind {
    pub fn name(&self) -> &'static str {
        match self {
            OracleKind::Tlp => "tlp",
            OracleKind::Norec => "norec",
        }
    }

    pub fn parse(s: &str) -> Option<OracleKind> {
        match s {
            "tlp" => Some(OracleKind::Tlp),
            "norec" => Some(OracleKind::Norec),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictKind {
    Pass,
    LogicBug,
    ExpectedError,
    Crash,
    Hang,
}

impl VerdictKind {
    pub fn name(&self) -> &'static str {
        match self {
            VerdictKind::Pass => "Pass",
            VerdictKind::LogicBug => "LogicBug",
            VerdictKind::ExpectedError => "ExpectedError",
            VerdictKind::Crash => "Crash",
            VerdictKind::Hang => "Hang",
        }
    }

    pub fn parse(s: &str) -> Option<VerdictKind> {
        match s {
            "Pass" => Some(VerdictKind::Pass),
            "LogicBug" => Some(VerdictKind::LogicBug),
            "ExpectedError" => Some(VerdictKind::ExpectedError),
            "Crash" => Some(VerdictKind::Crash),
            "Hang" => Some(VerdictKind::Hang),
            _ => None,
        }
    }

    pub fn is_bug(&self) -> bool {
        matches!(self, VerdictKind::LogicBug | VerdictKind::Crash | VerdictKind::Hang)
    }
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one oracle check. For a LogicBug, `details` carries both
/// result multisets; for Crash/Hang, `statements` ends with the statement
/// that took the engine down.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub oracle: OracleKind,
    pub statements: Vec<String>,
    pub details: String,
}

// ---------------------------------------------------------------------------
// canonical multiset comparison
// ---------------------------------------------------------------------------

/// Cell ordering key: the NULL marker sorts before every value.
fn cell_key(cell: &str) -> (u8, &str) {
    if cell == NULL_MARKER {
        (0, cell)
    } else {
        (1, cell)
    }
}

fn sort_rows(rows: &mut [Vec<String>]) {
    rows.sort_by(|a, b| {
        let ka: Vec<(u8, &str)> = a.iter().map(|c| cell_key(c)).collect();
        let kb: Vec<(u8, &str)> = b.iter().map(|c| cell_key(c)).collect();
        ka.cmp(&kb)
    });
}

/// Exact text equality, with a relative tolerance of 1e-9 when both cells
/// parse as non-integral floats.
fn cells_equal(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => {
            let scale = x.abs().max(y.abs()).max(1.0);
            (x - y).abs() <= 1e-9 * scale
        }
        _ => false,
    }
}

fn rows_equal(a: &[String], b: &[String]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

/// Order-insensitive comparison of result sets.
pub fn multisets_equal(a: &[Vec<String>], b: &[Vec<String>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    sort_rows(&mut a);
    sort_rows(&mut b);
    a.iter().zip(&b).all(|(x, y)| rows_equal(x, y))
}

pub fn render_multiset(rows: &[Vec<String>]) -> String {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let body: Vec<String> = sorted.iter().map(|r| format!("[{}]", r.join(", "))).collect();
    format!("{{{}}}", body.join(", "))
}

// ---------------------------------------------------------------------------
// failure classification
// ---------------------------------------------------------------------------

/// Maps a failed execution plus a liveness probe to a verdict kind.
pub fn classify_failure(status: ExecStatus, probe: Liveness) -> VerdictKind {
    match (status, probe) {
        (ExecStatus::SqlError, _) => VerdictKind::ExpectedError,
        (ExecStatus::ConnectionLost, Liveness::Dead) => VerdictKind::Crash,
        (ExecStatus::ConnectionLost, _) => VerdictKind::Crash,
        (ExecStatus::Timeout, Liveness::Unresponsive) => VerdictKind::Hang,
        (ExecStatus::Timeout, Liveness::Dead) => VerdictKind::Crash,
        (ExecStatus::Timeout, Liveness::Alive) => VerdictKind::ExpectedError,
        (ExecStatus::Ok, _) => VerdictKind::Pass,
    }
}

fn failure_verdict(
    oracle: OracleKind,
    outcome: &ExecOutcome,
    conn: &mut dyn Connector,
    executed: Vec<String>,
) -> Verdict {
    let kind = match outcome.status {
        ExecStatus::SqlError => VerdictKind::ExpectedError,
        _ => classify_failure(outcome.status, conn.probe_alive()),
    };
    Verdict {
        kind,
        oracle,
        statements: executed,
        details: outcome.message.clone().unwrap_or_default(),
    }
}

// ---------------------------------------------------------------------------
// TLP
// ---------------------------------------------------------------------------

/// Builds the four partition queries for a predicate over a FROM source.
pub fn tlp_queries(source: &str, predicate: &str) -> [String; 4] {
    [
        format!("SELECT * FROM {source};"),
        format!("SELECT * FROM {source} WHERE {predicate};"),
        format!("SELECT * FROM {source} WHERE NOT ({predicate});"),
        format!("SELECT * FROM {source} WHERE ({predicate}) IS NULL;"),
    ]
}

/// Ternary predicate partitioning: the unfiltered rows must equal the
/// disjoint union of the predicate-true, predicate-false, and
/// predicate-NULL partitions.
pub fn tlp_check(source: &str, predicate: &str, conn: &mut dyn Connector) -> Verdict {
    let queries = tlp_queries(source, predicate);
    let mut results: Vec<Vec<Vec<String>>> = Vec::with_capacity(4);
    let mut executed: Vec<String> = Vec::new();
    for q in &queries {
        let outcome = conn.execute(q);
        executed.push(q.clone());
        if !outcome.is_ok() {
            return failure_verdict(OracleKind::Tlp, &outcome, conn, executed);
        }
        results.push(outcome.rows.unwrap_or_default());
    }
    let mut union: Vec<Vec<String>> = Vec::new();
    for part in &results[1..] {
        union.extend(part.iter().cloned());
    }
    if multisets_equal(&results[0], &union) {
        Verdict {
            kind: VerdictKind::Pass,
            oracle: OracleKind::Tlp,
            statements: executed,
            details: String::new(),
        }
    } else {
        Verdict {
            kind: VerdictKind::LogicBug,
            oracle: OracleKind::Tlp,
            statements: executed,
            details: format!(
                "unpartitioned {} != union of partitions {}",
                render_multiset(&results[0]),
                render_multiset(&union)
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// NoREC
// ---------------------------------------------------------------------------

/// Builds the optimized and unoptimized count queries.
pub fn norec_queries(source: &str, predicate: &str) -> [String; 2] {
    [
        format!("SELECT COUNT(*) FROM {source} WHERE {predicate};"),
        format!(
            "SELECT SUM(CASE WHEN ({predicate}) THEN 1 ELSE 0 END) FROM {source};"
        ),
    ]
}

fn scalar_count(rows: &[Vec<String>]) -> Option<i64> {
    let cell = rows.first()?.first()?;
    if cell == NULL_MARKER {
        // SUM over zero rows: no row satisfied the predicate.
        return Some(0);
    }
    cell.parse().ok()
}

/// Compares a WHERE-filtered COUNT(*) against a per-row CASE sum that the
/// optimizer is unlikely to accelerate. NULL predicate outcomes count as 0.
pub fn norec_check(source: &str, predicate: &str, conn: &mut dyn Connector) -> Verdict {
    let queries = norec_queries(source, predicate);
    let mut counts: Vec<i64> = Vec::with_capacity(2);
    let mut executed: Vec<String> = Vec::new();
    for q in &queries {
        let outcome = conn.execute(q);
        executed.push(q.clone());
        if !outcome.is_ok() {
            return failure_verdict(OracleKind::Norec, &outcome, conn, executed);
        }
        match outcome.rows.as_deref().and_then(scalar_count) {
            Some(n) => counts.push(n),
            None => {
                return Verdict {
                    kind: VerdictKind::ExpectedError,
                    oracle: OracleKind::Norec,
                    statements: executed,
                    details: "count query returned no scalar".into(),
                }
            }
        }
    }
    if counts[0] == counts[1] {
        Verdict {
            kind: VerdictKind::Pass,
            oracle: OracleKind::Norec,
            statements: executed,
            details: String::new(),
        }
    } else {
        Verdict {
            kind: VerdictKind::LogicBug,
            oracle: OracleKind::Norec,
            statements: executed,
            details: format!(
                "optimized count {} != unoptimized count {}",
                counts[0], counts[1]
            ),
        }
    }
}

/// Runs the chosen oracle.
pub fn oracle_check(
    oracle: OracleKind,
    source: &str,
    predicate: &str,
    conn: &mut dyn Connector,
) -> Verdict {
    match oracle {
        OracleKind::Tlp => tlp_check(source, predicate, conn),
        OracleKind::Norec => norec_check(source, predicate, conn),
    }
}

// ---------------------------------------------------------------------------
// ddmin reduction
// ---------------------------------------------------------------------------

fn split_chunks(items: &[String], n: usize) -> Vec<Vec<String>> {
    let mut parts = Vec::with_capacity(n);
    let len = items.len();
    let base = len / n;
    let rem = len % n;
    let mut start = 0;
    for i in 0..n {
        let end = start + base + usize::from(i < rem);
        parts.push(items[start..end].to_vec());
        start = end;
    }
    parts
}

/// Statement-level ddmin: returns an order-preserving sublist on which the
/// check still holds and from which no single statement can be removed
/// (1-minimal). The check must reproduce deterministically; if it fails on
/// the initial list the reduction aborts.
pub fn reduce_testcase<F>(
    statements: &[String],
    mut check: F,
) -> Result<Vec<String>, ReduceError>
where
    F: FnMut(&[String]) -> bool,
{
    if !check(statements) {
        return Err(ReduceError::FlakyCheck);
    }
    let mut current = statements.to_vec();
    let mut granularity = 2usize;
    while current.len() >= 2 {
        let chunks = split_chunks(&current, granularity.min(current.len()));
        let mut reduced = false;

        for chunk in &chunks {
            if chunk.len() < current.len() && check(chunk) {
                current = chunk.clone();
                granularity = 2;
                reduced = true;
                break;
            }
        }
        if !reduced {
            for skip in 0..chunks.len() {
                let complement: Vec<String> = chunks
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .flat_map(|(_, c)| c.iter().cloned())
                    .collect();
                if complement.len() < current.len() && check(&complement) {
                    current = complement;
                    granularity = granularity.saturating_sub(1).max(2);
                    reduced = true;
                    break;
                }
            }
        }
        if !reduced {
            if granularity >= current.len() {
                break;
            }
            granularity = (granularity * 2).min(current.len());
        }
    }

    // Final sweep guarantees 1-minimality.
    loop {
        let mut removed = false;
        for i in 0..current.len() {
            let mut candidate = current.clone();
            candidate.remove(i);
            if check(&candidate) {
                current = candidate;
                removed = true;
                break;
            }
        }
        if !removed {
            break;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connector::embedded::EmbeddedConnector;
    use crate::connector::mock::{MockConnector, MockFault};
    use crate::connector::ResetMode;
    use std::time::Duration;

    fn embedded() -> EmbeddedConnector {
        EmbeddedConnector::open("", Duration::from_millis(5_000), ResetMode::DropAll).unwrap()
    }

    fn mock(fault: MockFault) -> MockConnector {
        MockConnector::open(fault, Duration::from_millis(100))
    }

    fn seed_table(conn: &mut dyn Connector, values: &[&str]) {
        assert!(conn.execute("CREATE TABLE t0 (c0 INT)").is_ok());
        for v in values {
            assert!(conn
                .execute(&format!("INSERT INTO t0 (c0) VALUES ({v})"))
                .is_ok());
        }
    }

    #[test]
    fn tlp_pass_on_null_and_five() {
        // Ternary evaluation of c0 > 3 over {NULL, 5}: true for 5, NULL for
        // the NULL row, so Q1={5}, Q2={}, Q3={NULL} and the union matches.
        for conn in [
            &mut embedded() as &mut dyn Connector,
            &mut mock(MockFault::None) as &mut dyn Connector,
        ] {
            seed_table(conn, &["NULL", "5"]);
            let v = tlp_check("t0", "c0 > 3", conn);
            assert_eq!(v.kind, VerdictKind::Pass, "{}", v.details);
        }
    }

    #[test]
    fn tlp_catches_null_partition_drop() {
        let mut conn = mock(MockFault::NullDrop);
        seed_table(&mut conn, &["NULL", "5"]);
        let v = tlp_check("t0", "c0 > 3", &mut conn);
        assert_eq!(v.kind, VerdictKind::LogicBug);
        assert!(v.details.contains("!="));
    }

    #[test]
    fn tlp_pass_on_empty_table() {
        let mut conn = embedded();
        conn.execute("CREATE TABLE t0 (c0 INT)");
        let v = tlp_check("t0", "c0 > 3", &mut conn);
        assert_eq!(v.kind, VerdictKind::Pass);
    }

    #[test]
    fn tlp_catches_in_over_cast_empty_partitions() {
        // All partitioning queries come back empty while the unfiltered
        // query still returns rows.
        let mut conn = mock(MockFault::InCast);
        seed_table(&mut conn, &["1", "2"]);
        let v = tlp_check("t0", "CAST(c0 AS INT) IN (1, 2)", &mut conn);
        assert_eq!(v.kind, VerdictKind::LogicBug);
    }

    #[test]
    fn tlp_error_is_expected_error() {
        let mut conn = embedded();
        seed_table(&mut conn, &["1"]);
        let v = tlp_check("t0", "nonexistent_column > 0", &mut conn);
        assert_eq!(v.kind, VerdictKind::ExpectedError);
    }

    #[test]
    fn norec_pass_brute_force_count() {
        // Brute force: rows {1,2,3}, predicate c0 >= 2 holds for {2,3}.
        for conn in [
            &mut embedded() as &mut dyn Connector,
            &mut mock(MockFault::None) as &mut dyn Connector,
        ] {
            seed_table(conn, &["1", "2", "3"]);
            let v = norec_check("t0", "c0 >= 2", conn);
            assert_eq!(v.kind, VerdictKind::Pass, "{}", v.details);
        }
    }

    #[test]
    fn norec_pass_on_empty_table() {
        let mut conn = embedded();
        conn.execute("CREATE TABLE t0 (c0 INT)");
        let v = norec_check("t0", "c0 >= 2", &mut conn);
        assert_eq!(v.kind, VerdictKind::Pass, "{}", v.details);
    }

    #[test]
    fn norec_catches_broken_filter_fast_path() {
        let mut conn = mock(MockFault::BoundaryInt);
        seed_table(&mut conn, &["10"]);
        let v = norec_check("t0", "c0 < 9223372036854775807", &mut conn);
        assert_eq!(v.kind, VerdictKind::LogicBug);
        // TLP stays blind here: the filter is wrong the same way in every
        // partition, so the partitions still sum up.
        let t = tlp_check("t0", "c0 < 9223372036854775807", &mut conn);
        assert_eq!(t.kind, VerdictKind::Pass);
    }

    #[test]
    fn crash_and_hang_classification() {
        assert_eq!(
            classify_failure(ExecStatus::Timeout, Liveness::Unresponsive),
            VerdictKind::Hang
        );
        assert_eq!(
            classify_failure(ExecStatus::SqlError, Liveness::Alive),
            VerdictKind::ExpectedError
        );
        assert_eq!(
            classify_failure(ExecStatus::ConnectionLost, Liveness::Dead),
            VerdictKind::Crash
        );
    }

    #[test]
    fn oracle_propagates_crash_from_connector() {
        let mut conn = mock(MockFault::WithCrash);
        seed_table(&mut conn, &["1"]);
        // Kill the engine, then let the oracle discover it.
        conn.execute("CREATE TABLE t1 (c0 INT) WITH (number_of_replicas = 2147483647)");
        let v = tlp_check("t0", "c0 > 0", &mut conn);
        assert_eq!(v.kind, VerdictKind::Crash);
    }

    #[test]
    fn oracle_propagates_hang_from_connector() {
        let mut conn = mock(MockFault::Hang);
        conn.execute("CREATE TABLE t0 (c0 INT, c1 INT)");
        conn.execute("INSERT INTO t0 (c0, c1) VALUES (1, 2)");
        let v = tlp_check("t0", "c0 * c1 = 2", &mut conn);
        assert_eq!(v.kind, VerdictKind::Hang);
    }

    #[test]
    fn multiset_comparison_rules() {
        let a = vec![vec!["1".to_string()], vec![NULL_MARKER.to_string()]];
        let b = vec![vec![NULL_MARKER.to_string()], vec!["1".to_string()]];
        assert!(multisets_equal(&a, &b));
        let c = vec![vec!["1".to_string()], vec!["1".to_string()]];
        assert!(!multisets_equal(&a, &c));
        // Close floats compare equal, distant ones do not.
        assert!(multisets_equal(
            &[vec!["0.30000000000000004".to_string()]],
            &[vec!["0.3".to_string()]]
        ));
        assert!(!multisets_equal(&[vec!["0.31".to_string()]], &[vec!["0.3".to_string()]]));
        // NULL sorts first in rendered diffs.
        assert_eq!(
            render_multiset(&[vec!["2".to_string()], vec![NULL_MARKER.to_string()]]),
            format!("{{[{NULL_MARKER}], [2]}}")
        );
    }

    #[test]
    fn reducer_removes_irrelevant_statement() {
        // The index statement contributes nothing to the failure.
        let statements = vec![
            "CREATE INDEX i0 ON t0 (c0);".to_string(),
            "CREATE TABLE t0 (c0 INT);".to_string(),
            "INSERT INTO t0 (c0) VALUES (NULL);".to_string(),
            "SELECT * FROM t0;".to_string(),
        ];
        // Check: replaying on a null-drop mock still shows the TLP bug, and
        // the final SELECT must survive reduction.
        let check = |stmts: &[String]| -> bool {
            if stmts.last().map(String::as_str) != Some("SELECT * FROM t0;") {
                return false;
            }
            let mut conn = mock(MockFault::NullDrop);
            for s in &stmts[..stmts.len() - 1] {
                conn.execute(s);
            }
            tlp_check("t0", "c0 > 3", &mut conn).kind == VerdictKind::LogicBug
        };
        let reduced = reduce_testcase(&statements, check).unwrap();
        assert_eq!(
            reduced,
            vec![
                "CREATE TABLE t0 (c0 INT);".to_string(),
                "INSERT INTO t0 (c0) VALUES (NULL);".to_string(),
                "SELECT * FROM t0;".to_string(),
            ]
        );
    }

    #[test]
    fn reducer_keeps_already_minimal_case() {
        let statements = vec!["a".to_string(), "b".to_string()];
        let check = |s: &[String]| s.len() == 2;
        assert_eq!(reduce_testcase(&statements, check).unwrap(), statements);
    }

    #[test]
    fn reducer_aborts_on_flaky_check() {
        let statements = vec!["a".to_string()];
        let err = reduce_testcase(&statements, |_| false).unwrap_err();
        assert!(matches!(err, ReduceError::FlakyCheck));
    }

    #[test]
    fn reducer_output_is_one_minimal() {
        // Bug needs statements "b" AND "d" present, order preserved.
        let statements: Vec<String> =
            ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let check = |s: &[String]| {
            s.iter().any(|x| x == "b") && s.iter().any(|x| x == "d")
        };
        let reduced = reduce_testcase(&statements, check).unwrap();
        assert_eq!(reduced, vec!["b".to_string(), "d".to_string()]);
        for i in 0..reduced.len() {
            let mut cand = reduced.clone();
            cand.remove(i);
            assert!(!check(&cand), "not 1-minimal: removal of {i} still fails");
        }
    }
}
