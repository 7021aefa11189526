//! Uniform execution interface to a target DBMS: statement execution with
//! timeouts, canonical result rendering, liveness probing, and database reset.

pub mod embedded;
pub mod mock;

use std::time::Duration;

use crate::error::ConnectorError;

pub use mock::MockFault;

/// Marker used for NULL cells in canonical row renderings.
pub const NULL_MARKER: &str = "\u{27E8}NULL\u{27E9}"; // ⟨NULL⟩

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecStatus {
    Ok,
    SqlError,
    Timeout,
    ConnectionLost,
}

/// Result of executing one statement. `rows` is present exactly when the
/// statement was a query and completed.
#[derive(Debug, Clone)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub rows: Option<Vec<Vec<String>>>,
    pub message: Option<String>,
    pub elapsed: Duration,
}

impl ExecOutcome {
    pub fn ok_dml(elapsed: Duration) -> Self {
        ExecOutcome { status: ExecStatus::Ok, rows: None, message: None, elapsed }
    }

    pub fn ok_rows(rows: Vec<Vec<String>>, elapsed: Duration) -> Self {
        ExecOutcome { status: ExecStatus::Ok, rows: Some(rows), message: None, elapsed }
    }

    pub fn error(status: ExecStatus, message: impl Into<String>, elapsed: Duration) -> Self {
        ExecOutcome { status, rows: None, message: Some(message.into()), elapsed }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Alive,
    Dead,
    Unresponsive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// Drop all user tables and views.
    DropAll,
    /// Discard the whole database and start from an empty one.
    FreshDatabase,
}

/// Where to connect and how long a statement may run.
#[derive(Debug, Clone)]
pub struct ConnectorConfig {
    pub target: Target,
    pub statement_timeout: Duration,
    pub reset_mode: ResetMode,
}

impl ConnectorConfig {
    pub fn new(target: Target) -> Self {
        ConnectorConfig {
            target,
            statement_timeout: Duration::from_millis(5_000),
            reset_mode: ResetMode::DropAll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// In-process embedded relational engine. An empty path means a private
    /// in-memory database per connection.
    Embedded { path: String },
    /// Fault-injectable mock engine for oracle and crash-detection tests.
    Mock { fault: MockFault },
}

/// Parses a URL-like target descriptor; the scheme selects the adapter.
///
/// `embedded:` or `embedded:<path>` and `mock:<fault>` are understood.
pub fn parse_target(s: &str) -> Result<Target, ConnectorError> {
    if let Some(rest) = s.strip_prefix("embedded:") {
        return Ok(Target::Embedded { path: rest.trim().to_string() });
    }
    if let Some(rest) = s.strip_prefix("mock:") {
        let fault = MockFault::parse(rest.trim())
            .ok_or_else(|| ConnectorError::BadTarget(format!("unknown mock fault '{rest}'")))?;
        return Ok(Target::Mock { fault });
    }
    Err(ConnectorError::BadTarget(format!(
        "unsupported target '{s}' (expected embedded:<path> or mock:<fault>)"
    )))
}

/// One connection to a target engine. Each worker owns its own connection;
/// `probe_alive` may also be issued from a supervisor-owned connection.
pub trait Connector: Send {
    fn execute(&mut self, stmt: &str) -> ExecOutcome;

    /// Brings the database back to an empty state: afterwards catalog queries
    /// report zero user tables and views. Idempotent.
    fn reset_database(&mut self) -> Result<(), ConnectorError>;

    /// Alive iff a trivial query completes within the timeout.
    fn probe_alive(&mut self) -> Liveness;

    /// Restarts a dead or hung engine with an empty database.
    fn restart(&mut self) -> Result<(), ConnectorError>;

    fn engine_version(&self) -> String;
}

/// Opens a connection for the configured target.
pub fn open(cfg: &ConnectorConfig) -> Result<Box<dyn Connector>, ConnectorError> {
    match &cfg.target {
        Target::Embedded { path } => Ok(Box::new(embedded::EmbeddedConnector::open(
            path,
            cfg.statement_timeout,
            cfg.reset_mode,
        )?)),
        Target::Mock { fault } => Ok(Box::new(mock::MockConnector::open(
            *fault,
            cfg.statement_timeout,
        ))),
    }
}

/// Renders an i64 cell canonically (no leading zeros, `-` sign).
pub fn render_int(v: i64) -> String {
    v.to_string()
}

/// Renders a float cell canonically: integral values keep one decimal
/// ("2.0"), magnitudes beyond 1e15 use exponent form, others the shortest
/// round-trip form.
pub fn render_float(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let a = v.abs();
    if v == v.trunc() && a < 1e15 {
        format!("{v:.1}")
    } else if a >= 1e15 || (a > 0.0 && a < 1e-4) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}
