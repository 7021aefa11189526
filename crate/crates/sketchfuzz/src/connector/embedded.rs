//! Adapter for the in-process embedded relational engine (SQLite via its
//! standard client interface). Statement timeouts are enforced through the
//! engine's interrupt handle, armed by a shared watchdog thread.

use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::Connection;

use super::{
    render_float, render_int, Connector, ExecOutcome, ExecStatus, Liveness, ResetMode,
    NULL_MARKER,
};
use crate::error::ConnectorError;

struct WatchState {
    armed: Option<(Instant, rusqlite::InterruptHandle)>,
    generation: u64,
    shutdown: bool,
}

struct Watchdog {
    shared: Arc<(Mutex<WatchState>, Condvar)>,
    thread: Option<JoinHandle<()>>,
}

impl Watchdog {
    fn new() -> Self {
        let shared = Arc::new((
            Mutex::new(WatchState { armed: None, generation: 0, shutdown: false }),
            Condvar::new(),
        ));
        let inner = Arc::clone(&shared);
        let thread = std::thread::spawn(move || {
            let (lock, cvar) = &*inner;
            let mut state = lock.lock().unwrap();
            loop {
                if state.shutdown {
                    return;
                }
                match &state.armed {
                    None => {
                        state = cvar.wait(state).unwrap();
                    }
                    Some((deadline, handle)) => {
                        let now = Instant::now();
                        if now >= *deadline {
                            handle.interrupt();
                            state.armed = None;
                        } else {
                            let dur = *deadline - now;
                            let (s, _timeout) = cvar.wait_timeout(state, dur).unwrap();
                            state = s;
                        }
                    }
                }
            }
        });
        Watchdog { shared, thread: Some(thread) }
    }

    fn arm(&self, deadline: Instant, handle: rusqlite::InterruptHandle) -> u64 {
        let (lock, cvar) = &*self.shared;
        let mut state = lock.lock().unwrap();
        state.generation += 1;
        state.armed = Some((deadline, handle));
        let generation = state.generation;
        cvar.notify_all();
        generation
    }

    fn disarm(&self, generation: u64) {
        let (lock, cvar) = &*self.shared;
        let mut state = lock.lock().unwrap();
        if state.generation == generation {
            state.armed = None;
        }
        cvar.notify_all();
    }
}

impl Drop for Watchdog {
    fn drop(&mut self) {
        {
            let (lock, cvar) = &*self.shared;
            let mut state = lock.lock().unwrap();
            state.shutdown = true;
            cvar.notify_all();
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct EmbeddedConnector {
    conn: Connection,
    path: String,
    timeout: Duration,
    reset_mode: ResetMode,
    watchdog: Watchdog,
}

impl EmbeddedConnector {
    pub fn open(path: &str, timeout: Duration, reset_mode: ResetMode) -> Result<Self, ConnectorError> {
        let conn = open_connection(path)?;
        Ok(EmbeddedConnector {
            conn,
            path: path.to_string(),
            timeout,
            reset_mode,
            watchdog: Watchdog::new(),
        })
    }

    fn run_statement(&mut self, stmt: &str) -> ExecOutcome {
        let sql = stmt.trim().trim_end_matches(';');
        let start = Instant::now();
        let deadline = start + self.timeout;
        let generation = self.watchdog.arm(deadline, self.conn.get_interrupt_handle());
        let result = execute_inner(&self.conn, sql);
        self.watchdog.disarm(generation);
        let elapsed = start.elapsed();
        match result {
            Ok(rows) => match rows {
                Some(rows) => ExecOutcome::ok_rows(rows, elapsed),
                None => ExecOutcome::ok_dml(elapsed),
            },
            Err(e) => {
                let msg = e.to_string();
                if msg.contains("interrupted") && elapsed >= self.timeout {
                    ExecOutcome::error(ExecStatus::Timeout, msg, elapsed)
                } else {
                    ExecOutcome::error(ExecStatus::SqlError, msg, elapsed)
                }
            }
        }
    }
}

fn open_connection(path: &str) -> Result<Connection, ConnectorError> {
    let conn = if path.is_empty() {
        Connection::open_in_memory()
    } else {
        Connection::open(path)
    };
    conn.map_err(|e| ConnectorError::Unavailable(e.to_string()))
}

fn execute_inner(conn: &Connection, sql: &str) -> rusqlite::Result<Option<Vec<Vec<String>>>> {
    let mut stmt = conn.prepare(sql)?;
    if stmt.column_count() == 0 {
        stmt.execute([])?;
        return Ok(None);
    }
    let ncols = stmt.column_count();
    let mut out = Vec::new();
    let mut rows = stmt.query([])?;
    while let Some(row) = rows.next()? {
        let mut cells = Vec::with_capacity(ncols);
        for i in 0..ncols {
            cells.push(render_cell(row.get_ref(i)?));
        }
        out.push(cells);
    }
    Ok(Some(out))
}

fn render_cell(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => NULL_MARKER.to_string(),
        ValueRef::Integer(i) => render_int(i),
        ValueRef::Real(f) => render_float(f),
        ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
        ValueRef::Blob(b) => {
            let hex: String = b.iter().map(|x| format!("{x:02x}")).collect();
            format!("x'{hex}'")
        }
    }
}

impl Connector for EmbeddedConnector {
    fn execute(&mut self, stmt: &str) -> ExecOutcome {
        self.run_statement(stmt)
    }

    fn reset_database(&mut self) -> Result<(), ConnectorError> {
        match self.reset_mode {
            ResetMode::FreshDatabase => self.restart(),
            ResetMode::DropAll => {
                // Views first: they may depend on tables.
                for kind in ["view", "table"] {
                    let names: Vec<String> = {
                        let mut stmt = self
                            .conn
                            .prepare(
                                "SELECT name FROM sqlite_master WHERE type = ?1 \
                                 AND name NOT LIKE 'sqlite_%'",
                            )
                            .map_err(|e| ConnectorError::Unavailable(e.to_string()))?;
                        let rows = stmt
                            .query_map([kind], |r| r.get::<_, String>(0))
                            .map_err(|e| ConnectorError::Unavailable(e.to_string()))?;
                        rows.filter_map(Result::ok).collect()
                    };
                    for name in names {
                        let sql = format!("DROP {} IF EXISTS \"{}\"", kind.to_uppercase(), name);
                        self.conn
                            .execute_batch(&sql)
                            .map_err(|e| ConnectorError::Unavailable(e.to_string()))?;
                    }
                }
                Ok(())
            }
        }
    }

    fn probe_alive(&mut self) -> Liveness {
        let outcome = self.run_statement("SELECT 1");
        match outcome.status {
            ExecStatus::Ok => Liveness::Alive,
            ExecStatus::Timeout => Liveness::Unresponsive,
            _ => Liveness::Dead,
        }
    }

    fn restart(&mut self) -> Result<(), ConnectorError> {
        if !self.path.is_empty() {
            let _ = std::fs::remove_file(&self.path);
        }
        self.conn = open_connection(&self.path)?;
        Ok(())
    }

    fn engine_version(&self) -> String {
        let v: String = self
            .conn
            .query_row("SELECT sqlite_version()", [], |r| r.get(0))
            .unwrap_or_else(|_| "unknown".into());
        format!("embedded sqlite {v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conn() -> EmbeddedConnector {
        EmbeddedConnector::open("", Duration::from_millis(2_000), ResetMode::DropAll).unwrap()
    }

    #[test]
    fn identity_query() {
        let mut c = conn();
        let out = c.execute("SELECT 1");
        assert_eq!(out.status, ExecStatus::Ok);
        assert_eq!(out.rows, Some(vec![vec!["1".to_string()]]));
    }

    #[test]
    fn malformed_statement_is_sql_error() {
        let mut c = conn();
        let out = c.execute("SELEC 1");
        assert_eq!(out.status, ExecStatus::SqlError);
        assert!(!out.message.unwrap_or_default().is_empty());
        assert!(out.rows.is_none());
    }

    #[test]
    fn null_and_type_rendering() {
        let mut c = conn();
        c.execute("CREATE TABLE t0 (a INT, b VARCHAR, c REAL)");
        c.execute("INSERT INTO t0 VALUES (NULL, 'x', 2.0)");
        let out = c.execute("SELECT a, b, c FROM t0");
        assert_eq!(
            out.rows,
            Some(vec![vec![NULL_MARKER.to_string(), "x".to_string(), "2.0".to_string()]])
        );
    }

    #[test]
    fn canonical_rendering_is_stable() {
        let mut c = conn();
        c.execute("CREATE TABLE t0 (a INT)");
        c.execute("INSERT INTO t0 VALUES (42), (-7), (NULL)");
        let a = c.execute("SELECT a, a * 2, a + 0.5 FROM t0").rows;
        let b = c.execute("SELECT a, a * 2, a + 0.5 FROM t0").rows;
        assert_eq!(a, b);
    }

    #[test]
    fn reset_empties_catalog_and_is_idempotent() {
        let mut c = conn();
        c.execute("CREATE TABLE t0 (a INT)");
        c.execute("CREATE TABLE t1 (a INT)");
        c.execute("CREATE VIEW v0 AS SELECT a FROM t0");
        c.reset_database().unwrap();
        let out = c.execute(
            "SELECT count(*) FROM sqlite_master WHERE type IN ('table','view') \
             AND name NOT LIKE 'sqlite_%'",
        );
        assert_eq!(out.rows, Some(vec![vec!["0".to_string()]]));
        c.reset_database().unwrap();
        let after = c.execute("SELECT * FROM t0");
        assert_eq!(after.status, ExecStatus::SqlError);
    }

    #[test]
    fn long_statement_times_out() {
        let mut c =
            EmbeddedConnector::open("", Duration::from_millis(150), ResetMode::DropAll).unwrap();
        let start = Instant::now();
        let out = c.execute(
            "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) \
             SELECT count(*) FROM c",
        );
        assert_eq!(out.status, ExecStatus::Timeout);
        assert!(out.elapsed >= Duration::from_millis(150));
        // Grace bound: never blocks much longer than the timeout.
        assert!(start.elapsed() < Duration::from_millis(2_000));
        // The connection stays usable.
        let ok = c.execute("SELECT 1");
        assert_eq!(ok.status, ExecStatus::Ok);
    }

    #[test]
    fn probe_healthy_engine() {
        let mut c = conn();
        assert_eq!(c.probe_alive(), Liveness::Alive);
    }
}
