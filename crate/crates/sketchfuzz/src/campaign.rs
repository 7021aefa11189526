//! Feature-oriented testing scheduler: feature-pool initialization,
//! interleaved learning and testing phases with probability boosting for the
//! feature under test, run-time pruning, and the outer fuzzing loop across
//! worker threads.

use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;

use crate::connector::{
    mock::MockConnector, Connector, ConnectorConfig, ExecStatus, Target,
};
use crate::error::{BackendError, ConnectorError, StoreError};
use crate::generator::{
    expand_fragment, generate_context, generate_predicate, ExpandCtx, FragmentPolicy, GenConfig,
    GenRng, GeneratorRegistry,
};
use crate::model::{
    Feature, FeatureId, FeatureLevel, FeatureStatus, FragmentId, FragmentOrigin, FragmentStore,
    HoleKind, SchemaModel, TableDef, Validity,
};
use crate::oracles::{oracle_check, reduce_testcase, OracleKind, VerdictKind};
use crate::report::{write_report, BugReport};
use crate::sketcher::{make_sketch, make_type_expression_sketch, SketchRequest};
use crate::synthesizer::{
    synthesize_fragments, CandidateFragment, CompletionRequest, RequestKind, SynthesisContext,
};
use crate::validator::{runtime_prune, validate_candidate, HoleFill, ValidationOutcome};

// ---------------------------------------------------------------------------
// shared store
// ---------------------------------------------------------------------------

/// Fragment store shared across workers: concurrent reads, serialized
/// writes, optional append-only persistence.
pub struct SharedStore {
    inner: RwLock<FragmentStore>,
    sink: Mutex<Option<std::fs::File>>,
}

impl SharedStore {
    pub fn new(store: FragmentStore) -> Self {
        SharedStore { inner: RwLock::new(store), sink: Mutex::new(None) }
    }

    /// Loads an existing store file when present and appends snapshots to it.
    pub fn with_persistence(path: &std::path::Path) -> Result<Self, StoreError> {
        let store = match std::fs::File::open(path) {
            Ok(f) => FragmentStore::load(std::io::BufReader::new(f))?,
            Err(_) => FragmentStore::new(),
        };
        let sink = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(SharedStore {
            inner: RwLock::new(store),
            sink: Mutex::new(Some(sink)),
        })
    }

    pub fn read<R>(&self, f: impl FnOnce(&FragmentStore) -> R) -> R {
        f(&self.inner.read().unwrap())
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut FragmentStore) -> R) -> R {
        f(&mut self.inner.write().unwrap())
    }

    /// Appends a full snapshot; loading folds later records over earlier.
    pub fn persist(&self) {
        let mut guard = self.sink.lock().unwrap();
        if let Some(sink) = guard.as_mut() {
            let store = self.inner.read().unwrap();
            let _ = store.save(&mut *sink);
            let _ = sink.flush();
        }
    }

    pub fn into_inner(self) -> FragmentStore {
        self.inner.into_inner().unwrap()
    }
}

// ---------------------------------------------------------------------------
// configuration and reporting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    /// Oracle checks per testing phase.
    pub max_queries: u32,
    /// Oracle checks per database state; the default phase spans two states.
    pub queries_per_state: u32,
    pub learning_enabled: bool,
    /// When false, synthesized candidates are trusted blindly: no execution
    /// check at learning time and no run-time pruning (ablation knob).
    pub validate_fragments: bool,
    pub boost_factor: f64,
    pub threads: u32,
    pub statement_budget: Option<u64>,
    pub wall_clock: Option<Duration>,
    /// Stop once every pool feature is Learned (learning-only runs).
    pub stop_when_pool_learned: bool,
    pub gen: GenConfig,
    pub prune_threshold: f64,
    pub min_trials: u64,
    /// Probability that a check uses the partitioning oracle instead of the
    /// count-comparison oracle.
    pub tlp_probability: f64,
    pub dbms_name: String,
    pub out_dir: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            max_queries: 1_000,
            queries_per_state: 500,
            learning_enabled: true,
            validate_fragments: true,
            boost_factor: 10.0,
            threads: 1,
            statement_budget: None,
            wall_clock: None,
            stop_when_pool_learned: false,
            gen: GenConfig::default(),
            prune_threshold: 0.5,
            min_trials: 20,
            tlp_probability: 0.5,
            dbms_name: "sqlite".into(),
            out_dir: None,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct CampaignReport {
    pub statements_executed: u64,
    pub statements_ok: u64,
    pub oracle_checks: u64,
    pub fragments_learned: u64,
    pub fragments_demoted: u64,
    pub features_learned: u64,
    pub logic_bugs: u64,
    pub crashes: u64,
    pub hangs: u64,
    pub bug_files: Vec<PathBuf>,
}

impl CampaignReport {
    pub fn validity_rate(&self) -> f64 {
        if self.statements_executed == 0 {
            return 1.0;
        }
        self.statements_ok as f64 / self.statements_executed as f64
    }

    pub fn bugs_found(&self) -> u64 {
        self.logic_bugs + self.crashes + self.hangs
    }

    pub fn render(&self) -> String {
        format!(
            "statements_executed={}\nstatements_ok={}\nvalidity_rate={:.4}\noracle_checks={}\n\
             fragments_learned={}\nfragments_demoted={}\nfeatures_learned={}\nlogic_bugs={}\n\
             crashes={}\nhangs={}\n",
            self.statements_executed,
            self.statements_ok,
            self.validity_rate(),
            self.oracle_checks,
            self.fragments_learned,
            self.fragments_demoted,
            self.features_learned,
            self.logic_bugs,
            self.crashes,
            self.hangs,
        )
    }
}

// ---------------------------------------------------------------------------
// budget and connections
// ---------------------------------------------------------------------------

struct Budget {
    statements: Option<AtomicI64>,
    deadline: Option<Instant>,
    stopped: AtomicBool,
}

impl Budget {
    fn new(cfg: &CampaignConfig) -> Self {
        Budget {
            statements: cfg.statement_budget.map(|n| AtomicI64::new(n as i64)),
            deadline: cfg.wall_clock.map(|d| Instant::now() + d),
            stopped: AtomicBool::new(false),
        }
    }

    /// Consumes budget for one executed statement.
    fn take(&self) -> bool {
        if self.exhausted() {
            return false;
        }
        if let Some(s) = &self.statements {
            if s.fetch_sub(1, Ordering::SeqCst) <= 0 {
                return false;
            }
        }
        true
    }

    fn exhausted(&self) -> bool {
        if self.stopped.load(Ordering::SeqCst) {
            return true;
        }
        if let Some(s) = &self.statements {
            if s.load(Ordering::SeqCst) <= 0 {
                return true;
            }
        }
        if let Some(d) = self.deadline {
            if Instant::now() >= d {
                return true;
            }
        }
        false
    }

    fn stop(&self) {
        self.stopped.store(true, Ordering::SeqCst);
    }
}

/// Produces worker connections. Mock connections share one engine process;
/// embedded workers each get their own database.
pub enum ConnectionFactory {
    Embedded { path: String, timeout: Duration, reset: crate::connector::ResetMode },
    Mock { root: MockConnector },
}

impl ConnectionFactory {
    pub fn new(cfg: &ConnectorConfig) -> Result<Self, ConnectorError> {
        match &cfg.target {
            Target::Embedded { path } => Ok(ConnectionFactory::Embedded {
                path: path.clone(),
                timeout: cfg.statement_timeout,
                reset: cfg.reset_mode,
            }),
            Target::Mock { fault } => Ok(ConnectionFactory::Mock {
                root: MockConnector::open(*fault, cfg.statement_timeout),
            }),
        }
    }

    pub fn connect(&self, worker: u32) -> Result<Box<dyn Connector>, ConnectorError> {
        match self {
            ConnectionFactory::Mock { root } => Ok(Box::new(root.share())),
            ConnectionFactory::Embedded { path, timeout, reset } => {
                let worker_path = if path.is_empty() || worker == 0 {
                    path.clone()
                } else {
                    format!("{path}.w{worker}")
                };
                let conn = crate::connector::embedded::EmbeddedConnector::open(
                    &worker_path,
                    *timeout,
                    *reset,
                )?;
                Ok(Box::new(conn))
            }
        }
    }

    /// A connection to an equivalent engine with fully isolated state, for
    /// deterministic reduction replays.
    pub fn isolated(&self) -> Result<Box<dyn Connector>, ConnectorError> {
        match self {
            ConnectionFactory::Mock { root } => Ok(Box::new(MockConnector::open(
                root.fault(),
                Duration::from_millis(200),
            ))),
            ConnectionFactory::Embedded { timeout, reset, .. } => {
                let conn =
                    crate::connector::embedded::EmbeddedConnector::open("", *timeout, *reset)?;
                Ok(Box::new(conn))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// bug sink
// ---------------------------------------------------------------------------

struct BugSink {
    dedup: HashSet<String>,
    next_index: usize,
    out_dir: Option<PathBuf>,
    files: Vec<PathBuf>,
}

impl BugSink {
    fn new(out_dir: Option<PathBuf>) -> Self {
        BugSink { dedup: HashSet::new(), next_index: 1, out_dir, files: Vec::new() }
    }

    fn is_known(&self, key: &str) -> bool {
        self.dedup.contains(key)
    }

    /// Returns false when an equivalent report was already emitted.
    fn submit(&mut self, report: &BugReport) -> bool {
        if !self.dedup.insert(report.dedup_key()) {
            return false;
        }
        if let Some(dir) = &self.out_dir {
            if let Ok(path) = write_report(&dir.join("bugs"), self.next_index, report) {
                self.files.push(path);
            }
        }
        self.next_index += 1;
        true
    }
}

// ---------------------------------------------------------------------------
// feature pool
// ---------------------------------------------------------------------------

/// Built-in base features seeded when no backend listing is available.
fn builtin_pool() -> Vec<(FeatureLevel, &'static str)> {
    let mut v: Vec<(FeatureLevel, &'static str)> = vec![(FeatureLevel::Statement, "INSERT")];
    for op in crate::generator::BUILTIN_COMPARISONS {
        v.push((FeatureLevel::Expression, op));
    }
    for op in ["AND", "OR", "NOT", "+", "-", "*", "IS NULL", "IS NOT NULL"] {
        v.push((FeatureLevel::Expression, op));
    }
    for ty in ["INT", "VARCHAR", "BOOLEAN"] {
        v.push((FeatureLevel::DataType, ty));
    }
    v
}

fn feature_list_prompt(dbms: &str, level: FeatureLevel) -> String {
    format!(
        "List the {} feature names of {dbms} for a SQL test-case generator, one name per \
         line, nothing else. For example, CREATE TABLE for statement-level features and INT \
         for data-type features.",
        level.phrase()
    )
}

/// Queries the backend once per level for feature names и merges them with
/// persisted features; without a backend answer the built-in pool seeds the
/// store.
pub fn initialize_features(
    ctx: &SynthesisContext,
    store: &SharedStore,
) -> Result<usize, BackendError> {
    let mut added = 0;
    for (level, name) in builtin_pool() {
        store.write(|s| {
            s.add_feature(level, name);
        });
    }
    for level in FeatureLevel::ALL {
        let request = CompletionRequest {
            kind: RequestKind::FeatureList { level },
            prompt: feature_list_prompt(&ctx.dbms, level),
        };
        let response = ctx
            .backend
            .complete(&request, &ctx.transcript)
            .unwrap_or_default();
        if let Some(text) = response {
            for line in text.lines().take(200) {
                let name = line.trim().trim_matches(',');
                if name.is_empty() || name.starts_with("```") || name.len() > 64 {
                    continue;
                }
                store.write(|s| {
                    let before = s.features().len();
                    s.add_feature(level, name);
                    if s.features().len() > before {
                        added += 1;
                    }
                });
            }
        }
    }
    Ok(added)
}

fn pick_unlearned(store: &SharedStore, rng: &mut GenRng) -> Option<Feature> {
    store.write(|s| {
        let unlearned: Vec<FeatureId> = s
            .features()
            .iter()
            .filter(|f| f.status == FeatureStatus::Unlearned)
            .map(|f| f.id)
            .collect();
        if unlearned.is_empty() {
            return None;
        }
        let id = unlearned[rng.gen_range(0..unlearned.len())];
        s.set_feature_status(id, FeatureStatus::Learning);
        s.feature(id).cloned()
    })
}

fn all_learned(store: &SharedStore) -> bool {
    store.read(|s| {
        !s.features().is_empty()
            && s.features().iter().all(|f| f.status == FeatureStatus::Learned)
    })
}

// ---------------------------------------------------------------------------
// learning
// ---------------------------------------------------------------------------

struct LearnEnv<'a> {
    ctx: &'a SynthesisContext,
    store: &'a SharedStore,
    registry: &'a GeneratorRegistry,
    sink: &'a Mutex<BugSink>,
    engine_version: String,
    seed: u64,
    validate: bool,
}

fn insert_candidate(
    store: &SharedStore,
    feature_id: FeatureId,
    c: &CandidateFragment,
) -> Option<FragmentId> {
    store.write(|s| match s.add_fragment(
        feature_id,
        c.kind,
        &c.text,
        Validity::Candidate,
        FragmentOrigin::Synthesized,
    ) {
        crate::model::AddOutcome::Added(id) => Some(id),
        _ => None,
    })
}

fn report_learning_crash(
    env: &LearnEnv<'_>,
    signal: &crate::validator::CrashSignal,
    conn: &mut dyn Connector,
) {
    let kind = crate::oracles::classify_failure(signal.status, conn.probe_alive());
    let report = BugReport {
        kind: if kind.is_bug() { kind } else { VerdictKind::Crash },
        oracle: None,
        engine: env.engine_version.clone(),
        seed: env.seed,
        source: None,
        predicate: None,
        statements: signal.executed.clone(),
        observations: vec![],
        details: format!("engine failure during fragment validation: {}", signal.message),
    };
    env.sink.lock().unwrap().submit(&report);
    let _ = conn.restart();
}

/// Validates one candidate in its hole; the other holes take universal
/// fills (empty clause for clause holes, SELECT 1 for statement holes).
fn validate_single(
    env: &LearnEnv<'_>,
    sketch: &crate::model::Sketch,
    candidate_id: FragmentId,
    candidate_index: usize,
    conn: &mut dyn Connector,
    rng: &mut GenRng,
) -> bool {
    if !env.validate {
        env.store.write(|s| s.set_validity(candidate_id, Validity::Valid));
        return true;
    }
    let assignment: Vec<(usize, HoleFill)> = sketch
        .holes
        .iter()
        .map(|(idx, kind)| {
            if *idx == candidate_index {
                (*idx, HoleFill::Fragment(candidate_id))
            } else if *kind == HoleKind::WholeStatement {
                (*idx, HoleFill::Literal("SELECT 1".into()))
            } else {
                (*idx, HoleFill::Empty)
            }
        })
        .collect();
    let result = env.store.write(|s| {
        validate_candidate(sketch, &assignment, s, conn, env.registry, rng)
    });
    match result {
        Ok(r) => r.outcome == ValidationOutcome::Valid,
        Err(signal) => {
            report_learning_crash(env, &signal, conn);
            false
        }
    }
}

/// Learns one feature: builds the level-appropriate sketch, synthesizes
/// candidates, validates each on a clean database, and stores the outcomes.
/// Data-type features additionally learn expression fragments over the new
/// type in the same phase. Returns the number of new Valid fragments.
fn learn_feature(
    env: &LearnEnv<'_>,
    feature: &Feature,
    conn: &mut dyn Connector,
    rng: &mut GenRng,
) -> Result<usize, BackendError> {
    // Expression features are probed at every node position; the other
    // levels have one sketch shape each.
    if feature.level == FeatureLevel::Expression {
        let req = SketchRequest::for_feature(feature);
        let mut new_valid = 0usize;
        for kind in crate::sketcher::EXPRESSION_HOLE_KINDS {
            let sketch = crate::sketcher::make_expression_sketch_of_kind(&req, kind, rng);
            let candidates = {
                let store = env.store.inner.read().unwrap();
                synthesize_fragments(env.ctx, feature, &sketch, &store, env.registry, rng)
            };
            let candidates = match candidates {
                Ok(c) => c,
                Err(e) => {
                    env.store
                        .write(|s| s.set_feature_status(feature.id, FeatureStatus::Unlearned));
                    return Err(e);
                }
            };
            for c in &candidates {
                if let Some(id) = insert_candidate(env.store, feature.id, c) {
                    if validate_single(env, &sketch, id, c.hole_index, conn, rng) {
                        new_valid += 1;
                    }
                }
            }
        }
        env.store
            .write(|s| s.set_feature_status(feature.id, FeatureStatus::Learned));
        env.store.persist();
        return Ok(new_valid);
    }

    let req = SketchRequest::for_feature(feature);
    let sketch = make_sketch(&req, rng);
    let candidates = {
        let store = env.store.inner.read().unwrap();
        synthesize_fragments(env.ctx, feature, &sketch, &store, env.registry, rng)
    };
    let candidates = match candidates {
        Ok(c) => c,
        Err(e) => {
            env.store
                .write(|s| s.set_feature_status(feature.id, FeatureStatus::Unlearned));
            return Err(e);
        }
    };

    let mut new_valid = 0usize;
    if feature.level == FeatureLevel::DataType {
        // Pair the k-th type name with the k-th literal.
        let types: Vec<&CandidateFragment> =
            candidates.iter().filter(|c| c.hole_index == 0).collect();
        let literals: Vec<&CandidateFragment> =
            candidates.iter().filter(|c| c.hole_index == 1).collect();
        let mut valid_pair: Option<(String, String)> = None;
        for (ty, lit) in types.iter().zip(&literals) {
            let tid = insert_candidate(env.store, feature.id, ty);
            let lid = insert_candidate(env.store, feature.id, lit);
            let (Some(tid), Some(lid)) = (tid, lid) else { continue };
            if !env.validate {
                env.store.write(|s| {
                    s.set_validity(tid, Validity::Valid);
                    s.set_validity(lid, Validity::Valid);
                });
                new_valid += 2;
                if valid_pair.is_none() {
                    valid_pair = Some((ty.text.clone(), lit.text.clone()));
                }
                continue;
            }
            let assignment =
                vec![(0, HoleFill::Fragment(tid)), (1, HoleFill::Fragment(lid))];
            let result = env.store.write(|s| {
                validate_candidate(&sketch, &assignment, s, conn, env.registry, rng)
            });
            match result {
                Ok(r) if r.outcome == ValidationOutcome::Valid => {
                    new_valid += 2;
                    if valid_pair.is_none() {
                        valid_pair = Some((ty.text.clone(), lit.text.clone()));
                    }
                }
                Ok(_) => {}
                Err(signal) => report_learning_crash(env, &signal, conn),
            }
        }
        // Learn expressions over the newly supported type.
        if let Some((ty, lit)) = valid_pair {
            if let Ok(expr_sketch) =
                make_type_expression_sketch(feature, &ty, &lit, env.registry, rng)
            {
                let expr_candidates = {
                    let store = env.store.inner.read().unwrap();
                    synthesize_fragments(
                        env.ctx,
                        feature,
                        &expr_sketch,
                        &store,
                        env.registry,
                        rng,
                    )
                };
                if let Ok(cands) = expr_candidates {
                    for c in &cands {
                        if let Some(id) = insert_candidate(env.store, feature.id, c) {
                            if validate_single(env, &expr_sketch, id, c.hole_index, conn, rng) {
                                new_valid += 1;
                            }
                        }
                    }
                }
            }
        }
    } else {
        for c in &candidates {
            if let Some(id) = insert_candidate(env.store, feature.id, c) {
                if validate_single(env, &sketch, id, c.hole_index, conn, rng) {
                    new_valid += 1;
                }
            }
        }
    }

    env.store
        .write(|s| s.set_feature_status(feature.id, FeatureStatus::Learned));
    env.store.persist();
    Ok(new_valid)
}

// ---------------------------------------------------------------------------
// testing phase
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
pub struct PhaseStats {
    pub statements_executed: u64,
    pub statements_ok: u64,
    pub oracle_checks: u64,
    pub logic_bugs: u64,
    pub crashes: u64,
    pub hangs: u64,
    pub demoted: u64,
}

struct Transcript {
    file: Option<std::io::BufWriter<std::fs::File>>,
}

impl Transcript {
    fn open(out_dir: &Option<PathBuf>, worker: u32) -> Transcript {
        let file = out_dir.as_ref().and_then(|dir| {
            std::fs::create_dir_all(dir).ok()?;
            let f = std::fs::File::create(dir.join(format!("transcript-w{worker}.sql"))).ok()?;
            Some(std::io::BufWriter::new(f))
        });
        Transcript { file }
    }

    fn line(&mut self, stmt: &str) {
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{stmt}");
        }
    }

    fn flush(&mut self) {
        if let Some(f) = &mut self.file {
            let _ = f.flush();
        }
    }
}

fn record_fragment_stats(store: &SharedStore, ids: &[FragmentId], success: bool) {
    if ids.is_empty() {
        return;
    }
    store.write(|s| {
        for id in ids {
            s.record_execution(*id, success);
        }
    });
}

fn pick_source<'a>(
    schema: &'a SchemaModel,
    rng: &mut GenRng,
) -> (String, Vec<&'a TableDef>) {
    let relations: Vec<&TableDef> = schema.relations().collect();
    let join = relations.len() >= 2 && rng.gen_bool(0.15);
    let tables: Vec<&TableDef> = if join {
        let a = rng.gen_range(0..relations.len());
        let mut b = rng.gen_range(0..relations.len() - 1);
        if b >= a {
            b += 1;
        }
        vec![relations[a], relations[b]]
    } else {
        vec![relations[rng.gen_range(0..relations.len())]]
    };
    let source = tables.iter().map(|t| t.name.clone()).collect::<Vec<_>>().join(", ");
    (source, tables)
}

/// Captures the oracle query results on an isolated engine for the report.
fn capture_observations(
    factory: &ConnectionFactory,
    context: &[String],
    queries: &[String],
) -> Vec<(String, String)> {
    let Ok(mut conn) = factory.isolated() else { return Vec::new() };
    for s in context {
        conn.execute(s);
    }
    queries
        .iter()
        .map(|q| {
            let outcome = conn.execute(q);
            let rendered = match (&outcome.rows, &outcome.message) {
                (Some(rows), _) => crate::oracles::render_multiset(rows),
                (None, Some(msg)) => format!("error: {msg}"),
                (None, None) => "ok".to_string(),
            };
            (q.clone(), rendered)
        })
        .collect()
}

struct WorkerEnv<'a> {
    cfg: &'a CampaignConfig,
    store: &'a SharedStore,
    factory: &'a ConnectionFactory,
    registry: &'a GeneratorRegistry,
    budget: &'a Budget,
    sink: &'a Mutex<BugSink>,
    engine_version: String,
}

/// Reduces a logic-bug reproduction (context + unfiltered query last) to a
/// 1-minimal statement list.
fn reduce_logic_bug(
    factory: &ConnectionFactory,
    context: &[String],
    oracle: OracleKind,
    source: &str,
    predicate: &str,
) -> Vec<String> {
    let q0 = format!("SELECT * FROM {source};");
    let mut statements: Vec<String> = context.to_vec();
    statements.push(q0.clone());
    let check = |stmts: &[String]| -> bool {
        if stmts.last() != Some(&q0) {
            return false;
        }
        let Ok(mut conn) = factory.isolated() else { return false };
        for s in &stmts[..stmts.len() - 1] {
            conn.execute(s);
        }
        oracle_check(oracle, source, predicate, conn.as_mut()).kind == VerdictKind::LogicBug
    };
    reduce_testcase(&statements, check).unwrap_or(statements)
}

/// Reduces a crash or hang reproduction: the failure must reappear with the
/// same classification when the list is replayed on a fresh engine.
fn reduce_engine_failure(
    factory: &ConnectionFactory,
    statements: &[String],
    expected: VerdictKind,
) -> Vec<String> {
    let check = |stmts: &[String]| -> bool {
        let Ok(mut conn) = factory.isolated() else { return false };
        for s in stmts {
            let outcome = conn.execute(s);
            if !outcome.is_ok() {
                if outcome.status == ExecStatus::SqlError {
                    continue;
                }
                let probe = conn.probe_alive();
                return crate::oracles::classify_failure(outcome.status, probe) == expected;
            }
        }
        false
    };
    reduce_testcase(statements, check).unwrap_or_else(|_| statements.to_vec())
}

fn handle_bug_verdict(
    env: &WorkerEnv<'_>,
    verdict: &crate::oracles::Verdict,
    context: &[String],
    source: &str,
    predicate: &str,
    seed: u64,
    stats: &mut PhaseStats,
) {
    match verdict.kind {
        VerdictKind::LogicBug => stats.logic_bugs += 1,
        VerdictKind::Crash => stats.crashes += 1,
        VerdictKind::Hang => stats.hangs += 1,
        _ => {}
    }
    // Reduction replays the failure repeatedly; skip it for reports an
    // earlier verdict already covers.
    let prelim = BugReport {
        kind: verdict.kind,
        oracle: Some(verdict.oracle),
        engine: String::new(),
        seed,
        source: None,
        predicate: None,
        statements: vec![],
        observations: vec![],
        details: verdict.details.clone(),
    };
    if env.sink.lock().unwrap().is_known(&prelim.dedup_key()) {
        return;
    }
    let (statements, observations) = match verdict.kind {
        VerdictKind::LogicBug => {
            let reduced = reduce_logic_bug(
                env.factory,
                context,
                verdict.oracle,
                source,
                predicate,
            );
            let ctx_part = &reduced[..reduced.len().saturating_sub(1)];
            let obs = capture_observations(env.factory, ctx_part, &verdict.statements);
            (reduced, obs)
        }
        VerdictKind::Crash | VerdictKind::Hang => {
            let mut full = context.to_vec();
            full.extend(verdict.statements.iter().cloned());
            (reduce_engine_failure(env.factory, &full, verdict.kind), Vec::new())
        }
        _ => return,
    };
    let report = BugReport {
        kind: verdict.kind,
        oracle: Some(verdict.oracle),
        engine: env.engine_version.clone(),
        seed,
        source: Some(source.to_string()),
        predicate: Some(predicate.to_string()),
        statements,
        observations,
        details: verdict.details.clone(),
    };
    env.sink.lock().unwrap().submit(&report);
}

/// One testing phase: fresh database states, boosted generation for the
/// feature under test, oracle checks until the per-phase quota, statistics
/// flow into the store, pruning at phase end.
fn testing_phase(
    env: &WorkerEnv<'_>,
    boosted: Option<FeatureId>,
    conn: &mut Box<dyn Connector>,
    rng: &mut GenRng,
    transcript: &mut Transcript,
) -> PhaseStats {
    let mut stats = PhaseStats::default();
    let policy = FragmentPolicy {
        probability: env.cfg.gen.fragment_probability,
        boosted_feature: boosted,
        boost_factor: env.cfg.boost_factor,
    };
    let seed = env.cfg.gen.seed;

    'phase: while stats.oracle_checks < env.cfg.max_queries as u64 {
        if env.budget.exhausted() {
            break;
        }
        if conn.reset_database().is_err() {
            let _ = conn.restart();
            if conn.reset_database().is_err() {
                break;
            }
        }
        let context = env.store.read(|s| generate_context(&env.cfg.gen, s, &policy, rng));
        let mut executed_context: Vec<String> = Vec::new();
        for stmt in &context.statements {
            if !env.budget.take() {
                break 'phase;
            }
            transcript.line(&stmt.text);
            let outcome = conn.execute(&stmt.text);
            stats.statements_executed += 1;
            executed_context.push(stmt.text.clone());
            match outcome.status {
                ExecStatus::Ok => {
                    stats.statements_ok += 1;
                    record_fragment_stats(env.store, &stmt.fragments, true);
                }
                ExecStatus::SqlError => {
                    record_fragment_stats(env.store, &stmt.fragments, false);
                }
                ExecStatus::Timeout | ExecStatus::ConnectionLost => {
                    record_fragment_stats(env.store, &stmt.fragments, false);
                    let kind =
                        crate::oracles::classify_failure(outcome.status, conn.probe_alive());
                    if kind.is_bug() {
                        match kind {
                            VerdictKind::Crash => stats.crashes += 1,
                            VerdictKind::Hang => stats.hangs += 1,
                            _ => {}
                        }
                        let mut report = BugReport {
                            kind,
                            oracle: None,
                            engine: env.engine_version.clone(),
                            seed,
                            source: None,
                            predicate: None,
                            statements: vec![],
                            observations: vec![],
                            details: outcome.message.clone().unwrap_or_default(),
                        };
                        let known =
                            env.sink.lock().unwrap().is_known(&report.dedup_key());
                        if !known {
                            report.statements =
                                reduce_engine_failure(env.factory, &executed_context, kind);
                            env.sink.lock().unwrap().submit(&report);
                        }
                    }
                    let _ = conn.restart();
                    continue 'phase;
                }
            }
        }

        // Learned whole statements run as un-oracled state mutations.
        let whole: Vec<(FragmentId, String)> = env.store.read(|s| {
            s.lookup(HoleKind::WholeStatement, true)
                .into_iter()
                .filter(|f| f.origin == FragmentOrigin::Synthesized)
                .map(|f| (f.id, f.text.clone()))
                .collect()
        });
        if !whole.is_empty() && rng.gen_bool(policy.probability.clamp(0.0, 1.0)) {
            let (id, text) = whole[rng.gen_range(0..whole.len())].clone();
            let ctx = ExpandCtx::schema_only(&context.schema);
            if let Ok(expanded) = expand_fragment(&text, env.registry, &ctx, rng) {
                if env.budget.take() {
                    transcript.line(&expanded);
                    let outcome = conn.execute(&expanded);
                    stats.statements_executed += 1;
                    if outcome.is_ok() {
                        stats.statements_ok += 1;
                    }
                    record_fragment_stats(env.store, &[id], outcome.is_ok());
                    executed_context.push(expanded);
                }
            }
        }

        let per_state = env
            .cfg
            .queries_per_state
            .min(env.cfg.max_queries - stats.oracle_checks as u32)
            .max(1);
        for _ in 0..per_state {
            if env.budget.exhausted() {
                break 'phase;
            }
            let (source, predicate) = {
                let store = env.store.inner.read().unwrap();
                let (source, tables) = pick_source(&context.schema, rng);
                let pred =
                    generate_predicate(&context.schema, &tables, &store, &policy, rng);
                (source, pred)
            };
            let oracle = if rng.gen_bool(env.cfg.tlp_probability.clamp(0.0, 1.0)) {
                OracleKind::Tlp
            } else {
                OracleKind::Norec
            };
            let verdict = oracle_check(oracle, &source, &predicate.text, conn.as_mut());
            stats.oracle_checks += 1;
            for q in &verdict.statements {
                transcript.line(q);
                let _ = env.budget.take();
            }
            stats.statements_executed += verdict.statements.len() as u64;
            match verdict.kind {
                VerdictKind::Pass | VerdictKind::LogicBug => {
                    stats.statements_ok += verdict.statements.len() as u64;
                    record_fragment_stats(env.store, &predicate.fragments, true);
                }
                VerdictKind::ExpectedError => {
                    stats.statements_ok += (verdict.statements.len() as u64).saturating_sub(1);
                    record_fragment_stats(env.store, &predicate.fragments, false);
                }
                VerdictKind::Crash | VerdictKind::Hang => {
                    stats.statements_ok += (verdict.statements.len() as u64).saturating_sub(1);
                    record_fragment_stats(env.store, &predicate.fragments, false);
                }
            }
            if verdict.kind.is_bug() {
                handle_bug_verdict(
                    env,
                    &verdict,
                    &executed_context,
                    &source,
                    &predicate.text,
                    seed,
                    &mut stats,
                );
                if matches!(verdict.kind, VerdictKind::Crash | VerdictKind::Hang) {
                    let _ = conn.restart();
                    continue 'phase;
                }
            }
        }
    }

    let demoted = if env.cfg.validate_fragments {
        env.store.write(|s| {
            runtime_prune(s, env.cfg.prune_threshold, env.cfg.min_trials).len() as u64
        })
    } else {
        0
    };
    stats.demoted = demoted;
    env.store.persist();
    stats
}

// ---------------------------------------------------------------------------
// the outer loop
// ---------------------------------------------------------------------------

fn merge(total: &Mutex<CampaignReport>, stats: &PhaseStats) {
    let mut t = total.lock().unwrap();
    t.statements_executed += stats.statements_executed;
    t.statements_ok += stats.statements_ok;
    t.oracle_checks += stats.oracle_checks;
    t.logic_bugs += stats.logic_bugs;
    t.crashes += stats.crashes;
    t.hangs += stats.hangs;
    t.fragments_demoted += stats.demoted;
}

/// Runs the full campaign: repeated learning (at most one worker at a time)
/// and testing phases until the stop condition, with liveness supervision.
pub fn run_campaign(
    cfg: &CampaignConfig,
    connector_cfg: &ConnectorConfig,
    ctx: &SynthesisContext,
    store: &SharedStore,
) -> Result<CampaignReport, ConnectorError> {
    let factory = ConnectionFactory::new(connector_cfg)?;
    let registry = GeneratorRegistry::standard();
    let budget = Budget::new(cfg);
    let sink = Mutex::new(BugSink::new(cfg.out_dir.clone()));
    let total = Mutex::new(CampaignReport::default());
    let learning_lock = Mutex::new(());
    let engine_version = factory.connect(0)?.engine_version();

    if cfg.learning_enabled {
        initialize_features(ctx, store).ok();
    }

    std::thread::scope(|scope| {
        for worker in 0..cfg.threads.max(1) {
            let factory = &factory;
            let registry = &registry;
            let budget = &budget;
            let sink = &sink;
            let total = &total;
            let learning_lock = &learning_lock;
            let engine_version = engine_version.clone();
            scope.spawn(move || {
                let mut rng = GenRng::seed_from_u64(cfg.gen.seed.wrapping_add(worker as u64));
                let Ok(mut conn) = factory.connect(worker) else { return };
                let mut transcript = Transcript::open(&cfg.out_dir, worker);
                let env = WorkerEnv {
                    cfg,
                    store,
                    factory,
                    registry,
                    budget,
                    sink,
                    engine_version: engine_version.clone(),
                };
                while !budget.exhausted() {
                    let mut boosted = None;
                    if cfg.learning_enabled {
                        if let Ok(_guard) = learning_lock.try_lock() {
                            if all_learned(store) {
                                if cfg.stop_when_pool_learned {
                                    budget.stop();
                                    break;
                                }
                                // Every feature is learned: start a fresh
                                // pool pass, keeping fragments.
                                initialize_features(ctx, store).ok();
                                store.write(|s| s.reset_feature_statuses());
                            }
                            if let Some(feature) = pick_unlearned(store, &mut rng) {
                                let learn_env = LearnEnv {
                                    ctx,
                                    store,
                                    registry,
                                    sink,
                                    engine_version: engine_version.clone(),
                                    seed: cfg.gen.seed,
                                    validate: cfg.validate_fragments,
                                };
                                match learn_feature(&learn_env, &feature, conn.as_mut(), &mut rng)
                                {
                                    Ok(n) => {
                                        let mut t = total.lock().unwrap();
                                        t.fragments_learned += n as u64;
                                        t.features_learned += 1;
                                        boosted = Some(feature.id);
                                    }
                                    Err(_) => {
                                        // Backend unavailable: learning for
                                        // this feature is skipped, testing
                                        // continues.
                                    }
                                }
                            }
                        }
                    }
                    let stats = testing_phase(&env, boosted, &mut conn, &mut rng, &mut transcript);
                    merge(total, &stats);
                    if stats.statements_executed == 0 && stats.oracle_checks == 0 {
                        break;
                    }
                }
                transcript.flush();
            });
        }

        // Supervisor: watch liveness and restart a dead engine.
        let factory = &factory;
        let budget = &budget;
        scope.spawn(move || {
            let Ok(mut probe_conn) = factory.connect(u32::MAX) else { return };
            while !budget.exhausted() {
                std::thread::sleep(Duration::from_millis(200));
                if probe_conn.probe_alive() == crate::connector::Liveness::Dead {
                    let _ = probe_conn.restart();
                }
            }
        });
    });

    store.persist();
    let mut report = total.into_inner().unwrap();
    report.bug_files = {
        let s = sink.lock().unwrap();
        s.files.clone()
    };
    if let Some(dir) = &cfg.out_dir {
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join("summary.txt"), report.render());
    }
    Ok(report)
}
