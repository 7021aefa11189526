//! Turns rendered sketches into candidate fragments through a pluggable
//! completion backend (live HTTP endpoint, deterministic replay fixtures, or
//! null), with documentation summarization, prompt assembly, structured CSV
//! response parsing, and identifier abstraction.

pub mod docs;
pub mod prompt;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime};

use rand::seq::SliceRandom;

use crate::error::BackendError;
use crate::generator::{GenRng, GeneratorRegistry};
use crate::model::{Feature, FeatureLevel, FragmentStore, HoleKind, Sketch};

pub use docs::{summarize_docs, DocEntry, DocSummary};
pub use prompt::{abstract_identifiers, build_prompt, parse_response, render_csv_row};

// ---------------------------------------------------------------------------
// network guard (offline-purity verification hook)
// ---------------------------------------------------------------------------

static NETWORK_DENIED: AtomicBool = AtomicBool::new(false);
static NETWORK_ATTEMPTS: AtomicU64 = AtomicU64::new(0);

/// All live HTTP traffic flows through the live backend, which consults this
/// guard. Tests flip it to prove offline modes never touch the network.
pub fn deny_network(deny: bool) {
    NETWORK_DENIED.store(deny, Ordering::SeqCst);
}

pub fn network_attempts() -> u64 {
    NETWORK_ATTEMPTS.load(Ordering::SeqCst)
}

pub fn reset_network_attempts() {
    NETWORK_ATTEMPTS.store(0, Ordering::SeqCst);
}

// ---------------------------------------------------------------------------
// prompt digests and transcripts
// ---------------------------------------------------------------------------

/// FNV-1a over the whitespace-normalized prompt, as a 16-hex-digit string.
pub fn prompt_digest(prompt: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for token in prompt.split_whitespace() {
        for b in token.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= b' ' as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Line-delimited log of every backend exchange; replay fixtures can be cut
/// straight from it.
#[derive(Clone, Default)]
pub struct Transcript {
    sink: Arc<Mutex<Option<std::fs::File>>>,
}

impl Transcript {
    pub fn disabled() -> Self {
        Transcript::default()
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Transcript { sink: Arc::new(Mutex::new(Some(file))) })
    }

    pub fn log(&self, digest: &str, prompt: &str, response: &str) {
        let mut guard = self.sink.lock().unwrap();
        if let Some(f) = guard.as_mut() {
            let ts = SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let rec = serde_json::json!({
                "digest": digest,
                "prompt": prompt,
                "response": response,
                "timestamp": ts,
            });
            let _ = writeln!(f, "{rec}");
        }
    }
}

// ---------------------------------------------------------------------------
// completion backend
// ---------------------------------------------------------------------------

/// What a completion is being asked for; replay fixtures may be named after
/// it instead of the full prompt digest.
#[derive(Debug, Clone)]
pub enum RequestKind {
    FragmentSynthesis { level: FeatureLevel, feature: String },
    FeatureList { level: FeatureLevel },
    DocSummary { level: FeatureLevel, feature: String },
}

pub fn slugify(s: &str) -> String {
    let mut out = String::new();
    let mut last_us = true;
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            last_us = false;
        } else if !last_us {
            out.push('_');
            last_us = true;
        }
    }
    out.trim_end_matches('_').to_string()
}

impl RequestKind {
    /// Human-authorable fixture filename, tried after the digest filename.
    pub fn fallback_file(&self) -> String {
        match self {
            RequestKind::FragmentSynthesis { level, feature } => {
                format!("sketch_{}_{}.txt", level.slug(), slugify(feature))
            }
            RequestKind::FeatureList { level } => format!("features_{}.txt", level.slug()),
            RequestKind::DocSummary { level, feature } => {
                format!("summary_{}_{}.txt", level.slug(), slugify(feature))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub kind: RequestKind,
    pub prompt: String,
}

struct TokenBucket {
    tokens: f64,
    last: Instant,
    rate_per_sec: f64,
    burst: f64,
}

impl TokenBucket {
    fn new(rate_per_sec: f64, burst: f64) -> Self {
        TokenBucket { tokens: burst, last: Instant::now(), rate_per_sec, burst }
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let dt = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + dt * self.rate_per_sec).min(self.burst);
    }
}

pub struct LiveBackend {
    endpoint: String,
    model: String,
    api_key: String,
    bucket: Mutex<TokenBucket>,
}

impl LiveBackend {
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var("LLM_ENDPOINT")
            .map_err(|_| BackendError::Unavailable("LLM_ENDPOINT not set".into()))?;
        let model = std::env::var("LLM_MODEL").unwrap_or_else(|_| "gpt-4o".into());
        let api_key = std::env::var("LLM_API_KEY").unwrap_or_default();
        Ok(LiveBackend {
            endpoint,
            model,
            api_key,
            bucket: Mutex::new(TokenBucket::new(1.0, 4.0)),
        })
    }

    fn wait_for_token(&self) {
        loop {
            {
                let mut b = self.bucket.lock().unwrap();
                b.refill();
                if b.tokens >= 1.0 {
                    b.tokens -= 1.0;
                    return;
                }
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.wait_for_token();
        NETWORK_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
        if NETWORK_DENIED.load(Ordering::SeqCst) {
            return Err(BackendError::Unavailable(
                "network access denied by test harness".into(),
            ));
        }
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = ureq::post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_string(&body.to_string())
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let parsed: serde_json::Value = resp
            .into_json()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Unavailable("malformed completion response".into()))
    }
}

pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayBackend { dir: dir.into() }
    }

    /// Digest-named file first, then the request-kind fallback name.
    fn lookup(&self, req: &CompletionRequest) -> Option<String> {
        let digest = prompt_digest(&req.prompt);
        for name in [format!("{digest}.txt"), req.kind.fallback_file()] {
            let path = self.dir.join(name);
            if let Ok(text) = std::fs::read_to_string(&path) {
                return Some(text);
            }
        }
        None
    }
}

/// Pluggable completion source. `Null` answers nothing: the campaign then
/// behaves exactly like a base-features-only fuzzer.
pub enum CompletionBackend {
    Live(LiveBackend),
    Replay(ReplayBackend),
    Null,
}

impl CompletionBackend {
    /// Parses `live`, `replay:<dir>`, or `null`.
    pub fn parse(spec: &str) -> Result<Self, BackendError> {
        if spec == "live" {
            return Ok(CompletionBackend::Live(LiveBackend::from_env()?));
        }
        if let Some(dir) = spec.strip_prefix("replay:") {
            return Ok(CompletionBackend::Replay(ReplayBackend::new(dir)));
        }
        if spec == "null" {
            return Ok(CompletionBackend::Null);
        }
        Err(BackendError::Unavailable(format!(
            "unknown backend '{spec}' (expected live, replay:<dir>, or null)"
        )))
    }

    /// `Ok(None)` means the backend has no answer for this request, which is
    /// not an error: learning proceeds with zero candidates.
    pub fn complete(
        &self,
        req: &CompletionRequest,
        transcript: &Transcript,
    ) -> Result<Option<String>, BackendError> {
        let response = match self {
            CompletionBackend::Null => None,
            CompletionBackend::Replay(r) => r.lookup(req),
            CompletionBackend::Live(l) => Some(l.complete(&req.prompt)?),
        };
        transcript.log(
            &prompt_digest(&req.prompt),
            &req.prompt,
            response.as_deref().unwrap_or(""),
        );
        Ok(response)
    }

    pub fn is_null(&self) -> bool {
        matches!(self, CompletionBackend::Null)
    }
}

// ---------------------------------------------------------------------------
// fragment synthesis
// ---------------------------------------------------------------------------

/// Identifier tokens that signal nondeterministic output; candidates
/// containing one are discarded before validation.
const NONDETERMINISM_BLACKLIST: [&str; 5] =
    ["RANDOM", "RAND", "CURRENT_TIMESTAMP", "NOW", "UUID"];

fn strip_generator_keywords(text: &str, registry: &GeneratorRegistry) -> String {
    let mut out = text.to_string();
    for g in registry.list() {
        out = out.replace(&format!("<{}>", g.keyword), " ");
    }
    out
}

/// True when the candidate trips the nondeterminism screen.
pub fn is_blacklisted(text: &str, registry: &GeneratorRegistry) -> bool {
    let cleaned = strip_generator_keywords(text, registry);
    cleaned
        .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
        .any(|w| NONDETERMINISM_BLACKLIST.contains(&w.to_uppercase().as_str()))
}

/// True when the text contains a `<NAME>` keyword that is not registered.
fn has_unregistered_keyword(text: &str, registry: &GeneratorRegistry) -> bool {
    let b = text.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'<' && i + 1 < b.len() {
            let start = i + 1;
            let mut end = start;
            while end < b.len()
                && ((b[end] as char).is_ascii_uppercase()
                    || (b[end] as char).is_ascii_digit()
                    || b[end] == b'_')
            {
                end += 1;
            }
            if end > start && end < b.len() && b[end] == b'>' {
                if registry.get(&text[start..end]).is_none() {
                    return true;
                }
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    false
}

/// A screened candidate completion for one hole, not yet validated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateFragment {
    pub hole_index: usize,
    pub kind: HoleKind,
    pub text: String,
}

/// Shared synthesis state: one backend, one exchange log, one documentation
/// summary cache per feature.
pub struct SynthesisContext {
    pub backend: CompletionBackend,
    pub dbms: String,
    pub docs_dir: Option<PathBuf>,
    pub transcript: Transcript,
    summary_cache: Mutex<HashMap<u64, DocSummary>>,
}

impl SynthesisContext {
    pub fn new(backend: CompletionBackend, dbms: impl Into<String>) -> Self {
        SynthesisContext {
            backend,
            dbms: dbms.into(),
            docs_dir: None,
            transcript: Transcript::disabled(),
            summary_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_docs(mut self, dir: Option<PathBuf>) -> Self {
        self.docs_dir = dir;
        self
    }

    pub fn with_transcript(mut self, t: Transcript) -> Self {
        self.transcript = t;
        self
    }

    pub fn summary_for(&self, feature: &Feature) -> Result<DocSummary, BackendError> {
        if let Some(s) = self.summary_cache.lock().unwrap().get(&feature.id) {
            return Ok(s.clone());
        }
        let summary = summarize_docs(
            self.docs_dir.as_deref(),
            &self.dbms,
            feature,
            &self.backend,
            &self.transcript,
        )?;
        self.summary_cache.lock().unwrap().insert(feature.id, summary.clone());
        Ok(summary)
    }
}

/// Up to five few-shot examples sampled uniformly from Valid fragments whose
/// hole kinds occur in the sketch.
fn few_shot_examples(
    sketch: &Sketch,
    store: &FragmentStore,
    rng: &mut GenRng,
) -> Vec<(usize, String)> {
    let mut pool: Vec<(usize, String)> = Vec::new();
    for (idx, kind) in &sketch.holes {
        for f in store.lookup(*kind, true) {
            pool.push((*idx, f.text.clone()));
        }
    }
    pool.shuffle(rng);
    pool.truncate(5);
    pool
}

const MAX_CANDIDATES_PER_CALL: usize = 64;

/// Full synthesis pipeline for one sketch: summarize docs (cached), build the
/// prompt, call the backend, parse the CSV response, abstract identifiers,
/// and screen candidates. The store is only consulted for dedup; nothing is
/// inserted here.
pub fn synthesize_fragments(
    ctx: &SynthesisContext,
    feature: &Feature,
    sketch: &Sketch,
    store: &FragmentStore,
    registry: &GeneratorRegistry,
    rng: &mut GenRng,
) -> Result<Vec<CandidateFragment>, BackendError> {
    let summary = ctx.summary_for(feature)?;
    let examples = few_shot_examples(sketch, store, rng);
    let prompt = build_prompt(sketch, &ctx.dbms, &summary, &examples, registry);
    // Fixture names follow the sketch's level: a data-type feature's
    // follow-up expression sketch answers to sketch_expression_<name>.
    let sketch_level = sketch
        .holes
        .first()
        .map(|(_, k)| k.level())
        .unwrap_or(feature.level);
    let request = CompletionRequest {
        kind: RequestKind::FragmentSynthesis {
            level: sketch_level,
            feature: feature.name.clone(),
        },
        prompt,
    };
    let response = match ctx.backend.complete(&request, &ctx.transcript)? {
        Some(r) => r,
        None => return Ok(Vec::new()),
    };

    let rows = parse_response(&response, sketch.holes.len());
    let mut out: Vec<CandidateFragment> = Vec::new();
    for (idx, raw) in rows {
        let text = abstract_identifiers(&raw, &sketch.schema);
        let text = crate::model::normalize_fragment_text(&text);
        if text.is_empty() {
            continue;
        }
        if is_blacklisted(&text, registry) || has_unregistered_keyword(&text, registry) {
            continue;
        }
        let kind = sketch.holes[idx].1;
        if store.contains(kind, &text) {
            continue;
        }
        let candidate = CandidateFragment { hole_index: idx, kind, text };
        if out.contains(&candidate) {
            continue;
        }
        out.push(candidate);
        if out.len() >= MAX_CANDIDATES_PER_CALL {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureStatus, FragmentOrigin, Validity};
    use crate::sketcher::{make_expression_sketch, SketchRequest};
    use rand::SeedableRng;

    fn feature(level: FeatureLevel, name: &str) -> Feature {
        Feature {
            id: 1,
            name: name.into(),
            level,
            status: FeatureStatus::Unlearned,
            stats: Default::default(),
        }
    }

    fn expr_sketch(seed: u64) -> Sketch {
        let req = SketchRequest { feature_id: 1, level: FeatureLevel::Expression };
        make_expression_sketch(&req, &mut GenRng::seed_from_u64(seed))
    }

    #[test]
    fn digest_is_whitespace_insensitive() {
        let a = prompt_digest("SELECT   COL {0} 1\nFROM TAB");
        let b = prompt_digest("SELECT COL {0} 1 FROM TAB");
        assert_eq!(a, b);
        assert_ne!(a, prompt_digest("SELECT COL {0} 2 FROM TAB"));
    }

    #[test]
    fn replay_fixture_by_fallback_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("sketch_expression_comparison.txt"), "0,<=>\n0,IS DISTINCT FROM\n")
            .unwrap();
        let backend = CompletionBackend::Replay(ReplayBackend::new(dir.path()));
        let req = CompletionRequest {
            kind: RequestKind::FragmentSynthesis {
                level: FeatureLevel::Expression,
                feature: "comparison".into(),
            },
            prompt: "anything".into(),
        };
        let resp = backend.complete(&req, &Transcript::disabled()).unwrap();
        assert_eq!(resp.unwrap(), "0,<=>\n0,IS DISTINCT FROM\n");
    }

    #[test]
    fn replay_fixture_by_digest_wins() {
        let dir = tempfile::tempdir().unwrap();
        let digest = prompt_digest("the prompt");
        std::fs::write(dir.path().join(format!("{digest}.txt")), "0,A\n").unwrap();
        std::fs::write(dir.path().join("features_statement.txt"), "0,B\n").unwrap();
        let backend = CompletionBackend::Replay(ReplayBackend::new(dir.path()));
        let req = CompletionRequest {
            kind: RequestKind::FeatureList { level: FeatureLevel::Statement },
            prompt: "the prompt".into(),
        };
        assert_eq!(
            backend.complete(&req, &Transcript::disabled()).unwrap().unwrap(),
            "0,A\n"
        );
    }

    #[test]
    fn null_backend_yields_no_candidates() {
        let ctx = SynthesisContext::new(CompletionBackend::Null, "sqlite");
        let f = feature(FeatureLevel::Expression, "comparison");
        let sketch = expr_sketch(1);
        let store = FragmentStore::new();
        let registry = GeneratorRegistry::standard();
        let out = synthesize_fragments(
            &ctx,
            &f,
            &sketch,
            &store,
            &registry,
            &mut GenRng::seed_from_u64(0),
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn replay_synthesis_produces_screened_candidates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("sketch_expression_comparison.txt"),
            "0,<=>\n0,IS DISTINCT FROM\n0,CURRENT_TIMESTAMP()\n0,NOW()\nbanana\n",
        )
        .unwrap();
        let ctx = SynthesisContext::new(
            CompletionBackend::Replay(ReplayBackend::new(dir.path())),
            "sqlite",
        );
        let f = feature(FeatureLevel::Expression, "comparison");
        let sketch = expr_sketch(1);
        let store = FragmentStore::new();
        let registry = GeneratorRegistry::standard();
        let out = synthesize_fragments(
            &ctx,
            &f,
            &sketch,
            &store,
            &registry,
            &mut GenRng::seed_from_u64(0),
        )
        .unwrap();
        let texts: Vec<&str> = out.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["<=>", "IS DISTINCT FROM"]);
    }

    #[test]
    fn synthesis_skips_fragments_already_stored() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("sketch_expression_comparison.txt"), "0,<=>\n0,@@\n")
            .unwrap();
        let ctx = SynthesisContext::new(
            CompletionBackend::Replay(ReplayBackend::new(dir.path())),
            "sqlite",
        );
        let f = feature(FeatureLevel::Expression, "comparison");
        let mut sketch = expr_sketch(1);
        // Force the binary-operator shape for a stable hole kind.
        sketch.holes = vec![(0, HoleKind::BinaryOperator)];
        sketch.holed_statements = vec!["SELECT COL {0} 1 FROM TAB;".into()];
        let mut store = FragmentStore::new();
        let fid = store.add_feature(FeatureLevel::Expression, "comparison");
        store.add_fragment(fid, HoleKind::BinaryOperator, "<=>", Validity::Valid, FragmentOrigin::Synthesized);
        let registry = GeneratorRegistry::standard();
        let out = synthesize_fragments(
            &ctx,
            &f,
            &sketch,
            &store,
            &registry,
            &mut GenRng::seed_from_u64(0),
        )
        .unwrap();
        let texts: Vec<&str> = out.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["@@"]);
    }

    #[test]
    fn blacklist_spares_generator_keywords() {
        let registry = GeneratorRegistry::standard();
        assert!(!is_blacklisted("CHECK (COL > <RANDOM_INT>)", &registry));
        assert!(is_blacklisted("RANDOM()", &registry));
        assert!(is_blacklisted("now()", &registry));
        assert!(is_blacklisted("CURRENT_TIMESTAMP", &registry));
        assert!(!is_blacklisted("NOT NULL", &registry));
    }

    #[test]
    fn unregistered_keyword_candidates_dropped() {
        let registry = GeneratorRegistry::standard();
        assert!(has_unregistered_keyword("<RANDOM_FLOAT>", &registry));
        assert!(!has_unregistered_keyword("<RANDOM_INT>", &registry));
        assert!(!has_unregistered_keyword("COL <=> 1", &registry));
    }

    #[test]
    fn network_guard_blocks_live_calls() {
        reset_network_attempts();
        deny_network(true);
        let backend = LiveBackend {
            endpoint: "http://127.0.0.1:1/never".into(),
            model: "m".into(),
            api_key: String::new(),
            bucket: Mutex::new(TokenBucket::new(1000.0, 1000.0)),
        };
        let err = backend.complete("x").unwrap_err();
        assert!(matches!(err, BackendError::Unavailable(_)));
        assert_eq!(network_attempts(), 1);
        deny_network(false);
        reset_network_attempts();
    }
}
