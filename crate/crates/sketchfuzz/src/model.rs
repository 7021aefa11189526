//! Shared data model: features, fragments, sketches, the schema view, and the
//! persistent fragment store every other module works against.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::StoreError;

/// Granularity at which a dialect capability is learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureLevel {
    Statement,
    Clause,
    Expression,
    DataType,
}

impl FeatureLevel {
    pub const ALL: [FeatureLevel; 4] = [
        FeatureLevel::Statement,
        FeatureLevel::Clause,
        FeatureLevel::Expression,
        FeatureLevel::DataType,
    ];

    /// Human phrase used in prompts ("Data type", "Statement", ...).
    pub fn phrase(self) -> &'static str {
        match self {
            FeatureLevel::Statement => "Statement",
            FeatureLevel::Clause => "Clause",
            FeatureLevel::Expression => "Expression",
            FeatureLevel::DataType => "Data type",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            FeatureLevel::Statement => "statement",
            FeatureLevel::Clause => "clause",
            FeatureLevel::Expression => "expression",
            FeatureLevel::DataType => "datatype",
        }
    }
}

impl fmt::Display for FeatureLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

/// Learning lifecycle of a feature within one campaign pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureStatus {
    Unlearned,
    Learning,
    Learned,
}

pub type FeatureId = u64;
pub type FragmentId = u64;

/// Success/failure counters for executions involving a feature or fragment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportStats {
    pub successes: u64,
    pub failures: u64,
}

impl SupportStats {
    pub fn record(&mut self, success: bool) {
        if success {
            self.successes += 1;
        } else {
            self.failures += 1;
        }
    }

    pub fn trials(&self) -> u64 {
        self.successes + self.failures
    }
}

/// A named DBMS capability at one of the four levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub id: FeatureId,
    pub name: String,
    pub level: FeatureLevel,
    pub status: FeatureStatus,
    pub stats: SupportStats,
}

/// Position class of a hole in a sketch. Each kind belongs to exactly one
/// feature level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HoleKind {
    WholeStatement,
    TableOption,
    ColumnConstraint,
    TableConstraint,
    StatementSuffix,
    BinaryOperator,
    FunctionName,
    UnaryPrefix,
    LeafExpression,
    DataTypeName,
    TypedLiteral,
}

impl HoleKind {
    /// StatementSuffix sits at clause level: it is the trailing hole of the
    /// clause sketch (table options such as `WITH (...)` land there).
    pub fn level(self) -> FeatureLevel {
        match self {
            HoleKind::WholeStatement => FeatureLevel::Statement,
            HoleKind::TableOption
            | HoleKind::ColumnConstraint
            | HoleKind::TableConstraint
            | HoleKind::StatementSuffix => FeatureLevel::Clause,
            HoleKind::BinaryOperator
            | HoleKind::FunctionName
            | HoleKind::UnaryPrefix
            | HoleKind::LeafExpression => FeatureLevel::Expression,
            HoleKind::DataTypeName | HoleKind::TypedLiteral => FeatureLevel::DataType,
        }
    }
}

/// Validation state of a fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Validity {
    Candidate,
    Valid,
    Invalid,
    Demoted,
}

/// Where a fragment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FragmentOrigin {
    BuiltIn,
    Synthesized,
}

/// A completion text for one hole kind, bound to the feature it exercises.
/// The text may contain literal-generator keywords (`<RANDOM_INT>`, ...) and
/// the abstract identifiers `TAB`/`COL`/`COL2`...
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub id: FragmentId,
    pub feature_id: FeatureId,
    pub hole: HoleKind,
    pub text: String,
    pub validity: Validity,
    pub stats: SupportStats,
    pub origin: FragmentOrigin,
}

/// One table or view as the generator sees it. The `type_tag` is either a
/// built-in tag (INT, VARCHAR, BOOLEAN) or `LEARNED(<name>)` for a column
/// whose type was synthesized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<(String, String)>,
    pub is_view: bool,
}

impl TableDef {
    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }
}

/// Ground truth of the current database objects; every generated statement
/// references only identifiers found here.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaModel {
    pub tables: Vec<TableDef>,
    pub views: Vec<TableDef>,
}

impl SchemaModel {
    pub fn is_empty(&self) -> bool {
        self.tables.is_empty() && self.views.is_empty()
    }

    /// Base tables plus views, in creation order.
    pub fn relations(&self) -> impl Iterator<Item = &TableDef> {
        self.tables.iter().chain(self.views.iter())
    }

    pub fn find(&self, name: &str) -> Option<&TableDef> {
        self.relations().find(|t| t.name == name)
    }
}

/// Tag prefix for columns of a learned type.
pub fn learned_type_tag(feature_name: &str) -> String {
    format!("LEARNED({feature_name})")
}

/// Reverse of [`learned_type_tag`].
pub fn parse_learned_tag(tag: &str) -> Option<&str> {
    tag.strip_prefix("LEARNED(")?.strip_suffix(')')
}

/// A sketch: complete context statements plus statements containing numbered
/// `{k}` placeholders, with the ordered hole list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sketch {
    pub context_statements: Vec<String>,
    pub holed_statements: Vec<String>,
    pub holes: Vec<(usize, HoleKind)>,
    pub feature_id: FeatureId,
    pub schema: SchemaModel,
}

impl Sketch {
    /// Checks the placeholder bijection: indices used in holed statements are
    /// exactly 0..holes.len(), each exactly once, and context statements are
    /// placeholder-free.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut counts = vec![0usize; self.holes.len()];
        for stmt in &self.holed_statements {
            for idx in placeholder_indices(stmt) {
                match counts.get_mut(idx) {
                    Some(c) => *c += 1,
                    None => return Err(format!("placeholder {{{idx}}} out of range")),
                }
            }
        }
        for (i, c) in counts.iter().enumerate() {
            if *c != 1 {
                return Err(format!("placeholder {{{i}}} appears {c} times"));
            }
        }
        for stmt in &self.context_statements {
            if placeholder_indices(stmt).next().is_some() {
                return Err(format!("context statement contains a placeholder: {stmt}"));
            }
        }
        for (i, (idx, _)) in self.holes.iter().enumerate() {
            if *idx != i {
                return Err("hole list indices are not 0..n in order".into());
            }
        }
        Ok(())
    }
}

/// Iterates the `{k}` placeholder indices appearing in a statement.
pub fn placeholder_indices(stmt: &str) -> impl Iterator<Item = usize> + '_ {
    let bytes = stmt.as_bytes();
    let mut pos = 0;
    std::iter::from_fn(move || {
        while pos < bytes.len() {
            if bytes[pos] == b'{' {
                let start = pos + 1;
                let mut end = start;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
                if end > start && end < bytes.len() && bytes[end] == b'}' {
                    pos = end + 1;
                    return stmt[start..end].parse().ok();
                }
            }
            pos += 1;
        }
        None
    })
}

/// Collapses whitespace runs to single spaces and trims; the store's dedup
/// key is this normalized text, case preserved.
pub fn normalize_fragment_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Outcome of inserting a fragment into the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    Added(FragmentId),
    Duplicate(FragmentId),
    /// Statement fragments that create or drop database objects are screened
    /// out: the schema model cannot track the objects they would touch.
    Rejected,
}

const DDL_SCREEN: [&str; 4] = ["CREATE", "DROP", "ALTER", "RENAME"];

/// In-memory fragment/feature store with dedup by (hole, normalized text)
/// and insertion-order lookups. Persisted as line-delimited JSON records.
#[derive(Debug, Default)]
pub struct FragmentStore {
    features: Vec<Feature>,
    fragments: Vec<Fragment>,
    feature_index: HashMap<(FeatureLevel, String), usize>,
    fragment_index: HashMap<(HoleKind, String), usize>,
    next_feature_id: FeatureId,
    next_fragment_id: FragmentId,
}

impl FragmentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a feature, or returns the existing one with the same
    /// identity. Identity is (level, name) with names compared upper-cased.
    pub fn add_feature(&mut self, level: FeatureLevel, name: &str) -> FeatureId {
        let name = name.trim();
        assert!(!name.is_empty(), "feature name must be non-empty");
        let key = (level, name.to_uppercase());
        if let Some(&i) = self.feature_index.get(&key) {
            return self.features[i].id;
        }
        self.next_feature_id += 1;
        let id = self.next_feature_id;
        self.features.push(Feature {
            id,
            name: name.to_string(),
            level,
            status: FeatureStatus::Unlearned,
            stats: SupportStats::default(),
        });
        self.feature_index.insert(key, self.features.len() - 1);
        id
    }

    pub fn feature(&self, id: FeatureId) -> Option<&Feature> {
        self.features.iter().find(|f| f.id == id)
    }

    pub fn feature_by_name(&self, level: FeatureLevel, name: &str) -> Option<&Feature> {
        let key = (level, name.trim().to_uppercase());
        self.feature_index.get(&key).map(|&i| &self.features[i])
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn set_feature_status(&mut self, id: FeatureId, status: FeatureStatus) {
        if let Some(f) = self.features.iter_mut().find(|f| f.id == id) {
            f.status = status;
        }
    }

    /// Resets every feature to Unlearned for a fresh pool pass. Fragments and
    /// statistics are kept.
    pub fn reset_feature_statuses(&mut self) {
        for f in &mut self.features {
            f.status = FeatureStatus::Unlearned;
        }
    }

    /// Inserts a fragment unless an equal one (same hole, same normalized
    /// text) exists. Whole-statement fragments starting with a DDL keyword
    /// are rejected.
    pub fn add_fragment(
        &mut self,
        feature_id: FeatureId,
        hole: HoleKind,
        text: &str,
        validity: Validity,
        origin: FragmentOrigin,
    ) -> AddOutcome {
        let normalized = normalize_fragment_text(text);
        assert!(!normalized.is_empty(), "fragment text must be non-empty");
        if hole == HoleKind::WholeStatement {
            let first = normalized
                .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
                .next()
                .unwrap_or("")
                .to_uppercase();
            if DDL_SCREEN.contains(&first.as_str()) {
                return AddOutcome::Rejected;
            }
        }
        let key = (hole, normalized.clone());
        if let Some(&i) = self.fragment_index.get(&key) {
            return AddOutcome::Duplicate(self.fragments[i].id);
        }
        self.next_fragment_id += 1;
        let id = self.next_fragment_id;
        self.fragments.push(Fragment {
            id,
            feature_id,
            hole,
            text: normalized,
            validity,
            stats: SupportStats::default(),
            origin,
        });
        self.fragment_index.insert(key, self.fragments.len() - 1);
        AddOutcome::Added(id)
    }

    pub fn fragment(&self, id: FragmentId) -> Option<&Fragment> {
        self.fragments.iter().find(|f| f.id == id)
    }

    pub fn fragments(&self) -> &[Fragment] {
        &self.fragments
    }

    /// Fragment already known for this (hole, text) key?
    pub fn contains(&self, hole: HoleKind, text: &str) -> bool {
        self.fragment_index
            .contains_key(&(hole, normalize_fragment_text(text)))
    }

    /// All fragments with the given hole kind in insertion order; with
    /// `only_valid`, restricted to Valid ones (Demoted excluded).
    pub fn lookup(&self, kind: HoleKind, only_valid: bool) -> Vec<&Fragment> {
        self.fragments
            .iter()
            .filter(|f| f.hole == kind)
            .filter(|f| !only_valid || f.validity == Validity::Valid)
            .collect()
    }

    /// Like [`lookup`](Self::lookup) but additionally bound to one feature.
    pub fn lookup_feature(
        &self,
        feature_id: FeatureId,
        kind: HoleKind,
        only_valid: bool,
    ) -> Vec<&Fragment> {
        self.lookup(kind, only_valid)
            .into_iter()
            .filter(|f| f.feature_id == feature_id)
            .collect()
    }

    pub fn set_validity(&mut self, id: FragmentId, validity: Validity) {
        if let Some(f) = self.fragments.iter_mut().find(|f| f.id == id) {
            f.validity = validity;
        }
    }

    /// Records one execution for the fragment and its owning feature.
    pub fn record_execution(&mut self, id: FragmentId, success: bool) {
        let mut feature_id = None;
        if let Some(f) = self.fragments.iter_mut().find(|f| f.id == id) {
            f.stats.record(success);
            feature_id = Some(f.feature_id);
        }
        if let Some(fid) = feature_id {
            if let Some(feat) = self.features.iter_mut().find(|f| f.id == fid) {
                feat.stats.record(success);
            }
        }
    }

    /// Writes the full store as one record per line.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        for f in &self.features {
            let rec = Record::from_feature(f);
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        for f in &self.fragments {
            let rec = self.record_from_fragment(f);
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn record_from_fragment(&self, f: &Fragment) -> Record {
        let feat = self.feature(f.feature_id);
        Record {
            kind: RecordKind::Fragment,
            id: f.id,
            level: feat.map(|x| x.level),
            name: feat.map(|x| x.name.clone()),
            status: None,
            hole: Some(f.hole),
            text: Some(f.text.clone()),
            validity: Some(f.validity),
            successes: f.stats.successes,
            failures: f.stats.failures,
            origin: Some(f.origin),
        }
    }

    /// Loads a store by replaying records in order; a later record for the
    /// same (kind, id) overrides the earlier one. Unparseable lines error.
    pub fn load<R: BufRead>(r: R) -> Result<Self, StoreError> {
        let mut store = FragmentStore::new();
        let mut feature_recs: Vec<Record> = Vec::new();
        let mut fragment_recs: Vec<Record> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| StoreError::BadRecord(lineno + 1, e.to_string()))?;
            match rec.kind {
                RecordKind::Feature => upsert(&mut feature_recs, rec),
                RecordKind::Fragment => upsert(&mut fragment_recs, rec),
            }
        }
        for rec in feature_recs {
            let (level, name) = match (rec.level, rec.name.as_deref()) {
                (Some(l), Some(n)) if !n.trim().is_empty() => (l, n),
                _ => return Err(StoreError::BadRecord(0, "feature missing level/name".into())),
            };
            let id = store.add_feature(level, name);
            if let Some(f) = store.features.iter_mut().find(|f| f.id == id) {
                f.status = rec.status.unwrap_or(FeatureStatus::Unlearned);
                f.stats = SupportStats {
                    successes: rec.successes,
                    failures: rec.failures,
                };
            }
        }
        for rec in fragment_recs {
            let (level, name) = match (rec.level, rec.name.as_deref()) {
                (Some(l), Some(n)) if !n.trim().is_empty() => (l, n),
                _ => return Err(StoreError::BadRecord(0, "fragment missing feature".into())),
            };
            let (hole, text) = match (rec.hole, rec.text.as_deref()) {
                (Some(h), Some(t)) if !t.trim().is_empty() => (h, t),
                _ => return Err(StoreError::BadRecord(0, "fragment missing hole/text".into())),
            };
            let feature_id = store.add_feature(level, name);
            let outcome = store.add_fragment(
                feature_id,
                hole,
                text,
                rec.validity.unwrap_or(Validity::Candidate),
                rec.origin.unwrap_or(FragmentOrigin::Synthesized),
            );
            if let AddOutcome::Added(id) | AddOutcome::Duplicate(id) = outcome {
                if let Some(f) = store.fragments.iter_mut().find(|f| f.id == id) {
                    f.validity = rec.validity.unwrap_or(Validity::Candidate);
                    f.stats = SupportStats {
                        successes: rec.successes,
                        failures: rec.failures,
                    };
                }
            }
        }
        Ok(store)
    }
}

fn upsert(recs: &mut Vec<Record>, rec: Record) {
    if let Some(existing) = recs.iter_mut().find(|r| r.id == rec.id) {
        *existing = rec;
    } else {
        recs.push(rec);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Feature,
    Fragment,
}

/// One self-describing line of the persisted store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub kind: RecordKind,
    pub id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<FeatureLevel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<FeatureStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hole: Option<HoleKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<Validity>,
    #[serde(default)]
    pub successes: u64,
    #[serde(default)]
    pub failures: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<FragmentOrigin>,
}

impl Record {
    pub fn from_feature(f: &Feature) -> Record {
        Record {
            kind: RecordKind::Feature,
            id: f.id,
            level: Some(f.level),
            name: Some(f.name.clone()),
            status: Some(f.status),
            hole: None,
            text: None,
            validity: None,
            successes: f.stats.successes,
            failures: f.stats.failures,
            origin: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with_feature() -> (FragmentStore, FeatureId) {
        let mut s = FragmentStore::new();
        let id = s.add_feature(FeatureLevel::Expression, "comparison");
        (s, id)
    }

    #[test]
    fn add_fragment_to_empty_store() {
        let (mut s, fid) = store_with_feature();
        let out = s.add_fragment(
            fid,
            HoleKind::BinaryOperator,
            "<=>",
            Validity::Candidate,
            FragmentOrigin::Synthesized,
        );
        assert!(matches!(out, AddOutcome::Added(_)));
    }

    #[test]
    fn duplicate_fragment_detected() {
        let (mut s, fid) = store_with_feature();
        let a = s.add_fragment(
            fid,
            HoleKind::BinaryOperator,
            "<=>",
            Validity::Candidate,
            FragmentOrigin::Synthesized,
        );
        let b = s.add_fragment(
            fid,
            HoleKind::BinaryOperator,
            "<=>",
            Validity::Candidate,
            FragmentOrigin::Synthesized,
        );
        assert!(matches!(a, AddOutcome::Added(_)));
        assert!(matches!(b, AddOutcome::Duplicate(_)));
        assert_eq!(s.fragments().len(), 1);
    }

    #[test]
    fn whitespace_normalization_dedups() {
        let (mut s, fid) = store_with_feature();
        s.add_fragment(
            fid,
            HoleKind::BinaryOperator,
            "<=>",
            Validity::Candidate,
            FragmentOrigin::Synthesized,
        );
        let b = s.add_fragment(
            fid,
            HoleKind::BinaryOperator,
            "  <=> ",
            Validity::Candidate,
            FragmentOrigin::Synthesized,
        );
        assert!(matches!(b, AddOutcome::Duplicate(_)));
    }

    #[test]
    fn dedup_is_idempotent() {
        let (mut s, fid) = store_with_feature();
        for _ in 0..5 {
            s.add_fragment(
                fid,
                HoleKind::FunctionName,
                "CEIL",
                Validity::Valid,
                FragmentOrigin::Synthesized,
            );
        }
        assert_eq!(s.fragments().len(), 1);
    }

    #[test]
    fn lookup_filters_validity_and_kind() {
        let (mut s, fid) = store_with_feature();
        let a = s.add_fragment(
            fid,
            HoleKind::BinaryOperator,
            "<=>",
            Validity::Valid,
            FragmentOrigin::Synthesized,
        );
        s.add_fragment(
            fid,
            HoleKind::BinaryOperator,
            "@@",
            Validity::Invalid,
            FragmentOrigin::Synthesized,
        );
        let valid = s.lookup(HoleKind::BinaryOperator, true);
        assert_eq!(valid.len(), 1);
        assert_eq!(valid[0].text, "<=>");
        if let AddOutcome::Added(id) = a {
            assert_eq!(valid[0].id, id);
        }
        assert!(s.lookup(HoleKind::FunctionName, true).is_empty());
        assert_eq!(s.lookup(HoleKind::BinaryOperator, false).len(), 2);
    }

    #[test]
    fn demoted_excluded_from_valid_lookup() {
        let (mut s, fid) = store_with_feature();
        let out = s.add_fragment(
            fid,
            HoleKind::FunctionName,
            "CEIL",
            Validity::Valid,
            FragmentOrigin::Synthesized,
        );
        let id = match out {
            AddOutcome::Added(id) => id,
            _ => unreachable!(),
        };
        assert_eq!(s.lookup(HoleKind::FunctionName, true).len(), 1);
        s.set_validity(id, Validity::Demoted);
        assert!(s.lookup(HoleKind::FunctionName, true).is_empty());
    }

    #[test]
    fn ddl_statement_fragments_rejected() {
        let (mut s, fid) = store_with_feature();
        for text in ["CREATE TABLE x (y INT)", "DROP TABLE t0", "alter table t0", "RENAME t0"] {
            let out = s.add_fragment(
                fid,
                HoleKind::WholeStatement,
                text,
                Validity::Candidate,
                FragmentOrigin::Synthesized,
            );
            assert_eq!(out, AddOutcome::Rejected, "screen missed: {text}");
        }
        // DDL keywords are fine in other hole kinds.
        let ok = s.add_fragment(
            fid,
            HoleKind::WholeStatement,
            "ANALYZE",
            Validity::Candidate,
            FragmentOrigin::Synthesized,
        );
        assert!(matches!(ok, AddOutcome::Added(_)));
    }

    #[test]
    fn feature_identity_case_insensitive() {
        let mut s = FragmentStore::new();
        let a = s.add_feature(FeatureLevel::DataType, "array");
        let b = s.add_feature(FeatureLevel::DataType, "ARRAY");
        assert_eq!(a, b);
        let c = s.add_feature(FeatureLevel::Expression, "ARRAY");
        assert_ne!(a, c);
    }

    #[test]
    fn hole_kind_levels() {
        use FeatureLevel::*;
        use HoleKind::*;
        assert_eq!(WholeStatement.level(), Statement);
        for k in [TableOption, ColumnConstraint, TableConstraint, StatementSuffix] {
            assert_eq!(k.level(), Clause);
        }
        for k in [BinaryOperator, FunctionName, UnaryPrefix, LeafExpression] {
            assert_eq!(k.level(), Expression);
        }
        assert_eq!(DataTypeName.level(), DataType);
        assert_eq!(TypedLiteral.level(), DataType);
    }

    #[test]
    fn save_load_round_trip() {
        let (mut s, fid) = store_with_feature();
        let array = s.add_feature(FeatureLevel::DataType, "ARRAY");
        s.set_feature_status(array, FeatureStatus::Learned);
        s.add_fragment(fid, HoleKind::BinaryOperator, "<=>", Validity::Valid, FragmentOrigin::Synthesized);
        s.add_fragment(array, HoleKind::DataTypeName, "ARRAY", Validity::Invalid, FragmentOrigin::Synthesized);
        if let AddOutcome::Added(id) = s.add_fragment(
            fid,
            HoleKind::FunctionName,
            "CEIL",
            Validity::Valid,
            FragmentOrigin::Synthesized,
        ) {
            s.record_execution(id, true);
            s.record_execution(id, false);
        }
        let mut buf = Vec::new();
        s.save(&mut buf).unwrap();
        let loaded = FragmentStore::load(buf.as_slice()).unwrap();
        assert_eq!(loaded.features().len(), s.features().len());
        assert_eq!(loaded.fragments().len(), s.fragments().len());
        for (a, b) in s.fragments().iter().zip(loaded.fragments()) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.validity, b.validity);
            assert_eq!(a.stats, b.stats);
            assert_eq!(a.hole, b.hole);
        }
        for (a, b) in s.features().iter().zip(loaded.features()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.status, b.status);
        }
    }

    #[test]
    fn later_records_override_earlier() {
        let lines = r#"
{"kind":"feature","id":1,"level":"Expression","name":"CEIL","status":"Unlearned","successes":0,"failures":0}
{"kind":"fragment","id":1,"level":"Expression","name":"CEIL","hole":"FunctionName","text":"CEIL","validity":"Candidate","successes":0,"failures":0,"origin":"Synthesized"}
{"kind":"fragment","id":1,"level":"Expression","name":"CEIL","hole":"FunctionName","text":"CEIL","validity":"Valid","successes":3,"failures":1,"origin":"Synthesized"}
{"kind":"feature","id":1,"level":"Expression","name":"CEIL","status":"Learned","successes":3,"failures":1}
"#;
        let s = FragmentStore::load(lines.as_bytes()).unwrap();
        assert_eq!(s.features().len(), 1);
        assert_eq!(s.features()[0].status, FeatureStatus::Learned);
        assert_eq!(s.fragments().len(), 1);
        assert_eq!(s.fragments()[0].validity, Validity::Valid);
        assert_eq!(s.fragments()[0].stats.successes, 3);
    }

    #[test]
    fn placeholder_scan() {
        let idx: Vec<usize> = placeholder_indices("CREATE TABLE {0} TAB (COL INT {1}, {2}) {3};").collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(placeholder_indices("no holes {x} {}").count(), 0);
    }

    #[test]
    fn sketch_invariant_checker() {
        let good = Sketch {
            context_statements: vec!["CREATE TABLE TAB (COL INT);".into()],
            holed_statements: vec!["{0};".into(), "{1};".into()],
            holes: vec![(0, HoleKind::WholeStatement), (1, HoleKind::WholeStatement)],
            feature_id: 1,
            schema: SchemaModel::default(),
        };
        assert!(good.check_invariants().is_ok());
        let dup = Sketch {
            holed_statements: vec!["{0}; {0};".into()],
            holes: vec![(0, HoleKind::WholeStatement)],
            ..good.clone()
        };
        assert!(dup.check_invariants().is_err());
        let bad_ctx = Sketch {
            context_statements: vec!["SELECT {0};".into()],
            ..good.clone()
        };
        assert!(bad_ctx.check_invariants().is_err());
    }
}
