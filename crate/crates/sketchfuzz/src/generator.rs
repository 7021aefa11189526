//! Rule-based generation of common SQL: context statements (CREATE TABLE,
//! CREATE VIEW, INSERT), queries with random predicates, the random-literal
//! generator registry, and fragment expansion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::ExpandError;
use crate::model::{
    parse_learned_tag, FeatureId, Fragment, FragmentId, FragmentStore, HoleKind, SchemaModel,
    TableDef,
};

pub type GenRng = ChaCha8Rng;

pub const TYPE_INT: &str = "INT";
pub const TYPE_VARCHAR: &str = "VARCHAR";
pub const TYPE_BOOLEAN: &str = "BOOLEAN";

const BUILTIN_TYPES: [&str; 3] = [TYPE_INT, TYPE_VARCHAR, TYPE_BOOLEAN];

/// Comparison operators shared by effectively every SQL dialect.
pub const BUILTIN_COMPARISONS: [&str; 6] = ["=", "<", ">", "<=", ">=", "<>"];

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_tables: u32,
    pub max_views: u32,
    pub max_inserts: u32,
    pub max_columns: u32,
    pub fragment_probability: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_tables: 2,
            max_views: 1,
            max_inserts: 20,
            max_columns: 5,
            fragment_probability: 0.3,
            seed: 0,
        }
    }
}

/// Selection policy for learned fragments: base probability per eligible
/// grammar node, with a weight boost for the feature currently under test.
#[derive(Debug, Clone, Copy)]
pub struct FragmentPolicy {
    pub probability: f64,
    pub boosted_feature: Option<FeatureId>,
    pub boost_factor: f64,
}

impl FragmentPolicy {
    pub fn with_probability(probability: f64) -> Self {
        FragmentPolicy { probability, boosted_feature: None, boost_factor: 1.0 }
    }

    pub fn off() -> Self {
        Self::with_probability(0.0)
    }

    fn roll(&self, rng: &mut GenRng) -> bool {
        self.probability > 0.0 && rng.gen_bool(self.probability.clamp(0.0, 1.0))
    }

    fn weight(&self, f: &Fragment) -> f64 {
        match self.boosted_feature {
            Some(id) if id == f.feature_id => self.boost_factor.max(1.0),
            _ => 1.0,
        }
    }

    /// Weighted pick among fragments, renormalized.
    fn pick<'a>(&self, rng: &mut GenRng, items: &[&'a Fragment]) -> Option<&'a Fragment> {
        if items.is_empty() {
            return None;
        }
        let total: f64 = items.iter().map(|f| self.weight(f)).sum();
        let mut x = rng.gen_range(0.0..total);
        for f in items {
            x -= self.weight(f);
            if x <= 0.0 {
                return Some(f);
            }
        }
        items.last().copied()
    }
}

/// One generated statement plus the learned fragments instantiated in it.
#[derive(Debug, Clone)]
pub struct GeneratedStatement {
    pub text: String,
    pub fragments: Vec<FragmentId>,
}

impl GeneratedStatement {
    pub fn plain(text: String) -> Self {
        GeneratedStatement { text, fragments: Vec::new() }
    }
}

// ---------------------------------------------------------------------------
// random literal generators
// ---------------------------------------------------------------------------

/// Context a fragment is expanded in: the current schema, plus an optional
/// anchor table/column that abstract identifiers resolve against.
pub struct ExpandCtx<'a> {
    pub schema: &'a SchemaModel,
    pub anchor_table: Option<&'a TableDef>,
    pub anchor_column: Option<&'a str>,
}

impl<'a> ExpandCtx<'a> {
    pub fn schema_only(schema: &'a SchemaModel) -> Self {
        ExpandCtx { schema, anchor_table: None, anchor_column: None }
    }
}

type Producer = fn(&mut GenRng, &ExpandCtx<'_>) -> Result<String, ExpandError>;

/// A registered random-literal generator, invoked by keyword when a fragment
/// containing `<NAME>` is instantiated.
pub struct LiteralGenerator {
    pub keyword: &'static str,
    pub description: &'static str,
    producer: Producer,
}

pub struct GeneratorRegistry {
    generators: Vec<LiteralGenerator>,
}

impl GeneratorRegistry {
    /// The standard registry: a random integer, string, date, table
    /// reference, and column reference.
    pub fn standard() -> Self {
        GeneratorRegistry {
            generators: vec![
                LiteralGenerator {
                    keyword: "RANDOM_INT",
                    description: "A random integer. e.g., 1",
                    producer: |rng, _| Ok(random_int(rng)),
                },
                LiteralGenerator {
                    keyword: "RANDOM_VARCHAR",
                    description: "A random string. e.g., 'abc'",
                    producer: |rng, _| Ok(random_varchar(rng)),
                },
                LiteralGenerator {
                    keyword: "RANDOM_DATE",
                    description: "A random date. e.g., '2024-12-13'",
                    producer: |rng, _| Ok(random_date(rng)),
                },
                LiteralGenerator {
                    keyword: "RANDOM_TABLE",
                    description: "A random table reference.",
                    producer: |rng, ctx| {
                        let tables = &ctx.schema.tables;
                        if tables.is_empty() {
                            return Err(ExpandError::EmptySchema);
                        }
                        Ok(tables[rng.gen_range(0..tables.len())].name.clone())
                    },
                },
                LiteralGenerator {
                    keyword: "RANDOM_COLUMN",
                    description: "A random column reference.",
                    producer: |rng, ctx| {
                        let table = match ctx.anchor_table {
                            Some(t) => t,
                            None => {
                                let tables = &ctx.schema.tables;
                                if tables.is_empty() {
                                    return Err(ExpandError::EmptySchema);
                                }
                                &tables[rng.gen_range(0..tables.len())]
                            }
                        };
                        let cols = &table.columns;
                        Ok(cols[rng.gen_range(0..cols.len())].0.clone())
                    },
                },
            ],
        }
    }

    pub fn get(&self, name: &str) -> Option<&LiteralGenerator> {
        self.generators.iter().find(|g| g.keyword == name)
    }

    pub fn list(&self) -> &[LiteralGenerator] {
        &self.generators
    }
}

const SPECIAL_INTS: [i64; 7] = [
    0,
    1,
    -1,
    2147483647,
    -2147483648,
    9223372036854775807,
    -9223372036854775808,
];

/// Boundary-biased integer literal: half the time a special value, otherwise
/// a uniform small integer.
pub fn random_int(rng: &mut GenRng) -> String {
    if rng.gen_bool(0.5) {
        SPECIAL_INTS[rng.gen_range(0..SPECIAL_INTS.len())].to_string()
    } else {
        rng.gen_range(-1000i64..=1000).to_string()
    }
}

const VARCHAR_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789 ";

/// Single-quoted string literal of length 0..10 with quote escaping.
pub fn random_varchar(rng: &mut GenRng) -> String {
    let len = rng.gen_range(0..=10);
    let body: String = (0..len)
        .map(|_| VARCHAR_ALPHABET[rng.gen_range(0..VARCHAR_ALPHABET.len())] as char)
        .collect();
    format!("'{}'", body.replace('\'', "''"))
}

fn leap_year(y: i32) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

fn days_in_month(y: i32, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            if leap_year(y) {
                29
            } else {
                28
            }
        }
        _ => unreachable!(),
    }
}

/// Valid calendar date in 1970..2038, rendered ISO and quoted.
pub fn random_date(rng: &mut GenRng) -> String {
    let y = rng.gen_range(1970..=2038);
    let m = rng.gen_range(1u32..=12);
    let d = rng.gen_range(1..=days_in_month(y, m));
    format!("'{y:04}-{m:02}-{d:02}'")
}

// ---------------------------------------------------------------------------
// fragment expansion
// ---------------------------------------------------------------------------

/// Scans `text` for `<NAME>` keyword occurrences.
fn keyword_spans(text: &str) -> Vec<(usize, usize, String)> {
    let b = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'<' && i + 1 < b.len() {
            let start = i + 1;
            let mut end = start;
            if (b[end] as char).is_ascii_uppercase() || b[end] == b'_' {
                end += 1;
                while end < b.len()
                    && ((b[end] as char).is_ascii_uppercase()
                        || (b[end] as char).is_ascii_digit()
                        || b[end] == b'_')
                {
                    end += 1;
                }
                if end < b.len() && b[end] == b'>' {
                    spans.push((i, end + 1, text[start..end].to_string()));
                    i = end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    spans
}

/// True when the text references an abstract identifier (TAB, COL, COL2...)
fn references_abstract(text: &str) -> bool {
    abstract_tokens(text).next().is_some()
}

fn abstract_tokens(text: &str) -> impl Iterator<Item = (usize, usize, String)> + '_ {
    let b = text.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < b.len() {
            let c = b[i] as char;
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                if word == "TAB" || word == "COL" || (word.starts_with("COL")
                    && word[3..].chars().all(|c| c.is_ascii_digit())
                    && !word[3..].is_empty())
                {
                    return Some((start, i, word.to_string()));
                }
            } else {
                i += 1;
            }
        }
        None
    })
}

/// Replaces every generator keyword with a fresh literal and resolves the
/// abstract identifiers against the schema. The output contains neither
/// keywords nor abstract identifiers.
pub fn expand_fragment(
    text: &str,
    registry: &GeneratorRegistry,
    ctx: &ExpandCtx<'_>,
    rng: &mut GenRng,
) -> Result<String, ExpandError> {
    // Resolve the anchor table once so TAB and COL agree.
    let needs_ident = references_abstract(text);
    let table: Option<&TableDef> = if needs_ident {
        match ctx.anchor_table {
            Some(t) => Some(t),
            None => {
                if ctx.schema.tables.is_empty() {
                    return Err(ExpandError::EmptySchema);
                }
                let i = rng.gen_range(0..ctx.schema.tables.len());
                Some(&ctx.schema.tables[i])
            }
        }
    } else {
        None
    };

    let mut ident_map: Vec<(String, String)> = Vec::new();
    let mut out = String::with_capacity(text.len() + 16);
    let mut rest = text;
    loop {
        let spans = keyword_spans(rest);
        let abstracts: Vec<(usize, usize, String)> = abstract_tokens(rest).collect();
        // Process whichever comes first, left to right.
        let next_kw = spans.first();
        let next_id = abstracts.first();
        let (start, end, is_kw, name) = match (next_kw, next_id) {
            (None, None) => break,
            (Some(k), None) => (k.0, k.1, true, k.2.clone()),
            (None, Some(a)) => (a.0, a.1, false, a.2.clone()),
            (Some(k), Some(a)) => {
                if k.0 < a.0 {
                    (k.0, k.1, true, k.2.clone())
                } else {
                    (a.0, a.1, false, a.2.clone())
                }
            }
        };
        out.push_str(&rest[..start]);
        if is_kw {
            let generator = registry
                .get(&name)
                .ok_or_else(|| ExpandError::UnknownKeyword(name.clone()))?;
            let inner = ExpandCtx {
                schema: ctx.schema,
                anchor_table: table.or(ctx.anchor_table),
                anchor_column: ctx.anchor_column,
            };
            out.push_str(&(generator.producer)(rng, &inner)?);
        } else {
            let table = table.ok_or(ExpandError::EmptySchema)?;
            if name == "TAB" {
                out.push_str(&table.name);
            } else if let Some((_, concrete)) = ident_map.iter().find(|(a, _)| *a == name) {
                out.push_str(concrete);
            } else {
                let concrete = if name == "COL" {
                    match ctx.anchor_column {
                        Some(c) => c.to_string(),
                        None => table.columns[rng.gen_range(0..table.columns.len())].0.clone(),
                    }
                } else {
                    // COL2, COL3, ... prefer a column not picked yet.
                    let taken: Vec<&str> = ident_map.iter().map(|(_, c)| c.as_str()).collect();
                    let free: Vec<&str> = table
                        .column_names()
                        .filter(|c| !taken.contains(c))
                        .collect();
                    if free.is_empty() {
                        table.columns[rng.gen_range(0..table.columns.len())].0.clone()
                    } else {
                        free[rng.gen_range(0..free.len())].to_string()
                    }
                };
                ident_map.push((name.clone(), concrete.clone()));
                out.push_str(&concrete);
            }
        }
        rest = &rest[end..];
    }
    out.push_str(rest);
    Ok(out)
}

// ---------------------------------------------------------------------------
// context generation
// ---------------------------------------------------------------------------

/// Learned data-type features usable for columns: the feature must have both
/// a Valid type-name fragment and a Valid literal fragment.
fn eligible_type_features(
    store: &FragmentStore,
) -> Vec<(FeatureId, &Fragment, Vec<&Fragment>)> {
    let mut out = Vec::new();
    for name_frag in store.lookup(HoleKind::DataTypeName, true) {
        let literals = store.lookup_feature(name_frag.feature_id, HoleKind::TypedLiteral, true);
        if !literals.is_empty() {
            out.push((name_frag.feature_id, name_frag, literals));
        }
    }
    out
}

pub struct ContextOutput {
    pub statements: Vec<GeneratedStatement>,
    pub schema: SchemaModel,
}

/// Emits CREATE TABLE, CREATE VIEW, and INSERT statements establishing a
/// fresh database state, together with the matching schema model.
pub fn generate_context(
    cfg: &GenConfig,
    store: &FragmentStore,
    policy: &FragmentPolicy,
    rng: &mut GenRng,
) -> ContextOutput {
    let mut statements = Vec::new();
    let mut schema = SchemaModel::default();

    let type_features = eligible_type_features(store);
    let column_constraints = store.lookup(HoleKind::ColumnConstraint, true);
    let table_constraints = store.lookup(HoleKind::TableConstraint, true);
    let table_options = store.lookup(HoleKind::TableOption, true);
    let suffixes = store.lookup(HoleKind::StatementSuffix, true);
    let registry = GeneratorRegistry::standard();

    let ntables = rng.gen_range(1..=cfg.max_tables.max(1));
    for ti in 0..ntables {
        let name = format!("t{ti}");
        let ncols = rng.gen_range(1..=cfg.max_columns.max(1));
        let mut fragment_ids = Vec::new();
        let mut columns: Vec<(String, String)> = Vec::new();
        let mut col_sql: Vec<String> = Vec::new();

        let provisional = TableDef {
            name: name.clone(),
            columns: vec![("c0".into(), TYPE_INT.into())],
            is_view: false,
        };

        for ci in 0..ncols {
            let col_name = format!("c{ci}");
            let mut type_text;
            let tag;
            if !type_features.is_empty() && policy.roll(rng) {
                let names: Vec<&Fragment> = type_features.iter().map(|(_, f, _)| *f).collect();
                let chosen = policy.pick(rng, &names).unwrap();
                let feature_name = store
                    .feature(chosen.feature_id)
                    .map(|f| f.name.clone())
                    .unwrap_or_default();
                type_text = chosen.text.clone();
                tag = crate::model::learned_type_tag(&feature_name);
                fragment_ids.push(chosen.id);
            } else {
                type_text = BUILTIN_TYPES[rng.gen_range(0..BUILTIN_TYPES.len())].to_string();
                tag = type_text.clone();
            }
            if !column_constraints.is_empty() && policy.roll(rng) {
                if let Some(frag) = policy.pick(rng, &column_constraints) {
                    let ctx = ExpandCtx {
                        schema: &schema,
                        anchor_table: Some(&provisional),
                        anchor_column: Some(&col_name),
                    };
                    if let Ok(expanded) = expand_fragment(&frag.text, &registry, &ctx, rng) {
                        type_text = format!("{type_text} {expanded}");
                        fragment_ids.push(frag.id);
                    }
                }
            }
            col_sql.push(format!("{col_name} {type_text}"));
            columns.push((col_name, tag));
        }

        let def = TableDef { name: name.clone(), columns: columns.clone(), is_view: false };

        if !table_constraints.is_empty() && policy.roll(rng) {
            if let Some(frag) = policy.pick(rng, &table_constraints) {
                let ctx = ExpandCtx {
                    schema: &schema,
                    anchor_table: Some(&def),
                    anchor_column: None,
                };
                if let Ok(expanded) = expand_fragment(&frag.text, &registry, &ctx, rng) {
                    col_sql.push(expanded);
                    fragment_ids.push(frag.id);
                }
            }
        }

        let mut head = format!("CREATE TABLE t{ti}");
        if !table_options.is_empty() && policy.roll(rng) {
            if let Some(frag) = policy.pick(rng, &table_options) {
                let ctx = ExpandCtx {
                    schema: &schema,
                    anchor_table: Some(&def),
                    anchor_column: None,
                };
                if let Ok(expanded) = expand_fragment(&frag.text, &registry, &ctx, rng) {
                    head = format!("CREATE TABLE {expanded} t{ti}");
                    fragment_ids.push(frag.id);
                }
            }
        }
        let mut text = format!("{head} ({})", col_sql.join(", "));
        if !suffixes.is_empty() && policy.roll(rng) {
            if let Some(frag) = policy.pick(rng, &suffixes) {
                let ctx = ExpandCtx {
                    schema: &schema,
                    anchor_table: Some(&def),
                    anchor_column: None,
                };
                if let Ok(expanded) = expand_fragment(&frag.text, &registry, &ctx, rng) {
                    text = format!("{text} {expanded}");
                    fragment_ids.push(frag.id);
                }
            }
        }
        text.push(';');
        statements.push(GeneratedStatement { text, fragments: fragment_ids });
        schema.tables.push(def);
    }

    let nviews = if cfg.max_views == 0 { 0 } else { rng.gen_range(0..=cfg.max_views) };
    for vi in 0..nviews {
        let src = &schema.tables[rng.gen_range(0..schema.tables.len())];
        let ncols = rng.gen_range(1..=src.columns.len());
        let cols: Vec<(String, String)> = src.columns.iter().take(ncols).cloned().collect();
        let col_list = cols.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>().join(", ");
        let name = format!("v{vi}");
        let text = format!("CREATE VIEW {name} AS SELECT {col_list} FROM {};", src.name);
        statements.push(GeneratedStatement::plain(text));
        schema.views.push(TableDef { name, columns: cols, is_view: true });
    }

    let ninserts = rng.gen_range(1..=cfg.max_inserts.max(1));
    for _ in 0..ninserts {
        let table = &schema.tables[rng.gen_range(0..schema.tables.len())];
        let mut fragment_ids = Vec::new();
        let mut values = Vec::with_capacity(table.columns.len());
        for (_, tag) in &table.columns {
            if rng.gen_bool(0.1) {
                values.push("NULL".to_string());
                continue;
            }
            match parse_learned_tag(tag) {
                Some(feature_name) => {
                    let lit = type_features
                        .iter()
                        .find(|(fid, _, _)| {
                            store.feature(*fid).map(|f| f.name == feature_name).unwrap_or(false)
                        })
                        .and_then(|(_, _, lits)| policy.pick(rng, lits));
                    match lit {
                        Some(frag) => {
                            let ctx = ExpandCtx {
                                schema: &schema,
                                anchor_table: Some(table),
                                anchor_column: None,
                            };
                            match expand_fragment(&frag.text, &registry, &ctx, rng) {
                                Ok(expanded) => {
                                    values.push(expanded);
                                    fragment_ids.push(frag.id);
                                }
                                Err(_) => values.push("NULL".to_string()),
                            }
                        }
                        None => values.push("NULL".to_string()),
                    }
                }
                None => values.push(match tag.as_str() {
                    TYPE_VARCHAR => random_varchar(rng),
                    TYPE_BOOLEAN => if rng.gen_bool(0.5) { "TRUE" } else { "FALSE" }.to_string(),
                    _ => random_int(rng),
                }),
            }
        }
        let cols = table.column_names().collect::<Vec<_>>().join(", ");
        let text = format!(
            "INSERT INTO {} ({cols}) VALUES ({});",
            table.name,
            values.join(", ")
        );
        statements.push(GeneratedStatement { text, fragments: fragment_ids });
    }

    ContextOutput { statements, schema }
}

// ---------------------------------------------------------------------------
// predicate and query generation
// ---------------------------------------------------------------------------

/// Columns usable in plain (non-fragment) predicate positions: built-in
/// typed only. Learned-type columns enter predicates through expression
/// fragments bound to their feature.
fn builtin_columns<'a>(tables: &[&'a TableDef]) -> Vec<(&'a str, &'a str)> {
    let mut cols = Vec::new();
    for t in tables {
        for (name, tag) in &t.columns {
            if parse_learned_tag(tag).is_none() {
                cols.push((name.as_str(), tag.as_str()));
            }
        }
    }
    cols
}

fn columns_for_fragment<'a>(
    tables: &[&'a TableDef],
    store: &FragmentStore,
    frag: &Fragment,
) -> Vec<&'a str> {
    let feature_name = store
        .feature(frag.feature_id)
        .map(|f| f.name.clone())
        .unwrap_or_default();
    let mut cols = Vec::new();
    for t in tables {
        for (name, tag) in &t.columns {
            match parse_learned_tag(tag) {
                None => cols.push(name.as_str()),
                Some(f) if f == feature_name => cols.push(name.as_str()),
                Some(_) => {}
            }
        }
    }
    cols
}

pub struct PredicateOutput {
    pub text: String,
    pub fragments: Vec<FragmentId>,
}

struct PredicateBuilder<'a> {
    tables: Vec<&'a TableDef>,
    store: &'a FragmentStore,
    policy: &'a FragmentPolicy,
    registry: GeneratorRegistry,
    schema: &'a SchemaModel,
    used: Vec<FragmentId>,
}

impl<'a> PredicateBuilder<'a> {
    fn value(&mut self, rng: &mut GenRng, depth: u32) -> String {
        let cols = builtin_columns(&self.tables);
        let roll: f64 = rng.gen();
        if !cols.is_empty() && roll < 0.40 {
            cols[rng.gen_range(0..cols.len())].0.to_string()
        } else if roll < 0.46 && depth > 0 {
            // Arithmetic over columns and literals; extreme stored values can
            // overflow, which the engine reports as an error.
            let op = ["+", "-", "*"][rng.gen_range(0..3)];
            let a = self.value(rng, 0);
            let b = self.value(rng, 0);
            format!("({a} {op} {b})")
        } else if roll < 0.56 {
            random_varchar(rng)
        } else if roll < 0.62 {
            if rng.gen_bool(0.5) { "TRUE" } else { "FALSE" }.to_string()
        } else {
            random_int(rng)
        }
    }

    fn fragment_node(&mut self, rng: &mut GenRng, depth: u32) -> Option<String> {
        let kinds = [
            HoleKind::BinaryOperator,
            HoleKind::FunctionName,
            HoleKind::UnaryPrefix,
            HoleKind::LeafExpression,
        ];
        let mut candidates: Vec<&Fragment> = Vec::new();
        for k in kinds {
            candidates.extend(self.store.lookup(k, true));
        }
        if candidates.is_empty() {
            return None;
        }
        let frag = self.policy.pick(rng, &candidates)?.clone();
        let cols = columns_for_fragment(&self.tables, self.store, &frag);
        let anchor_col = if cols.is_empty() {
            None
        } else {
            Some(cols[rng.gen_range(0..cols.len())].to_string())
        };
        let anchor_table = self.tables.first().copied();
        let ctx = ExpandCtx {
            schema: self.schema,
            anchor_table,
            anchor_column: anchor_col.as_deref(),
        };
        let text = match frag.hole {
            HoleKind::BinaryOperator => {
                let a = anchor_col.clone().unwrap_or_else(|| self.value(rng, 0));
                let b = self.value(rng, 0);
                let op = expand_fragment(&frag.text, &self.registry, &ctx, rng).ok()?;
                format!("{a} {op} {b}")
            }
            HoleKind::FunctionName => {
                let arg = anchor_col.clone().unwrap_or_else(|| self.value(rng, 0));
                let f = expand_fragment(&frag.text, &self.registry, &ctx, rng).ok()?;
                format!("{f}({arg})")
            }
            HoleKind::UnaryPrefix => {
                let inner = if depth > 0 {
                    self.predicate(rng, depth - 1)
                } else {
                    self.value(rng, 0)
                };
                let u = expand_fragment(&frag.text, &self.registry, &ctx, rng).ok()?;
                format!("{u} ({inner})")
            }
            HoleKind::LeafExpression => {
                expand_fragment(&frag.text, &self.registry, &ctx, rng).ok()?
            }
            _ => return None,
        };
        self.used.push(frag.id);
        Some(text)
    }

    fn predicate(&mut self, rng: &mut GenRng, depth: u32) -> String {
        if self.policy.roll(rng) {
            if let Some(text) = self.fragment_node(rng, depth) {
                return text;
            }
        }
        let roll: f64 = rng.gen();
        if depth > 0 && roll < 0.18 {
            let op = if rng.gen_bool(0.5) { "AND" } else { "OR" };
            let a = self.predicate(rng, depth - 1);
            let b = self.predicate(rng, depth - 1);
            format!("({a}) {op} ({b})")
        } else if depth > 0 && roll < 0.26 {
            let a = self.predicate(rng, depth - 1);
            format!("NOT ({a})")
        } else if roll < 0.36 {
            let v = self.value(rng, 1);
            let suffix = if rng.gen_bool(0.5) { "IS NULL" } else { "IS NOT NULL" };
            format!("{v} {suffix}")
        } else if roll < 0.92 {
            let op = BUILTIN_COMPARISONS[rng.gen_range(0..BUILTIN_COMPARISONS.len())];
            let a = self.value(rng, 1);
            let b = self.value(rng, 1);
            format!("{a} {op} {b}")
        } else {
            self.value(rng, 1)
        }
    }
}

/// Builds a random predicate over the given tables' columns.
pub fn generate_predicate(
    schema: &SchemaModel,
    tables: &[&TableDef],
    store: &FragmentStore,
    policy: &FragmentPolicy,
    rng: &mut GenRng,
) -> PredicateOutput {
    let mut b = PredicateBuilder {
        tables: tables.to_vec(),
        store,
        policy,
        registry: GeneratorRegistry::standard(),
        schema,
        used: Vec::new(),
    };
    let depth = rng.gen_range(1..=3);
    let text = b.predicate(rng, depth);
    PredicateOutput { text, fragments: b.used }
}

pub struct QueryOutput {
    pub statement: GeneratedStatement,
    /// FROM source ("t0" or "t0, t1").
    pub source: String,
    pub predicate: String,
}

/// A SELECT over one table or a two-table comma join, with a random
/// predicate.
pub fn generate_query(
    schema: &SchemaModel,
    store: &FragmentStore,
    policy: &FragmentPolicy,
    rng: &mut GenRng,
) -> QueryOutput {
    let relations: Vec<&TableDef> = schema.relations().collect();
    assert!(!relations.is_empty(), "generate_query requires a non-empty schema");
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

    let pred = generate_predicate(schema, &tables, store, policy, rng);
    let projection = if rng.gen_bool(0.7) {
        "*".to_string()
    } else {
        let t = tables[0];
        let n = rng.gen_range(1..=t.columns.len());
        t.column_names().take(n).collect::<Vec<_>>().join(", ")
    };
    let text = format!("SELECT {projection} FROM {source} WHERE {};", pred.text);
    QueryOutput {
        statement: GeneratedStatement { text, fragments: pred.fragments.clone() },
        source,
        predicate: pred.text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureLevel, FragmentOrigin, Validity};
    use rand::SeedableRng;

    fn rng(seed: u64) -> GenRng {
        GenRng::seed_from_u64(seed)
    }

    fn schema_one_table() -> SchemaModel {
        SchemaModel {
            tables: vec![TableDef {
                name: "t0".into(),
                columns: vec![("c0".into(), TYPE_INT.into())],
                is_view: false,
            }],
            views: vec![],
        }
    }

    #[test]
    fn expand_keyword_and_identifiers() {
        let schema = schema_one_table();
        let registry = GeneratorRegistry::standard();
        let ctx = ExpandCtx::schema_only(&schema);
        let mut r = rng(7);
        let out = expand_fragment("CHECK (COL > <RANDOM_INT>)", &registry, &ctx, &mut r).unwrap();
        assert!(out.starts_with("CHECK (c0 > "), "{out}");
        assert!(!out.contains('<') || out.contains("<="), "{out}");
        assert!(!out.contains("COL"), "{out}");
    }

    #[test]
    fn expand_identity_without_keywords() {
        let schema = schema_one_table();
        let registry = GeneratorRegistry::standard();
        let ctx = ExpandCtx::schema_only(&schema);
        let mut r = rng(1);
        assert_eq!(
            expand_fragment("NOT NULL", &registry, &ctx, &mut r).unwrap(),
            "NOT NULL"
        );
    }

    #[test]
    fn expand_unknown_keyword_errors() {
        let schema = schema_one_table();
        let registry = GeneratorRegistry::standard();
        let ctx = ExpandCtx::schema_only(&schema);
        let mut r = rng(1);
        let err = expand_fragment("<NO_SUCH_GEN>", &registry, &ctx, &mut r).unwrap_err();
        assert_eq!(err, ExpandError::UnknownKeyword("NO_SUCH_GEN".into()));
    }

    #[test]
    fn expand_empty_schema_errors() {
        let schema = SchemaModel::default();
        let registry = GeneratorRegistry::standard();
        let ctx = ExpandCtx::schema_only(&schema);
        let mut r = rng(1);
        assert_eq!(
            expand_fragment("TAB.COL", &registry, &ctx, &mut r).unwrap_err(),
            ExpandError::EmptySchema
        );
        assert_eq!(
            expand_fragment("<RANDOM_TABLE>", &registry, &ctx, &mut r).unwrap_err(),
            ExpandError::EmptySchema
        );
    }

    #[test]
    fn random_table_draws_are_roughly_uniform() {
        let schema = SchemaModel {
            tables: vec![
                TableDef { name: "t0".into(), columns: vec![("c0".into(), "INT".into())], is_view: false },
                TableDef { name: "t1".into(), columns: vec![("c0".into(), "INT".into())], is_view: false },
            ],
            views: vec![],
        };
        let registry = GeneratorRegistry::standard();
        let mut r = rng(99);
        let mut n0 = 0;
        let mut n1 = 0;
        for _ in 0..10_000 {
            let ctx = ExpandCtx::schema_only(&schema);
            match expand_fragment("<RANDOM_TABLE>", &registry, &ctx, &mut r).unwrap().as_str() {
                "t0" => n0 += 1,
                "t1" => n1 += 1,
                other => panic!("unexpected draw {other}"),
            }
        }
        // Frequency count against a uniform choice; 6 sigma on 10k draws.
        assert!(n0 > 4700 && n0 < 5300, "n0={n0}");
        assert!(n1 > 4700 && n1 < 5300, "n1={n1}");
    }

    #[test]
    fn random_int_hits_boundary_values() {
        let mut r = rng(3);
        let draws: Vec<String> = (0..2_000).map(|_| random_int(&mut r)).collect();
        assert!(draws.iter().any(|d| d == "2147483647"));
        assert!(draws.iter().any(|d| d == "-9223372036854775808"));
    }

    #[test]
    fn random_varchar_quoting() {
        let mut r = rng(4);
        let mut saw_empty = false;
        for _ in 0..2_000 {
            let s = random_varchar(&mut r);
            assert!(s.starts_with('\'') && s.ends_with('\''), "{s}");
            if s == "''" {
                saw_empty = true;
            }
        }
        assert!(saw_empty, "zero-length draw expected in 2000 draws");
    }

    #[test]
    fn random_dates_are_valid_calendar_dates() {
        // Brute-force date-validity oracle over 10,000 draws.
        let mut r = rng(5);
        for _ in 0..10_000 {
            let lit = random_date(&mut r);
            let s = lit.trim_matches('\'');
            let parts: Vec<&str> = s.split('-').collect();
            assert_eq!(parts.len(), 3, "{s}");
            let y: i32 = parts[0].parse().unwrap();
            let m: u32 = parts[1].parse().unwrap();
            let d: u32 = parts[2].parse().unwrap();
            assert!((1970..=2038).contains(&y));
            assert!((1..=12).contains(&m));
            // Independent month-length table.
            let max = match m {
                2 => {
                    if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 {
                        29
                    } else {
                        28
                    }
                }
                4 | 6 | 9 | 11 => 30,
                _ => 31,
            };
            assert!(d >= 1 && d <= max, "{s}");
        }
    }

    #[test]
    fn context_is_deterministic_per_seed() {
        let cfg = GenConfig::default();
        let store = FragmentStore::new();
        let policy = FragmentPolicy::off();
        let a: Vec<String> = generate_context(&cfg, &store, &policy, &mut rng(42))
            .statements
            .into_iter()
            .map(|s| s.text)
            .collect();
        let b: Vec<String> = generate_context(&cfg, &store, &policy, &mut rng(42))
            .statements
            .into_iter()
            .map(|s| s.text)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn context_respects_bounds_and_schema() {
        let cfg = GenConfig { max_tables: 1, max_views: 0, ..GenConfig::default() };
        let store = FragmentStore::new();
        let policy = FragmentPolicy::off();
        let out = generate_context(&cfg, &store, &policy, &mut rng(11));
        assert_eq!(out.schema.tables.len(), 1);
        let creates: Vec<&GeneratedStatement> = out
            .statements
            .iter()
            .filter(|s| s.text.starts_with("CREATE TABLE"))
            .collect();
        assert_eq!(creates.len(), 1);
        assert!(creates[0].text.starts_with("CREATE TABLE t0 ("));
        assert!(out.statements.iter().any(|s| s.text.starts_with("INSERT INTO ")));
    }

    #[test]
    fn learned_type_flows_into_context() {
        let mut store = FragmentStore::new();
        let f = store.add_feature(FeatureLevel::DataType, "ARRAY");
        store.add_fragment(f, HoleKind::DataTypeName, "ARRAY", Validity::Valid, FragmentOrigin::Synthesized);
        store.add_fragment(
            f,
            HoleKind::TypedLiteral,
            "[1, <RANDOM_INT>]",
            Validity::Valid,
            FragmentOrigin::Synthesized,
        );
        let cfg = GenConfig { max_tables: 1, max_views: 0, max_inserts: 5, ..GenConfig::default() };
        let policy = FragmentPolicy::with_probability(1.0);
        let mut seen_type = false;
        let mut seen_literal = false;
        for seed in 0..40 {
            let out = generate_context(&cfg, &store, &policy, &mut rng(seed));
            for s in &out.statements {
                if s.text.contains(" ARRAY") && s.text.starts_with("CREATE TABLE") {
                    seen_type = true;
                }
                if s.text.starts_with("INSERT") && s.text.contains("[1, ") {
                    seen_literal = true;
                }
            }
        }
        assert!(seen_type, "no run produced an ARRAY column");
        assert!(seen_literal, "no run produced a typed literal value");
    }

    #[test]
    fn query_uses_learned_expression_fragments() {
        let mut store = FragmentStore::new();
        let f = store.add_feature(FeatureLevel::Expression, "CEIL");
        store.add_fragment(f, HoleKind::FunctionName, "CEIL", Validity::Valid, FragmentOrigin::Synthesized);
        let g = store.add_feature(FeatureLevel::Expression, "null-safe equal");
        store.add_fragment(g, HoleKind::BinaryOperator, "<=>", Validity::Valid, FragmentOrigin::Synthesized);
        let schema = schema_one_table();
        let policy = FragmentPolicy::with_probability(0.9);
        let mut saw_ceil = false;
        let mut saw_op = false;
        for seed in 0..200 {
            let q = generate_query(&schema, &store, &policy, &mut rng(seed));
            if q.statement.text.contains("CEIL(") {
                saw_ceil = true;
            }
            if q.statement.text.contains("<=>") {
                saw_op = true;
            }
        }
        assert!(saw_ceil, "CEIL never used");
        assert!(saw_op, "<=> never used");
    }

    #[test]
    fn query_has_select_from_where_shape() {
        let schema = schema_one_table();
        let store = FragmentStore::new();
        let policy = FragmentPolicy::off();
        for seed in 0..50 {
            let q = generate_query(&schema, &store, &policy, &mut rng(seed));
            assert!(q.statement.text.starts_with("SELECT "), "{}", q.statement.text);
            assert!(q.statement.text.contains(" FROM t0"), "{}", q.statement.text);
            assert!(q.statement.text.contains(" WHERE "), "{}", q.statement.text);
            assert_eq!(q.source, "t0");
        }
    }

    #[test]
    fn generated_statements_reference_only_schema_identifiers() {
        let cfg = GenConfig::default();
        let store = FragmentStore::new();
        let policy = FragmentPolicy::off();
        for seed in 0..30 {
            let out = generate_context(&cfg, &store, &policy, &mut rng(seed));
            let known: Vec<&str> = out
                .schema
                .relations()
                .map(|t| t.name.as_str())
                .collect();
            for s in &out.statements {
                for word in s.text.split(|c: char| !c.is_ascii_alphanumeric() && c != '_') {
                    if let Some(rest) = word.strip_prefix('t') {
                        if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                            assert!(known.contains(&word), "dangling reference {word} in {}", s.text);
                        }
                    }
                }
            }
        }
    }
}
