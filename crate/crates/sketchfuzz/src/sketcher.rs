//! Produces the four levels of SQL sketches from canonical context, inserting
//! typed holes at grammar-defined positions. Sketches use the abstract
//! identifiers TAB and COL so synthesized fragments generalize to any schema.

use rand::Rng;

use crate::error::ExpandError;
use crate::generator::{expand_fragment, ExpandCtx, GenRng, GeneratorRegistry};
use crate::model::{
    learned_type_tag, Feature, FeatureId, FeatureLevel, HoleKind, SchemaModel, Sketch, TableDef,
};

/// Request to build a sketch for one feature. The level always matches the
/// feature's level.
#[derive(Debug, Clone)]
pub struct SketchRequest {
    pub feature_id: FeatureId,
    pub level: FeatureLevel,
}

impl SketchRequest {
    pub fn for_feature(f: &Feature) -> Self {
        SketchRequest { feature_id: f.id, level: f.level }
    }
}

fn canonical_schema(type_tag: &str) -> SchemaModel {
    SchemaModel {
        tables: vec![TableDef {
            name: "TAB".into(),
            columns: vec![("COL".into(), type_tag.to_string())],
            is_view: false,
        }],
        views: vec![],
    }
}

fn insert_values(rng: &mut GenRng, n: usize) -> Vec<i64> {
    // Distinct positive values so primary-key style fills stay satisfiable.
    let mut vals: Vec<i64> = (1..=9).collect();
    for i in (1..vals.len()).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    vals.truncate(n);
    vals
}

/// Statement-level sketch: complete CREATE TABLE + INSERT context, then one
/// to three lines each consisting solely of a whole-statement hole.
pub fn make_statement_sketch(req: &SketchRequest, rng: &mut GenRng) -> Sketch {
    assert_eq!(req.level, FeatureLevel::Statement);
    let n_inserts = rng.gen_range(1..=2);
    let vals = insert_values(rng, n_inserts);
    let mut context = vec!["CREATE TABLE TAB (COL INT);".to_string()];
    for v in &vals {
        context.push(format!("INSERT INTO TAB (COL) VALUES ({v});"));
    }
    let nholes = rng.gen_range(1..=3);
    let holed = (0..nholes).map(|k| format!("{{{k}}};")).collect();
    Sketch {
        context_statements: context,
        holed_statements: holed,
        holes: (0..nholes).map(|k| (k, HoleKind::WholeStatement)).collect(),
        feature_id: req.feature_id,
        schema: canonical_schema("INT"),
    }
}

/// Clause-level sketch: one CREATE TABLE with holes for a table option, a
/// column constraint, a table constraint, and the statement suffix, followed
/// by complete INSERTs referencing the table.
pub fn make_clause_sketch(req: &SketchRequest, rng: &mut GenRng) -> Sketch {
    assert_eq!(req.level, FeatureLevel::Clause);
    let mut holed = vec!["CREATE TABLE {0} TAB (COL INT {1}, {2}) {3};".to_string()];
    for v in insert_values(rng, 2) {
        holed.push(format!("INSERT INTO TAB (COL) VALUES ({v});"));
    }
    Sketch {
        context_statements: vec![],
        holed_statements: holed,
        holes: vec![
            (0, HoleKind::TableOption),
            (1, HoleKind::ColumnConstraint),
            (2, HoleKind::TableConstraint),
            (3, HoleKind::StatementSuffix),
        ],
        feature_id: req.feature_id,
        schema: canonical_schema("INT"),
    }
}

/// The three expression node positions a hole can take.
pub const EXPRESSION_HOLE_KINDS: [HoleKind; 3] = [
    HoleKind::BinaryOperator,
    HoleKind::FunctionName,
    HoleKind::UnaryPrefix,
];

/// Expression sketch with a chosen node kind.
pub fn make_expression_sketch_of_kind(
    req: &SketchRequest,
    kind: HoleKind,
    rng: &mut GenRng,
) -> Sketch {
    assert_eq!(req.level, FeatureLevel::Expression);
    let v = insert_values(rng, 1)[0];
    let context = vec![
        "CREATE TABLE TAB (COL INT);".to_string(),
        format!("INSERT INTO TAB (COL) VALUES ({v});"),
    ];
    let stmt = match kind {
        HoleKind::BinaryOperator => "SELECT COL {0} 1 FROM TAB;".to_string(),
        HoleKind::FunctionName => "SELECT * FROM TAB WHERE {0}(COL);".to_string(),
        HoleKind::UnaryPrefix => "SELECT * FROM TAB WHERE {0} (COL > 0);".to_string(),
        other => panic!("not an expression hole kind: {other:?}"),
    };
    Sketch {
        context_statements: context,
        holed_statements: vec![stmt],
        holes: vec![(0, kind)],
        feature_id: req.feature_id,
        schema: canonical_schema("INT"),
    }
}

/// Expression-level sketch: typed context, then a SELECT in which exactly one
/// expression node is a hole. The node kind is drawn per request.
pub fn make_expression_sketch(req: &SketchRequest, rng: &mut GenRng) -> Sketch {
    let kind = EXPRESSION_HOLE_KINDS[rng.gen_range(0..EXPRESSION_HOLE_KINDS.len())];
    make_expression_sketch_of_kind(req, kind, rng)
}

/// Data-type sketch: a CREATE TABLE whose column type is a hole and an INSERT
/// whose value is a hole; the two are validated jointly.
pub fn make_datatype_sketch(req: &SketchRequest, _rng: &mut GenRng) -> Sketch {
    assert_eq!(req.level, FeatureLevel::DataType);
    Sketch {
        context_statements: vec![],
        holed_statements: vec![
            "CREATE TABLE TAB (COL {0});".to_string(),
            "INSERT INTO TAB (COL) VALUES ({1});".to_string(),
        ],
        holes: vec![(0, HoleKind::DataTypeName), (1, HoleKind::TypedLiteral)],
        feature_id: req.feature_id,
        schema: canonical_schema("INT"),
    }
}

/// Follow-up sketch after a data type was learned: context creates a column
/// of the new type and inserts one of its literals, then a SELECT whose
/// WHERE is a free expression hole over the typed column.
pub fn make_type_expression_sketch(
    feature: &Feature,
    type_text: &str,
    literal_text: &str,
    registry: &GeneratorRegistry,
    rng: &mut GenRng,
) -> Result<Sketch, ExpandError> {
    let schema = canonical_schema(&learned_type_tag(&feature.name));
    let ctx = ExpandCtx {
        schema: &schema,
        anchor_table: Some(&schema.tables[0]),
        anchor_column: Some("COL"),
    };
    let literal = expand_fragment(literal_text, registry, &ctx, rng)?;
    Ok(Sketch {
        context_statements: vec![
            format!("CREATE TABLE TAB (COL {type_text});"),
            format!("INSERT INTO TAB (COL) VALUES ({literal});"),
        ],
        holed_statements: vec!["SELECT * FROM TAB WHERE {0};".to_string()],
        holes: vec![(0, HoleKind::LeafExpression)],
        feature_id: feature.id,
        schema,
    })
}

/// Builds the level-appropriate sketch for a request.
pub fn make_sketch(req: &SketchRequest, rng: &mut GenRng) -> Sketch {
    match req.level {
        FeatureLevel::Statement => make_statement_sketch(req, rng),
        FeatureLevel::Clause => make_clause_sketch(req, rng),
        FeatureLevel::Expression => make_expression_sketch(req, rng),
        FeatureLevel::DataType => make_datatype_sketch(req, rng),
    }
}

/// Context then holed statements, one per line, placeholders kept as `{k}`.
pub fn render_for_prompt(sketch: &Sketch) -> String {
    let mut lines = Vec::with_capacity(
        sketch.context_statements.len() + sketch.holed_statements.len(),
    );
    lines.extend(sketch.context_statements.iter().cloned());
    lines.extend(sketch.holed_statements.iter().cloned());
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> GenRng {
        GenRng::seed_from_u64(seed)
    }

    fn req(level: FeatureLevel) -> SketchRequest {
        SketchRequest { feature_id: 1, level }
    }

    #[test]
    fn statement_sketch_shape() {
        for seed in 0..20 {
            let s = make_statement_sketch(&req(FeatureLevel::Statement), &mut rng(seed));
            s.check_invariants().unwrap();
            assert_eq!(s.context_statements[0], "CREATE TABLE TAB (COL INT);");
            assert!(!s.holes.is_empty() && s.holes.len() <= 3);
            assert!(s.holes.iter().all(|(_, k)| *k == HoleKind::WholeStatement));
            assert_eq!(s.holed_statements[0], "{0};");
            if s.holes.len() == 2 {
                assert_eq!(s.holed_statements[1], "{1};");
            }
        }
    }

    #[test]
    fn clause_sketch_shape() {
        let s = make_clause_sketch(&req(FeatureLevel::Clause), &mut rng(3));
        s.check_invariants().unwrap();
        assert_eq!(
            s.holed_statements[0],
            "CREATE TABLE {0} TAB (COL INT {1}, {2}) {3};"
        );
        let kinds: Vec<HoleKind> = s.holes.iter().map(|(_, k)| *k).collect();
        assert_eq!(
            kinds,
            vec![
                HoleKind::TableOption,
                HoleKind::ColumnConstraint,
                HoleKind::TableConstraint,
                HoleKind::StatementSuffix
            ]
        );
        assert!(s.holed_statements[1].starts_with("INSERT INTO TAB"));
    }

    #[test]
    fn expression_sketch_kinds() {
        let mut seen = [false; 3];
        for seed in 0..50 {
            let s = make_expression_sketch(&req(FeatureLevel::Expression), &mut rng(seed));
            s.check_invariants().unwrap();
            assert_eq!(s.holes.len(), 1);
            match s.holes[0].1 {
                HoleKind::BinaryOperator => {
                    assert_eq!(s.holed_statements[0], "SELECT COL {0} 1 FROM TAB;");
                    seen[0] = true;
                }
                HoleKind::FunctionName => {
                    assert_eq!(s.holed_statements[0], "SELECT * FROM TAB WHERE {0}(COL);");
                    seen[1] = true;
                }
                HoleKind::UnaryPrefix => {
                    assert_eq!(s.holed_statements[0], "SELECT * FROM TAB WHERE {0} (COL > 0);");
                    seen[2] = true;
                }
                other => panic!("unexpected hole kind {other:?}"),
            }
        }
        assert!(seen.iter().all(|x| *x), "not all expression hole kinds drawn");
    }

    #[test]
    fn datatype_sketch_links_two_holes() {
        let s = make_datatype_sketch(&req(FeatureLevel::DataType), &mut rng(0));
        s.check_invariants().unwrap();
        assert!(s.context_statements.is_empty());
        assert_eq!(s.holed_statements.len(), 2);
        assert_eq!(s.holes[0].1, HoleKind::DataTypeName);
        assert_eq!(s.holes[1].1, HoleKind::TypedLiteral);
    }

    #[test]
    fn render_three_line_expression_sketch() {
        // Find a seed that draws the function-name shape.
        for seed in 0..50 {
            let s = make_expression_sketch(&req(FeatureLevel::Expression), &mut rng(seed));
            if s.holes[0].1 == HoleKind::FunctionName {
                let text = render_for_prompt(&s);
                let lines: Vec<&str> = text.lines().collect();
                assert_eq!(lines.len(), 3);
                assert!(lines[0].starts_with("CREATE TABLE"));
                assert!(lines[1].starts_with("INSERT INTO"));
                assert!(lines[2].ends_with("WHERE {0}(COL);"));
                return;
            }
        }
        panic!("function-name shape never drawn");
    }

    #[test]
    fn render_orders_context_before_holes() {
        let s = make_datatype_sketch(&req(FeatureLevel::DataType), &mut rng(0));
        let text = render_for_prompt(&s);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("{0}"));
        assert!(lines[1].contains("{1}"));
        let stmt = make_statement_sketch(&req(FeatureLevel::Statement), &mut rng(1));
        let text = render_for_prompt(&stmt);
        let create = text.find("CREATE TABLE").unwrap();
        let insert = text.find("INSERT INTO").unwrap();
        let hole = text.find("{0}").unwrap();
        assert!(create < insert && insert < hole);
    }

    #[test]
    fn type_expression_sketch_expands_literal() {
        let feature = Feature {
            id: 9,
            name: "ARRAY".into(),
            level: FeatureLevel::DataType,
            status: crate::model::FeatureStatus::Learning,
            stats: Default::default(),
        };
        let registry = GeneratorRegistry::standard();
        let s = make_type_expression_sketch(
            &feature,
            "ARRAY",
            "[1, <RANDOM_INT>]",
            &registry,
            &mut rng(5),
        )
        .unwrap();
        s.check_invariants().unwrap();
        assert_eq!(s.context_statements[0], "CREATE TABLE TAB (COL ARRAY);");
        assert!(s.context_statements[1].starts_with("INSERT INTO TAB (COL) VALUES ([1, "));
        assert!(!s.context_statements[1].contains("<RANDOM_INT>"));
        assert_eq!(s.holes[0].1, HoleKind::LeafExpression);
    }
}
