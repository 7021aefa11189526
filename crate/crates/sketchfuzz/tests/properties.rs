//! Property tests for the store, the response format, and sketch filling.

use proptest::prelude::*;

use sketchfuzz::model::{
    normalize_fragment_text, FeatureLevel, FragmentOrigin, FragmentStore, HoleKind, SchemaModel,
    Sketch, Validity,
};
use sketchfuzz::synthesizer::{parse_response, render_csv_row};
use sketchfuzz::validator::fill_sketch;

fn fragment_text() -> impl Strategy<Value = String> {
    // Printable fragments without newlines; commas and quotes allowed.
    proptest::string::string_regex("[ -~]{1,40}").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Adding any fragment N times leaves exactly one copy, whatever the
    /// whitespace variation.
    #[test]
    fn store_dedup_is_idempotent(text in fragment_text(), pads in 0usize..4) {
        let trimmed = normalize_fragment_text(&text);
        prop_assume!(!trimmed.is_empty());
        let mut store = FragmentStore::new();
        let f = store.add_feature(FeatureLevel::Expression, "prop");
        let variants = [
            text.clone(),
            format!("{}{}", " ".repeat(pads), text),
            text.split_whitespace().collect::<Vec<_>>().join("  "),
        ];
        for v in &variants {
            for _ in 0..3 {
                store.add_fragment(
                    f,
                    HoleKind::LeafExpression,
                    v,
                    Validity::Candidate,
                    FragmentOrigin::Synthesized,
                );
            }
        }
        prop_assert_eq!(store.fragments().len(), 1);
    }

    /// Serialize then deserialize preserves the fragment multiset and the
    /// feature statuses.
    #[test]
    fn store_round_trip(texts in proptest::collection::vec(fragment_text(), 1..8)) {
        let mut store = FragmentStore::new();
        let f = store.add_feature(FeatureLevel::DataType, "rt");
        store.set_feature_status(f, sketchfuzz::model::FeatureStatus::Learned);
        for (i, t) in texts.iter().enumerate() {
            if normalize_fragment_text(t).is_empty() {
                continue;
            }
            let validity = if i % 2 == 0 { Validity::Valid } else { Validity::Invalid };
            store.add_fragment(f, HoleKind::TypedLiteral, t, validity, FragmentOrigin::Synthesized);
        }
        let mut buf = Vec::new();
        store.save(&mut buf).unwrap();
        let loaded = FragmentStore::load(buf.as_slice()).unwrap();
        prop_assert_eq!(store.fragments().len(), loaded.fragments().len());
        for (a, b) in store.fragments().iter().zip(loaded.fragments()) {
            prop_assert_eq!(&a.text, &b.text);
            prop_assert_eq!(a.validity, b.validity);
        }
        prop_assert_eq!(
            loaded.features()[0].status,
            sketchfuzz::model::FeatureStatus::Learned
        );
    }

    /// Rendered CSV rows parse back to the identical (index, fragment) list.
    #[test]
    fn csv_round_trip(rows in proptest::collection::vec((0usize..4, fragment_text()), 1..10)) {
        let rows: Vec<(usize, String)> = rows
            .into_iter()
            .map(|(i, f)| (i, f.trim().to_string()))
            .filter(|(_, f)| !f.is_empty() && !f.starts_with("```"))
            .collect();
        let text: String = rows
            .iter()
            .map(|(i, f)| render_csv_row(*i, f))
            .collect::<Vec<_>>()
            .join("\n");
        let parsed = parse_response(&text, 4);
        prop_assert_eq!(parsed, rows);
    }

    /// Filling the clause sketch with arbitrary subsets of empty holes never
    /// leaves placeholders, double commas, or a comma before the close paren.
    #[test]
    fn clause_fill_never_leaves_bad_commas(mask in 0u8..16) {
        let sketch = Sketch {
            context_statements: vec![],
            holed_statements: vec!["CREATE TABLE {0} TAB (COL INT {1}, {2}) {3};".into()],
            holes: vec![
                (0, HoleKind::TableOption),
                (1, HoleKind::ColumnConstraint),
                (2, HoleKind::TableConstraint),
                (3, HoleKind::StatementSuffix),
            ],
            feature_id: 1,
            schema: SchemaModel::default(),
        };
        let fills = ["IF NOT EXISTS", "NOT NULL", "PRIMARY KEY (COL)", "WITH (x = 1)"];
        let assignment: Vec<(usize, String)> = (0..4)
            .map(|i| {
                let text = if mask & (1 << i) != 0 { fills[i] } else { "" };
                (i, text.to_string())
            })
            .collect();
        let filled = fill_sketch(&sketch, &assignment).unwrap();
        let stmt = &filled[0];
        prop_assert!(!stmt.contains('{'), "placeholder left: {}", stmt);
        prop_assert!(!stmt.contains(",,"), "double comma: {}", stmt);
        prop_assert!(!stmt.contains(", )"), "dangling comma: {}", stmt);
        prop_assert!(!stmt.contains(",)"), "dangling comma: {}", stmt);
        prop_assert!(stmt.starts_with("CREATE TABLE"), "{}", stmt);
    }
}
