use carbon_tables::fixtures::synthetic_corpus;
use carbon_tables::{
    consolidate_corpus, parse_document, AnnotatedDocument, AnnotatedTable, ConsolidationOptions, KnowledgeGraph,
    MaterialBase,
};
use proptest::prelude::*;

fn cell() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec!["Pure Ultem HFM", "MMHFM", "Matrimid 5218", "PIM-1", "Zeolite 13X"])
            .prop_map(String::from),
        "-?[0-9]{1,3}(\\.[0-9]{1,3})?",
        "\\PC{0,10}",
    ]
}

fn header() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec![
            "Material",
            "CO2 (GPU)",
            "CO2/N2 Selectivity",
            "Temperature (K)",
            "pH"
        ])
        .prop_map(String::from),
        "\\PC{0,12}",
    ]
}

fn document() -> impl Strategy<Value = AnnotatedDocument> {
    let table = (1usize..5).prop_flat_map(|cols| {
        (
            "\\PC{0,16}",
            prop::collection::vec(header(), cols),
            prop::collection::vec(prop::collection::vec(cell(), cols), 0..5),
        )
    });
    ("[a-z][a-z0-9-]{0,10}", prop::collection::vec(table, 0..4)).prop_map(|(doc_id, tables)| AnnotatedDocument {
        doc_id,
        source_filename: String::new(),
        tables: tables
            .into_iter()
            .enumerate()
            .map(|(table_index, (caption, header_row, body))| AnnotatedTable {
                table_index,
                caption,
                header_row,
                body,
            })
            .collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn documents_survive_json(doc in document()) {
        let text = doc.to_json();
        let mut back = parse_document(text.as_bytes(), "doc.json").unwrap();
        prop_assert_eq!(&back.source_filename, "doc.json");
        back.source_filename.clear();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn graphs_survive_json(docs in prop::collection::vec(document(), 1..4)) {
        let graph = consolidate_corpus(&docs, &MaterialBase::shipped(), ConsolidationOptions::default());
        prop_assert!(graph.validate().is_ok());
        let bytes = graph.to_json_bytes();
        let back = KnowledgeGraph::from_json_slice(&bytes).unwrap();
        prop_assert_eq!(&back, &graph);
        prop_assert_eq!(back.to_json_bytes(), bytes);
    }
}

#[test]
fn synthetic_graph_survives_json() {
    let graph = consolidate_corpus(
        &synthetic_corpus(20, 5),
        &MaterialBase::shipped(),
        ConsolidationOptions::default(),
    );
    assert!(!graph.measurements.is_empty());
    let back = KnowledgeGraph::from_json_slice(&graph.to_json_bytes()).unwrap();
    assert_eq!(back, graph);
}

#[test]
fn material_base_file_survives_json() {
    let mb = MaterialBase::shipped();
    let text = serde_json::to_string_pretty(&mb.to_file()).unwrap();
    let again = MaterialBase::from_json_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&again.to_file()).unwrap(), text);
    assert_eq!(again.catalog().definitions(), mb.catalog().definitions());
}
