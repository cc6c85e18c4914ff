//! Built-in documents for demos and tests.

use crate::ingest::{AnnotatedDocument, AnnotatedTable};

/// Permeance and selectivity of a pure Ultem hollow-fiber membrane and a
/// MIL-53 mixed-matrix one, as an annotated-table document.
pub const HOLLOW_FIBER_DOCUMENT: &str = include_str!("../data/hollow_fiber.json");

pub fn hollow_fiber() -> AnnotatedDocument {
    crate::ingest::parse_document(HOLLOW_FIBER_DOCUMENT.as_bytes(), "hollow_fiber.json")
        .expect("bundled fixture parses")
}

const MATERIALS: [&str; 8] = [
    "Pure Ultem HFM",
    "MMHFM",
    "Mg-MOF-74",
    "UiO-66",
    "Diethanolamine",
    "THF hydrate",
    "CaO",
    "not-a-known-material",
];

const HEADERS: [&str; 8] = [
    "CO2 (GPU)",
    "CO2/N2 Selectivity",
    "CO2 uptake (mmol/g)",
    "BET surface area (m2/g)",
    "Temperature (K)",
    "absorption flux",
    "Thickness (µm)",
    "Hydrate mass (g)",
];

/// Deterministic synthetic corpus: `docs` documents of `tables_per_doc`
/// tables each, mixing resolvable and unknown materials, matched and
/// unmatched headers, and unparseable cells.
pub fn synthetic_corpus(docs: usize, tables_per_doc: usize) -> Vec<AnnotatedDocument> {
    (0..docs)
        .map(|d| AnnotatedDocument {
            doc_id: format!("synthetic-{d:04}"),
            source_filename: format!("synthetic-{d:04}.json"),
            tables: (0..tables_per_doc).map(|t| synthetic_table(d, t)).collect(),
        })
        .collect()
}

fn synthetic_table(doc: usize, index: usize) -> AnnotatedTable {
    let seed = doc * 31 + index * 7;
    let n_cols = 2 + seed % 5;
    let n_rows = 1 + (seed / 3) % 6;
    let mut header_row = vec!["Material".to_string()];
    header_row.extend((1..n_cols).map(|c| HEADERS[(seed + c) % HEADERS.len()].to_string()));
    let body = (0..n_rows)
        .map(|r| {
            let mut row = vec![MATERIALS[(seed + r) % MATERIALS.len()].to_string()];
            row.extend((1..n_cols).map(|c| match (seed + r * 5 + c) % 11 {
                0 => "n.d.".to_string(),
                1 => format!("{}-{}", r + c, r + c + 4),
                2 => format!("{}.{} ± 0.{}", c, r, c),
                k => format!("{}.{}", k * (r + 1), (seed + c) % 10),
            }));
            row
        })
        .collect();
    AnnotatedTable {
        table_index: index,
        caption: format!("synthetic table {index} of document {doc}"),
        header_row,
        body,
    }
}
