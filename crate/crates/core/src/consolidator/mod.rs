//! Consolidation of annotated tables into measurement records.
//!
//! For each table the first column is resolved against the material base.
//! A table whose resolved materials are all reference entries is skipped
//! unless [`ConsolidationOptions::process_known_materials`] is set. Every
//! other header column is matched to a catalog field:
//!
//! * no species in the header: exact name or synonym lookup;
//! * one species: all fields carrying that species, narrowed to those
//!   named by the header text when any are, then the lowest
//!   `catalog_position` wins;
//! * two or more species: the single field with exactly that species set.
//!
//! State-variable columns (temperature, pressure, pH) annotate every record
//! of their row instead of producing records. Anything that cannot be
//! resolved, matched or parsed lands in the skip log; consolidation itself
//! never fails.

mod features;
mod graph;
mod query;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{FomDefinition, MaterialBase, MaterialRecord};
use crate::ingest::{AnnotatedDocument, AnnotatedTable};
use crate::matcher::{parse_numeric_cell, HeaderAnalysis, SpeciesMatcher};

pub use features::{encode_features, FeatureCollision, FeatureMatrix, FeatureVector};
pub use graph::{
    DocumentNode, FomNode, KnowledgeGraph, MaterialNode, MeasurementRecord, Novelty, Provenance, SkipEntry,
    SkipLocation, SkipReason,
};
pub use query::{query_records, query_union, QueryError, RecordFilter};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsolidationOptions {
    /// Consolidate tables even when every material in them is already a
    /// reference entry.
    #[serde(default)]
    pub process_known_materials: bool,
}

/// How a header column was matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchPath {
    /// No species in the header; display name or synonym lookup.
    ExactName,
    /// One species. `candidates` counts the fields that survived narrowing.
    SingleSpecies { candidates: usize, narrowed: bool },
    /// Two or more species, matched by species set.
    SpeciesSet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeaderMatch<'a> {
    Value {
        fom: &'a FomDefinition,
        unit: String,
        path: MatchPath,
    },
    StateVariable {
        fom: &'a FomDefinition,
        path: MatchPath,
    },
    Unmatched,
}

/// Output of one table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableOutcome {
    pub records: Vec<MeasurementRecord>,
    pub skips: Vec<SkipEntry>,
    /// Materials resolved in a table that was not skipped.
    pub materials: BTreeSet<String>,
    /// Value fields matched in a table that was not skipped.
    pub foms: BTreeSet<String>,
}

/// Runs the decision tree against one material-base snapshot.
#[derive(Debug, Clone)]
pub struct Consolidator<'a> {
    mb: &'a MaterialBase,
    species: SpeciesMatcher,
    options: ConsolidationOptions,
}

impl<'a> Consolidator<'a> {
    pub fn new(mb: &'a MaterialBase, options: ConsolidationOptions) -> Self {
        Self {
            mb,
            species: SpeciesMatcher::new(mb.catalog().species_dictionary()),
            options,
        }
    }

    pub fn analyze_header(&self, header: &str) -> HeaderAnalysis {
        self.species.analyze_header(header)
    }

    pub fn match_header(&self, header: &str) -> HeaderMatch<'a> {
        let analysis = self.analyze_header(header);
        let catalog = self.mb.catalog();
        let found: Option<(&'a FomDefinition, MatchPath)> = match analysis.species_found.len() {
            0 => catalog
                .fom_by_exact_name(&analysis.stripped_text)
                .map(|f| (f, MatchPath::ExactName)),
            1 => {
                let all = catalog
                    .foms_containing_species(&analysis.species_found[0])
                    .unwrap_or_default();
                let named: Vec<_> = all
                    .iter()
                    .copied()
                    .filter(|f| f.is_named(&analysis.stripped_text))
                    .collect();
                let (survivors, narrowed) = if named.is_empty() { (all, false) } else { (named, true) };
                // Survivors are in catalog order, so the first has the lowest position.
                survivors.first().map(|&f| {
                    (
                        f,
                        MatchPath::SingleSpecies {
                            candidates: survivors.len(),
                            narrowed,
                        },
                    )
                })
            }
            _ => catalog
                .fom_by_species_set(&analysis.species_found)
                .ok()
                .flatten()
                .map(|f| (f, MatchPath::SpeciesSet)),
        };
        match found {
            None => HeaderMatch::Unmatched,
            Some((fom, path)) if fom.is_state_variable => HeaderMatch::StateVariable { fom, path },
            Some((fom, path)) => HeaderMatch::Value {
                fom,
                unit: analysis.unit.unwrap_or_else(|| fom.canonical_unit.clone()),
                path,
            },
        }
    }

    fn novelty(&self, material: &MaterialRecord, fom_id: &str, value: f64) -> Novelty {
        let confirms = material.reference
            && material
                .fom_values
                .get(fom_id)
                .is_some_and(|r| (r.value - value).abs() <= 1e-9 * r.value.abs().max(1.0));
        if confirms {
            Novelty::ConfirmsReference
        } else {
            Novelty::New
        }
    }

    pub fn consolidate_table(&self, doc_id: &str, table: &AnnotatedTable) -> TableOutcome {
        let mut out = TableOutcome::default();
        let at = |row: Option<usize>, col: Option<usize>| SkipLocation {
            doc: doc_id.to_string(),
            table: Some(table.table_index),
            row,
            col,
        };

        let mut rows: Vec<(usize, &'a MaterialRecord)> = Vec::new();
        for (r, cells) in table.body.iter().enumerate() {
            match self.mb.lookup_material(&cells[0]) {
                Some(m) => rows.push((r, m)),
                None => out.skips.push(SkipEntry {
                    provenance: at(Some(r), Some(0)),
                    reason: SkipReason::UnresolvedMaterial { cell: cells[0].clone() },
                }),
            }
        }

        let all_known = !rows.is_empty() && rows.iter().all(|(_, m)| m.reference);
        if all_known && !self.options.process_known_materials {
            out.skips.push(SkipEntry {
                provenance: at(None, None),
                reason: SkipReason::TableSkippedKnownMaterials,
            });
            return out;
        }
        out.materials = rows.iter().map(|(_, m)| m.id().to_string()).collect();

        let mut value_cols = Vec::new();
        let mut state_cols = Vec::new();
        for (c, header) in table.header_row.iter().enumerate().skip(1) {
            match self.match_header(header) {
                HeaderMatch::Value { fom, unit, path } => {
                    if let MatchPath::SpeciesSet = path {
                        debug_assert!(fom.species.len() >= 2);
                    }
                    out.foms.insert(fom.fom_id.clone());
                    value_cols.push((c, fom, unit));
                }
                HeaderMatch::StateVariable { fom, .. } => state_cols.push((c, fom)),
                HeaderMatch::Unmatched => out.skips.push(SkipEntry {
                    provenance: at(None, Some(c)),
                    reason: SkipReason::UnmatchedHeader { header: header.clone() },
                }),
            }
        }

        for &(r, material) in &rows {
            let cells = &table.body[r];
            let mut state = BTreeMap::new();
            for &(c, fom) in &state_cols {
                match parse_numeric_cell(&cells[c]) {
                    Some(v) => {
                        state.entry(fom.fom_id.clone()).or_insert(v.value);
                    }
                    None => out.skips.push(SkipEntry {
                        provenance: at(Some(r), Some(c)),
                        reason: SkipReason::UnparseableValue { cell: cells[c].clone() },
                    }),
                }
            }
            for (c, fom, unit) in &value_cols {
                match parse_numeric_cell(&cells[*c]) {
                    Some(v) => out.records.push(MeasurementRecord {
                        material_id: material.id().to_string(),
                        fom_id: fom.fom_id.clone(),
                        value: v.value,
                        uncertainty: v.uncertainty,
                        unit: unit.clone(),
                        state_variables: state.clone(),
                        provenance: Provenance {
                            doc: doc_id.to_string(),
                            table: table.table_index,
                            row: r,
                            col: *c,
                        },
                        novelty: self.novelty(material, &fom.fom_id, v.value),
                    }),
                    None => out.skips.push(SkipEntry {
                        provenance: at(Some(r), Some(*c)),
                        reason: SkipReason::UnparseableValue {
                            cell: cells[*c].clone(),
                        },
                    }),
                }
            }
        }
        out
    }

    /// Consolidates a corpus on the current thread.
    pub fn consolidate_corpus(&self, documents: &[AnnotatedDocument]) -> KnowledgeGraph {
        let (docs, dup_skips) = order_documents(documents);
        let outcomes: Vec<TableOutcome> = docs
            .iter()
            .flat_map(|d| d.tables.iter().map(move |t| (d, t)))
            .map(|(d, t)| self.consolidate_table(&d.doc_id, t))
            .collect();
        self.assemble(&docs, outcomes, dup_skips)
    }

    /// Same result as [`Consolidator::consolidate_corpus`], with tables
    /// spread over `threads` workers.
    pub fn consolidate_corpus_parallel(&self, documents: &[AnnotatedDocument], threads: usize) -> KnowledgeGraph {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("thread pool");
        let (docs, dup_skips) = order_documents(documents);
        let jobs: Vec<(&AnnotatedDocument, &AnnotatedTable)> = docs
            .iter()
            .flat_map(|d| d.tables.iter().map(move |t| (*d, t)))
            .collect();
        let outcomes: Vec<TableOutcome> = pool.install(|| {
            jobs.par_iter()
                .map(|(d, t)| self.consolidate_table(&d.doc_id, t))
                .collect()
        });
        self.assemble(&docs, outcomes, dup_skips)
    }

    fn assemble(
        &self,
        docs: &[&AnnotatedDocument],
        outcomes: Vec<TableOutcome>,
        mut skips: Vec<SkipEntry>,
    ) -> KnowledgeGraph {
        let mut materials = BTreeSet::new();
        let mut foms = BTreeSet::new();
        let mut measurements = Vec::new();
        for outcome in outcomes {
            materials.extend(outcome.materials);
            foms.extend(outcome.foms);
            measurements.extend(outcome.records);
            skips.extend(outcome.skips);
        }
        measurements.sort_by(|a, b| a.provenance.cmp(&b.provenance));
        skips.sort_by(|a, b| a.provenance.cmp(&b.provenance));

        let catalog = self.mb.catalog();
        let mut fom_nodes: Vec<FomNode> = foms
            .iter()
            .filter_map(|id| catalog.get(id))
            .map(|f| FomNode {
                id: f.fom_id.clone(),
                display_name: f.display_name.clone(),
                category: f.category,
                unit: f.canonical_unit.clone(),
                catalog_position: f.catalog_position,
            })
            .collect();
        fom_nodes.sort_by_key(|f| f.catalog_position);

        KnowledgeGraph {
            materials: materials
                .iter()
                .filter_map(|id| self.mb.material(id))
                .map(|m| MaterialNode {
                    id: m.id().to_string(),
                    smiles: m.smiles.clone(),
                    categories: m.categories.clone(),
                })
                .collect(),
            foms: fom_nodes,
            documents: docs
                .iter()
                .map(|d| DocumentNode {
                    doc: d.doc_id.clone(),
                    tables: d.tables.len(),
                })
                .collect(),
            measurements,
            skips,
        }
    }
}

/// Sorts documents by doc_id and drops repeated ids after the first.
fn order_documents(documents: &[AnnotatedDocument]) -> (Vec<&AnnotatedDocument>, Vec<SkipEntry>) {
    let mut docs: Vec<&AnnotatedDocument> = documents.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut kept: Vec<&AnnotatedDocument> = Vec::with_capacity(docs.len());
    let mut skips = Vec::new();
    for doc in docs {
        if kept.last().is_some_and(|k| k.doc_id == doc.doc_id) {
            skips.push(SkipEntry {
                provenance: SkipLocation {
                    doc: doc.doc_id.clone(),
                    table: None,
                    row: None,
                    col: None,
                },
                reason: SkipReason::DuplicateDocument,
            });
        } else {
            kept.push(doc);
        }
    }
    (kept, skips)
}

/// Convenience wrapper: consolidates `documents` with a fresh [`Consolidator`].
pub fn consolidate_corpus(
    documents: &[AnnotatedDocument],
    mb: &MaterialBase,
    options: ConsolidationOptions,
) -> KnowledgeGraph {
    Consolidator::new(mb, options).consolidate_corpus(documents)
}
