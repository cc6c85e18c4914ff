//! Figure-of-merit extraction from annotated scientific tables.
//!
//! The pipeline is: [`ingest`] parses annotated-table documents, the
//! [`consolidator`] runs the header/material decision tree against a
//! [`catalog::MaterialBase`] using the [`matcher`] primitives, and the result
//! is a [`consolidator::KnowledgeGraph`] plus feature vectors.

pub mod catalog;
pub mod consolidator;
pub mod fixtures;
pub mod ingest;
pub mod matcher;
mod text;

pub use catalog::{CatalogError, FomCatalog, FomDefinition, MaterialBase, MaterialRecord, TechnologyCategory};
pub use consolidator::{
    consolidate_corpus, encode_features, query_records, ConsolidationOptions, Consolidator, FeatureMatrix,
    KnowledgeGraph, MeasurementRecord, RecordFilter,
};
pub use ingest::{parse_archive, parse_document, parse_upload, AnnotatedDocument, AnnotatedTable, IngestError};
pub use text::normalize;

use std::path::Path;

/// Output of one consolidation run; the same files are served for finished jobs.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub graph: KnowledgeGraph,
    pub features: FeatureMatrix,
}

impl PipelineOutput {
    pub fn build(documents: &[AnnotatedDocument], mb: &MaterialBase, options: ConsolidationOptions) -> Self {
        let graph = consolidate_corpus(documents, mb, options);
        let features = encode_features(&graph, mb);
        Self { graph, features }
    }

    /// Writes `graph.json`, `features.json` and `features.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("graph.json"), self.graph.to_json_bytes())?;
        std::fs::write(dir.join("features.json"), self.features.to_json_bytes())?;
        std::fs::write(dir.join("features.csv"), self.features.to_csv_bytes())?;
        Ok(())
    }
}
