use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{FomCategory, TechnologyCategory};

/// Cell coordinates of a measurement: body row, header column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub doc: String,
    pub table: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Novelty {
    New,
    ConfirmsReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    #[serde(rename = "material")]
    pub material_id: String,
    #[serde(rename = "fom")]
    pub fom_id: String,
    pub value: f64,
    pub uncertainty: Option<f64>,
    pub unit: String,
    /// Keyed by state-variable fom_id (`temperature_k`, `pressure_bar`, `ph`).
    #[serde(rename = "state")]
    pub state_variables: BTreeMap<String, f64>,
    pub provenance: Provenance,
    pub novelty: Novelty,
}

/// Where a skip happened. Table-level skips carry no row, header-level
/// skips no row, row-level skips no column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SkipLocation {
    pub doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SkipReason {
    UnresolvedMaterial { cell: String },
    TableSkippedKnownMaterials,
    UnmatchedHeader { header: String },
    UnparseableValue { cell: String },
    DuplicateDocument,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub provenance: SkipLocation,
    #[serde(flatten)]
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterialNode {
    pub id: String,
    pub smiles: String,
    pub categories: Vec<TechnologyCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FomNode {
    pub id: String,
    pub display_name: String,
    pub category: FomCategory,
    pub unit: String,
    pub catalog_position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentNode {
    pub doc: String,
    pub tables: usize,
}

/// Materials, FoMs and documents as nodes; measurements as edges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub materials: Vec<MaterialNode>,
    pub foms: Vec<FomNode>,
    pub documents: Vec<DocumentNode>,
    pub measurements: Vec<MeasurementRecord>,
    pub skips: Vec<SkipEntry>,
}

impl KnowledgeGraph {
    pub fn material(&self, id: &str) -> Option<&MaterialNode> {
        self.materials
            .binary_search_by(|m| m.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.materials[i])
    }

    pub fn fom(&self, id: &str) -> Option<&FomNode> {
        self.foms.iter().find(|f| f.id == id)
    }

    /// Canonical file encoding; identical graphs give identical bytes.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("graphs serialize");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_slice(bytes: &[u8]) -> serde_json::Result<Self> {
        serde_json::from_slice(bytes)
    }

    /// Checks that every edge endpoint is a node and that no cell is both
    /// an edge and a skip.
    pub fn validate(&self) -> Result<(), String> {
        for m in &self.measurements {
            if self.material(&m.material_id).is_none() {
                return Err(format!("edge material {:?} has no node", m.material_id));
            }
            if self.fom(&m.fom_id).is_none() {
                return Err(format!("edge fom {:?} has no node", m.fom_id));
            }
            if !self.documents.iter().any(|d| d.doc == m.provenance.doc) {
                return Err(format!("edge document {:?} has no node", m.provenance.doc));
            }
        }
        let edge_cells: std::collections::HashSet<_> = self
            .measurements
            .iter()
            .map(|m| {
                let p = &m.provenance;
                (p.doc.as_str(), Some(p.table), Some(p.row), Some(p.col))
            })
            .collect();
        for s in &self.skips {
            let p = &s.provenance;
            if edge_cells.contains(&(p.doc.as_str(), p.table, p.row, p.col)) {
                return Err(format!("cell {p:?} is both an edge and a skip"));
            }
        }
        Ok(())
    }
}
