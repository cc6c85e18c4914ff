use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{KnowledgeGraph, Provenance};
use crate::catalog::{MaterialBase, TechnologyCategory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub material_id: String,
    /// One slot per non-state catalog field; meaningful only where `mask` is set.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    /// Indexed like [`TechnologyCategory::ALL`].
    pub category_onehot: [bool; 5],
}

/// Several edges supplied the same (material, field) slot; their mean was used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCollision {
    pub material_id: String,
    pub fom_id: String,
    pub count: usize,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub fom_ids: Vec<String>,
    pub categories: Vec<TechnologyCategory>,
    pub vectors: Vec<FeatureVector>,
    pub collisions: Vec<FeatureCollision>,
}

impl FeatureMatrix {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("features serialize");
        bytes.push(b'\n');
        bytes
    }

    /// CSV with a `material` column followed by one column per fom_id;
    /// unpopulated slots are empty cells.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["material".to_string()];
        header.extend(self.fom_ids.iter().cloned());
        writer.write_record(&header).expect("in-memory write");
        for v in &self.vectors {
            let mut row = vec![v.material_id.clone()];
            row.extend(
                v.values
                    .iter()
                    .zip(&v.mask)
                    .map(|(x, &set)| if set { x.to_string() } else { String::new() }),
            );
            writer.write_record(&row).expect("in-memory write");
        }
        writer.into_inner().expect("in-memory flush")
    }
}

/// One vector per material node, slots laid out in catalog order.
pub fn encode_features(graph: &KnowledgeGraph, mb: &MaterialBase) -> FeatureMatrix {
    let fields: Vec<&str> = mb.catalog().value_fields().map(|f| f.fom_id.as_str()).collect();
    let slot: BTreeMap<&str, usize> = fields.iter().enumerate().map(|(i, &f)| (f, i)).collect();

    let mut supplied: BTreeMap<(&str, usize), Vec<(f64, &Provenance)>> = BTreeMap::new();
    for m in &graph.measurements {
        if let Some(&i) = slot.get(m.fom_id.as_str()) {
            supplied
                .entry((m.material_id.as_str(), i))
                .or_default()
                .push((m.value, &m.provenance));
        }
    }

    let mut collisions = Vec::new();
    let vectors = graph
        .materials
        .iter()
        .map(|node| {
            let mut values = vec![0.0; fields.len()];
            let mut mask = vec![false; fields.len()];
            for (i, field) in fields.iter().enumerate() {
                let Some(edges) = supplied.get(&(node.id.as_str(), i)) else {
                    continue;
                };
                values[i] = edges.iter().map(|(v, _)| v).sum::<f64>() / edges.len() as f64;
                mask[i] = true;
                if edges.len() > 1 {
                    collisions.push(FeatureCollision {
                        material_id: node.id.clone(),
                        fom_id: field.to_string(),
                        count: edges.len(),
                        provenance: edges.iter().map(|(_, p)| (*p).clone()).collect(),
                    });
                }
            }
            let mut category_onehot = [false; 5];
            for c in &node.categories {
                category_onehot[c.index()] = true;
            }
            FeatureVector {
                material_id: node.id.clone(),
                values,
                mask,
                category_onehot,
            }
        })
        .collect();

    FeatureMatrix {
        fom_ids: fields.iter().map(|s| s.to_string()).collect(),
        categories: TechnologyCategory::ALL.to_vec(),
        vectors,
        collisions,
    }
}
