use serde::{Deserialize, Serialize};

use super::graph::{KnowledgeGraph, MeasurementRecord};
use crate::catalog::TechnologyCategory;
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("unknown filter field {0:?}")]
    UnknownFilterField(String),
    #[error("invalid value {value:?} for filter {field}: {reason}")]
    InvalidFilterValue {
        field: String,
        value: String,
        reason: String,
    },
}

/// Conjunctive record filter; unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub category: Option<TechnologyCategory>,
    pub material: Option<String>,
    pub fom_id: Option<String>,
    pub min_value: Option<f64>,
    pub max_value: Option<f64>,
}

impl RecordFilter {
    pub const FIELDS: [&'static str; 6] = ["category", "material", "fom", "fom_id", "min_value", "max_value"];

    /// Builds a filter from `key=value` style pairs. `fom_id` is accepted as
    /// an alias of `fom`.
    pub fn from_pairs<K, V, I>(pairs: I) -> Result<Self, QueryError>
    where
        K: AsRef<str>,
        V: AsRef<str>,
        I: IntoIterator<Item = (K, V)>,
    {
        let mut filter = RecordFilter::default();
        for (key, value) in pairs {
            let (key, value) = (key.as_ref(), value.as_ref());
            let invalid = |reason: String| QueryError::InvalidFilterValue {
                field: key.to_string(),
                value: value.to_string(),
                reason,
            };
            let number = || {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(e.to_string()))
                    .and_then(|v| if v.is_nan() { Err(invalid("NaN".into())) } else { Ok(v) })
            };
            match key {
                "category" => filter.category = Some(value.parse().map_err(|e| invalid(format!("{e}")))?),
                "material" => filter.material = Some(value.to_string()),
                "fom" | "fom_id" => filter.fom_id = Some(value.to_string()),
                "min_value" => filter.min_value = Some(number()?),
                "max_value" => filter.max_value = Some(number()?),
                other => return Err(QueryError::UnknownFilterField(other.to_string())),
            }
        }
        Ok(filter)
    }

    pub fn matches(&self, graph: &KnowledgeGraph, record: &MeasurementRecord) -> bool {
        if let Some(category) = self.category {
            let fom_hit = graph
                .fom(&record.fom_id)
                .and_then(|f| f.category.technology())
                .is_some_and(|c| c == category);
            let material_hit = graph
                .material(&record.material_id)
                .is_some_and(|m| m.categories.contains(&category));
            if !fom_hit && !material_hit {
                return false;
            }
        }
        if let Some(material) = &self.material {
            if normalize(material) != normalize(&record.material_id) {
                return false;
            }
        }
        if let Some(fom) = &self.fom_id {
            if fom != &record.fom_id {
                return false;
            }
        }
        if self.min_value.is_some_and(|min| record.value < min) {
            return false;
        }
        if self.max_value.is_some_and(|max| record.value > max) {
            return false;
        }
        true
    }
}

/// Records passing `filter`, in provenance order.
pub fn query_records<'g>(graph: &'g KnowledgeGraph, filter: &RecordFilter) -> Vec<&'g MeasurementRecord> {
    graph.measurements.iter().filter(|r| filter.matches(graph, r)).collect()
}

/// Queries several graphs as one: results are merged in provenance order and
/// records identical across graphs are reported once.
pub fn query_union<'g, I>(graphs: I, filter: &RecordFilter) -> Vec<MeasurementRecord>
where
    I: IntoIterator<Item = &'g KnowledgeGraph>,
{
    let mut out: Vec<MeasurementRecord> = graphs
        .into_iter()
        .flat_map(|g| query_records(g, filter))
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        a.provenance
            .cmp(&b.provenance)
            .then_with(|| a.fom_id.cmp(&b.fom_id))
            .then_with(|| a.material_id.cmp(&b.material_id))
            .then_with(|| a.value.total_cmp(&b.value))
    });
    out.dedup();
    out
}
