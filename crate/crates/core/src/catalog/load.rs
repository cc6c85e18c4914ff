use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    CatalogError, FomCatalog, FomCategory, FomDefinition, MaterialBase, MaterialRecord, ReferenceTable,
    SpeciesDictionary,
};
use crate::text::normalize;

/// On-disk layout of a material base file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialBaseFile {
    pub materials: Vec<MaterialRecord>,
    pub fom_catalog: Vec<FomDefinition>,
    pub species_dictionary: SpeciesDictionary,
    pub reference_entry_count: usize,
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> CatalogError {
    CatalogError::InvariantViolation {
        path: path.into(),
        message: message.into(),
    }
}

impl MaterialBaseFile {
    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let parsed: Result<Self, _> = serde_path_to_error::deserialize(&mut de);
        let file = match parsed {
            Ok(file) => file,
            Err(err) => {
                let path = err.path().to_string();
                let inner = err.into_inner();
                return Err(if inner.is_data() {
                    CatalogError::SchemaViolation {
                        path,
                        message: inner.to_string(),
                    }
                } else {
                    CatalogError::MalformedFile {
                        line: inner.line(),
                        column: inner.column(),
                        message: inner.to_string(),
                    }
                });
            }
        };
        de.end().map_err(|e| CatalogError::MalformedFile {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(file)
    }

    /// Validates every invariant and builds the lookup indices.
    pub fn build(self) -> Result<MaterialBase, CatalogError> {
        let catalog = build_catalog(self.fom_catalog, self.species_dictionary)?;

        let mut by_name: HashMap<String, usize> = HashMap::new();
        let mut reference_entries = Vec::new();
        for (i, record) in self.materials.iter().enumerate() {
            let at = format!("materials[{i}]");
            if record.canonical_name.trim().is_empty() {
                return Err(violation(format!("{at}.canonical_name"), "canonical name is empty"));
            }
            for (j, name) in record.names().enumerate() {
                let field = if j == 0 {
                    format!("{at}.canonical_name")
                } else {
                    format!("{at}.synonyms[{}]", j - 1)
                };
                let key = normalize(name);
                if key.is_empty() {
                    return Err(violation(field, "name is empty"));
                }
                match by_name.get(&key) {
                    Some(&owner) if owner != i => {
                        return Err(violation(
                            field,
                            format!(
                                "{name:?} collides with material {:?}",
                                self.materials[owner].canonical_name
                            ),
                        ));
                    }
                    Some(_) if j == 0 => {}
                    _ => {
                        by_name.insert(key, i);
                    }
                }
            }
            for fom_id in record.fom_values.keys() {
                if catalog.get(fom_id).is_none() {
                    return Err(violation(
                        format!("{at}.fom_values.{fom_id}"),
                        format!("unknown figure of merit {fom_id:?}"),
                    ));
                }
            }
            if record.reference {
                reference_entries.push(i);
            }
        }

        if reference_entries.len() != self.reference_entry_count {
            return Err(violation(
                "reference_entry_count",
                format!(
                    "declares {} entries but {} materials are flagged as reference",
                    self.reference_entry_count,
                    reference_entries.len()
                ),
            ));
        }

        Ok(MaterialBase {
            materials: self.materials,
            catalog,
            reference: ReferenceTable {
                entries: reference_entries,
                entry_count: self.reference_entry_count,
            },
            by_name,
        })
    }
}

fn build_catalog(
    definitions: Vec<FomDefinition>,
    species_dictionary: SpeciesDictionary,
) -> Result<FomCatalog, CatalogError> {
    let mut surface_owner: HashMap<String, &str> = HashMap::new();
    for (symbol, forms) in &species_dictionary {
        if symbol.trim().is_empty() {
            return Err(violation("species_dictionary", "empty species symbol"));
        }
        for (k, form) in forms.iter().enumerate() {
            let key = normalize(form);
            if key.is_empty() {
                return Err(violation(
                    format!("species_dictionary.{symbol}[{k}]"),
                    "empty surface form",
                ));
            }
            if let Some(other) = surface_owner.insert(key, symbol) {
                if other != symbol {
                    return Err(violation(
                        format!("species_dictionary.{symbol}[{k}]"),
                        format!("surface form {form:?} also denotes {other}"),
                    ));
                }
            }
        }
    }

    let mut by_id = HashMap::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut by_species_set: HashMap<BTreeSet<String>, usize> = HashMap::new();
    for (i, def) in definitions.iter().enumerate() {
        let at = format!("fom_catalog[{i}]");
        if def.fom_id.trim().is_empty() {
            return Err(violation(format!("{at}.fom_id"), "empty fom_id"));
        }
        if def.catalog_position != i {
            return Err(violation(
                format!("{at}.catalog_position"),
                format!("expected position {i}, found {}", def.catalog_position),
            ));
        }
        if by_id.insert(def.fom_id.clone(), i).is_some() {
            return Err(violation(
                format!("{at}.fom_id"),
                format!("duplicate fom_id {:?}", def.fom_id),
            ));
        }
        if def.is_state_variable && def.category != FomCategory::Common {
            return Err(violation(format!("{at}.category"), "state variables must be Common"));
        }
        for (j, name) in def.names().enumerate() {
            let key = normalize(name);
            let field = if j == 0 {
                format!("{at}.display_name")
            } else {
                format!("{at}.synonyms[{}]", j - 1)
            };
            if key.is_empty() {
                return Err(violation(field, "empty name"));
            }
            match by_name.get(&key) {
                Some(&owner) if owner != i => {
                    return Err(violation(
                        field,
                        format!("{name:?} already names {:?}", definitions[owner].fom_id),
                    ));
                }
                _ => {
                    by_name.insert(key, i);
                }
            }
        }
        let set: BTreeSet<String> = def.species.iter().cloned().collect();
        if set.len() != def.species.len() {
            return Err(violation(format!("{at}.species"), "duplicate species"));
        }
        for (k, symbol) in def.species.iter().enumerate() {
            if !species_dictionary.contains_key(symbol) {
                return Err(violation(
                    format!("{at}.species[{k}]"),
                    format!("species {symbol:?} missing from species_dictionary"),
                ));
            }
        }
        if set.len() >= 2 {
            if let Some(&other) = by_species_set.get(&set) {
                return Err(violation(
                    format!("{at}.species"),
                    format!(
                        "species set {:?} already used by {:?}",
                        def.species, definitions[other].fom_id
                    ),
                ));
            }
            by_species_set.insert(set, i);
        }
    }

    Ok(FomCatalog {
        definitions,
        species_dictionary,
        by_id,
        by_name,
        by_species_set,
    })
}

#[cfg(test)]
mod tests {
    use serde_json::{json, Value};

    use super::*;
    use crate::catalog::SHIPPED_MATERIAL_BASE;

    fn shipped_value() -> Value {
        serde_json::from_str(SHIPPED_MATERIAL_BASE).unwrap()
    }

    fn load(value: &Value) -> Result<MaterialBase, CatalogError> {
        MaterialBase::from_json_str(&value.to_string())
    }

    #[test]
    fn empty_materials_valid_catalog() {
        let mut v = shipped_value();
        v["materials"] = json!([]);
        v["reference_entry_count"] = json!(0);
        let mb = load(&v).unwrap();
        assert!(mb.materials().is_empty());
        assert_eq!(mb.catalog().definitions().len(), 49);
    }

    #[test]
    fn malformed_file_reports_position() {
        let err = MaterialBase::from_json_str("{\n  \"materials\": [,]\n}").unwrap_err();
        match err {
            CatalogError::MalformedFile { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            MaterialBase::from_json_str(&format!("{SHIPPED_MATERIAL_BASE} trailing")),
            Err(CatalogError::MalformedFile { .. })
        ));
    }

    #[test]
    fn schema_violation_names_path() {
        let mut v = shipped_value();
        v["fom_catalog"][3]["catalog_position"] = json!("three");
        match load(&v).unwrap_err() {
            CatalogError::SchemaViolation { path, .. } => assert_eq!(path, "fom_catalog[3].catalog_position"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v = shipped_value();
        v.as_object_mut().unwrap().remove("species_dictionary");
        assert!(matches!(load(&v), Err(CatalogError::SchemaViolation { .. })));
    }

    /// Pairwise oracle for the multi-species rule: any two definitions with
    /// equal species sets of size >= 2 must make the load fail.
    fn has_duplicate_multi_species_set(defs: &[Value]) -> bool {
        let sets: Vec<BTreeSet<String>> = defs
            .iter()
            .map(|d| {
                d["species"]
                    .as_array()
                    .map(|a| a.iter().map(|s| s.as_str().unwrap().to_string()).collect())
                    .unwrap_or_default()
            })
            .collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if sets[i].len() >= 2 && sets[i] == sets[j] {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn duplicate_species_set_rejected() {
        let mut v = shipped_value();
        let defs = v["fom_catalog"].as_array_mut().unwrap();
        assert!(!has_duplicate_multi_species_set(defs));
        let idx = defs.iter().position(|d| d["fom_id"] == "co2_ch4_selectivity").unwrap();
        defs[idx]["species"] = json!(["N2", "CO2"]);
        assert!(has_duplicate_multi_species_set(defs));
        match load(&v).unwrap_err() {
            CatalogError::InvariantViolation { path, .. } => {
                assert_eq!(path, format!("fom_catalog[{idx}].species"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn synonym_collision_rejected() {
        let mut v = shipped_value();
        let first = v["materials"][0]["canonical_name"].clone();
        v["materials"][1]["synonyms"] = json!([first.as_str().unwrap().to_uppercase()]);
        match load(&v).unwrap_err() {
            CatalogError::InvariantViolation { path, .. } => assert_eq!(path, "materials[1].synonyms[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fom_value_rejected() {
        let mut v = shipped_value();
        v["materials"][0]["fom_values"] = json!({"warp_factor": {"value": 9.0}});
        assert!(matches!(load(&v), Err(CatalogError::InvariantViolation { .. })));
    }

    #[test]
    fn non_contiguous_positions_rejected() {
        let mut v = shipped_value();
        v["fom_catalog"][5]["catalog_position"] = json!(50);
        assert!(
            matches!(load(&v), Err(CatalogError::InvariantViolation { path, .. }) if path == "fom_catalog[5].catalog_position")
        );
    }

    #[test]
    fn state_variable_outside_common_rejected() {
        let mut v = shipped_value();
        v["fom_catalog"][0]["category"] = json!("Membrane");
        assert!(matches!(load(&v), Err(CatalogError::InvariantViolation { .. })));
    }

    #[test]
    fn reference_count_mismatch_rejected() {
        let mut v = shipped_value();
        let n = v["reference_entry_count"].as_u64().unwrap();
        v["reference_entry_count"] = json!(n + 1);
        assert!(
            matches!(load(&v), Err(CatalogError::InvariantViolation { path, .. }) if path == "reference_entry_count")
        );
    }

    #[test]
    fn surface_form_owned_twice_rejected() {
        let mut v = shipped_value();
        v["species_dictionary"]["N2"].as_array_mut().unwrap().push(json!("CO₂"));
        assert!(matches!(load(&v), Err(CatalogError::InvariantViolation { .. })));
    }

    #[test]
    fn file_round_trip() {
        let mb = MaterialBase::shipped();
        let text = serde_json::to_string(&mb.to_file()).unwrap();
        let again = MaterialBase::from_json_str(&text).unwrap();
        assert_eq!(again.materials(), mb.materials());
        assert_eq!(again.catalog().definitions(), mb.catalog().definitions());
    }
}
