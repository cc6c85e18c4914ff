//! Materials knowledge base, figure-of-merit catalog and reference table.
//!
//! Everything here is immutable once loaded. A [`MaterialBase`] is a
//! snapshot: reloading builds a new one, so callers can hold an `Arc` to a
//! snapshot while a newer one is swapped in elsewhere.

mod load;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::normalize;

pub use load::MaterialBaseFile;

/// The bundled material base: 49 catalog value fields plus a handful of
/// materials, including the two from the MMHFM permeance study.
pub const SHIPPED_MATERIAL_BASE: &str = include_str!("../../data/material_base.json");

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("cannot read material base {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed material base at line {line}, column {column}: {message}")]
    MalformedFile {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("invariant violation at {path}: {message}")]
    InvariantViolation { path: String, message: String },
    #[error("unknown species {0:?}")]
    UnknownSpecies(String),
    #[error("species set must hold at least two distinct species, got {0}")]
    DegenerateSpeciesSet(usize),
}

/// The five carbon-capture technology families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TechnologyCategory {
    LiquidAbsorption,
    SolidAdsorption,
    Membrane,
    Hydrate,
    ChemicalLooping,
}

impl TechnologyCategory {
    pub const ALL: [TechnologyCategory; 5] = [
        TechnologyCategory::LiquidAbsorption,
        TechnologyCategory::SolidAdsorption,
        TechnologyCategory::Membrane,
        TechnologyCategory::Hydrate,
        TechnologyCategory::ChemicalLooping,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TechnologyCategory::LiquidAbsorption => "LiquidAbsorption",
            TechnologyCategory::SolidAdsorption => "SolidAdsorption",
            TechnologyCategory::Membrane => "Membrane",
            TechnologyCategory::Hydrate => "Hydrate",
            TechnologyCategory::ChemicalLooping => "ChemicalLooping",
        }
    }

    /// Position in [`TechnologyCategory::ALL`], used for one-hot encoding.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TechnologyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown technology category {0:?}")]
pub struct UnknownCategory(pub String);

impl FromStr for TechnologyCategory {
    type Err = UnknownCategory;

    /// Accepts the variant name in any case, with or without separators,
    /// and the plural "Membranes"/"Hydrates".
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let category = match key.as_str() {
            "liquidabsorption" => TechnologyCategory::LiquidAbsorption,
            "solidadsorption" => TechnologyCategory::SolidAdsorption,
            "membrane" | "membranes" => TechnologyCategory::Membrane,
            "hydrate" | "hydrates" => TechnologyCategory::Hydrate,
            "chemicallooping" => TechnologyCategory::ChemicalLooping,
            _ => return Err(UnknownCategory(s.to_string())),
        };
        Ok(category)
    }
}

/// Category of a catalog field: shared by all technologies, or specific to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FomCategory {
    Common,
    LiquidAbsorption,
    SolidAdsorption,
    Membrane,
    Hydrate,
    ChemicalLooping,
}

impl FomCategory {
    pub fn technology(self) -> Option<TechnologyCategory> {
        match self {
            FomCategory::Common => None,
            FomCategory::LiquidAbsorption => Some(TechnologyCategory::LiquidAbsorption),
            FomCategory::SolidAdsorption => Some(TechnologyCategory::SolidAdsorption),
            FomCategory::Membrane => Some(TechnologyCategory::Membrane),
            FomCategory::Hydrate => Some(TechnologyCategory::Hydrate),
            FomCategory::ChemicalLooping => Some(TechnologyCategory::ChemicalLooping),
        }
    }
}

/// A curated value stored on a material record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarMeasurement {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialRecord {
    pub canonical_name: String,
    #[serde(default)]
    pub smiles: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub categories: Vec<TechnologyCategory>,
    #[serde(default)]
    pub fom_values: BTreeMap<String, ScalarMeasurement>,
    /// Whether this material is an entry of the ground-truth reference table.
    #[serde(default)]
    pub reference: bool,
}

impl MaterialRecord {
    /// Identifier used on graph edges.
    pub fn id(&self) -> &str {
        &self.canonical_name
    }

    fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FomDefinition {
    pub fom_id: String,
    pub display_name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub canonical_unit: String,
    pub category: FomCategory,
    #[serde(default)]
    pub species: Vec<String>,
    #[serde(default)]
    pub is_state_variable: bool,
    pub catalog_position: usize,
}

impl FomDefinition {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.display_name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }

    pub fn species_set(&self) -> BTreeSet<&str> {
        self.species.iter().map(String::as_str).collect()
    }

    /// True when the display name or a synonym equals `text` after normalization.
    pub fn is_named(&self, text: &str) -> bool {
        let wanted = normalize(text);
        !wanted.is_empty() && self.names().any(|n| normalize(n) == wanted)
    }
}

/// Species symbol to the surface forms that denote it in headers.
pub type SpeciesDictionary = BTreeMap<String, Vec<String>>;

/// Field counts per catalog group (value fields, state variables included).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GroupCounts {
    pub common: usize,
    pub sorption: usize,
    pub hydrate: usize,
    pub membrane: usize,
    pub chemical_looping: usize,
}

impl GroupCounts {
    pub fn total(&self) -> usize {
        self.common + self.sorption + self.hydrate + self.membrane + self.chemical_looping
    }
}

#[derive(Debug, Clone)]
pub struct FomCatalog {
    definitions: Vec<FomDefinition>,
    species_dictionary: SpeciesDictionary,
    by_id: HashMap<String, usize>,
    by_name: HashMap<String, usize>,
    by_species_set: HashMap<BTreeSet<String>, usize>,
}

impl FomCatalog {
    /// Definitions in catalog order (`catalog_position` ascending).
    pub fn definitions(&self) -> &[FomDefinition] {
        &self.definitions
    }

    pub fn species_dictionary(&self) -> &SpeciesDictionary {
        &self.species_dictionary
    }

    pub fn get(&self, fom_id: &str) -> Option<&FomDefinition> {
        self.by_id.get(fom_id).map(|&i| &self.definitions[i])
    }

    /// Value fields that feed feature vectors, in catalog order.
    pub fn value_fields(&self) -> impl Iterator<Item = &FomDefinition> {
        self.definitions.iter().filter(|d| !d.is_state_variable)
    }

    pub fn fom_by_exact_name(&self, header_text: &str) -> Option<&FomDefinition> {
        let key = normalize(header_text);
        if key.is_empty() {
            return None;
        }
        self.by_name.get(&key).map(|&i| &self.definitions[i])
    }

    /// All definitions whose species set contains `species`, in catalog order.
    pub fn foms_containing_species(&self, species: &str) -> Result<Vec<&FomDefinition>, CatalogError> {
        if !self.species_dictionary.contains_key(species) {
            return Err(CatalogError::UnknownSpecies(species.to_string()));
        }
        Ok(self
            .definitions
            .iter()
            .filter(|d| d.species.iter().any(|s| s == species))
            .collect())
    }

    /// The unique definition whose species set equals `species`.
    ///
    /// Duplicates in the input collapse, so `["CO2", "CO2"]` is a
    /// single-species set and is rejected as a caller error.
    pub fn fom_by_species_set<S: AsRef<str>>(&self, species: &[S]) -> Result<Option<&FomDefinition>, CatalogError> {
        let set: BTreeSet<String> = species.iter().map(|s| s.as_ref().to_string()).collect();
        if set.len() < 2 {
            return Err(CatalogError::DegenerateSpeciesSet(set.len()));
        }
        Ok(self.by_species_set.get(&set).map(|&i| &self.definitions[i]))
    }

    pub fn group_counts(&self) -> GroupCounts {
        let mut counts = GroupCounts::default();
        for def in &self.definitions {
            match def.category {
                FomCategory::Common => counts.common += 1,
                FomCategory::LiquidAbsorption | FomCategory::SolidAdsorption => counts.sorption += 1,
                FomCategory::Hydrate => counts.hydrate += 1,
                FomCategory::Membrane => counts.membrane += 1,
                FomCategory::ChemicalLooping => counts.chemical_looping += 1,
            }
        }
        counts
    }
}

/// Ground-truth materials, i.e. the records flagged `reference`.
#[derive(Debug, Clone, Default)]
pub struct ReferenceTable {
    entries: Vec<usize>,
    entry_count: usize,
}

impl ReferenceTable {
    pub fn entry_count(&self) -> usize {
        self.entry_count
    }
}

/// A loaded, validated snapshot of the materials knowledge base.
#[derive(Debug, Clone)]
pub struct MaterialBase {
    materials: Vec<MaterialRecord>,
    catalog: FomCatalog,
    reference: ReferenceTable,
    by_name: HashMap<String, usize>,
}

impl MaterialBase {
    pub fn shipped() -> Self {
        Self::from_json_str(SHIPPED_MATERIAL_BASE).expect("shipped material base is valid")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, CatalogError> {
        MaterialBaseFile::parse(text)?.build()
    }

    pub fn materials(&self) -> &[MaterialRecord] {
        &self.materials
    }

    pub fn catalog(&self) -> &FomCatalog {
        &self.catalog
    }

    pub fn reference(&self) -> &ReferenceTable {
        &self.reference
    }

    pub fn reference_entries(&self) -> impl Iterator<Item = &MaterialRecord> {
        self.reference.entries.iter().map(|&i| &self.materials[i])
    }

    /// Resolves a name or synonym after normalization.
    pub fn lookup_material(&self, name: &str) -> Option<&MaterialRecord> {
        let key = normalize(name);
        if key.is_empty() {
            return None;
        }
        self.by_name.get(&key).map(|&i| &self.materials[i])
    }

    pub fn material(&self, material_id: &str) -> Option<&MaterialRecord> {
        self.materials.iter().find(|m| m.canonical_name == material_id)
    }

    pub fn is_reference(&self, material_id: &str) -> bool {
        self.material(material_id).is_some_and(|m| m.reference)
    }

    /// Serializes back into the on-disk schema.
    pub fn to_file(&self) -> MaterialBaseFile {
        MaterialBaseFile {
            materials: self.materials.clone(),
            fom_catalog: self.catalog.definitions.clone(),
            species_dictionary: self.catalog.species_dictionary.clone(),
            reference_entry_count: self.reference.entry_count,
        }
    }
}
