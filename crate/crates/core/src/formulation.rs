//! Domain types for formulation datasets: ingredients, filament aspect,
//! printability, the column-role schema and formulation validation.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parser::normalize_text;

/// Default tolerance, in w/w%, around 100 for a formulation's total.
pub const DEFAULT_SUM_TOLERANCE: f64 = 0.5;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IngredientKind {
    #[serde(rename = "API")]
    Api,
    Excipient,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ingredient {
    pub name: String,
    pub key: String,
    pub kind: IngredientKind,
}

impl Ingredient {
    pub fn new(name: &str, kind: IngredientKind) -> Result<Self> {
        let key = normalize_text(name);
        if key.is_empty() {
            return Err(Error::domain(format!(
                "ingredient name '{name}' is empty after normalization"
            )));
        }
        Ok(Ingredient {
            name: name.trim().to_string(),
            key,
            kind,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilamentAspect {
    Good,
    Flexible,
    Brittle,
    Unextrudable,
    Unknown,
}

impl FilamentAspect {
    pub const ALL: [FilamentAspect; 5] = [
        FilamentAspect::Good,
        FilamentAspect::Flexible,
        FilamentAspect::Brittle,
        FilamentAspect::Unextrudable,
        FilamentAspect::Unknown,
    ];

    /// Case-insensitive label lookup. Returns `None` for labels outside the
    /// five known categories; callers map that to `Unknown` and record it.
    pub fn from_label(label: &str) -> Option<FilamentAspect> {
        let label = label.trim().trim_matches(|c| c == '"' || c == '\'');
        FilamentAspect::ALL
            .into_iter()
            .find(|a| a.label().eq_ignore_ascii_case(label))
    }

    /// Label lookup for dataset cells: blank cells are `Unknown` without a
    /// complaint, unrecognized text is `Unknown` and flagged.
    pub fn parse_cell(cell: &str) -> (FilamentAspect, bool) {
        if cell.trim().is_empty() {
            return (FilamentAspect::Unknown, true);
        }
        match FilamentAspect::from_label(cell) {
            Some(a) => (a, true),
            None => (FilamentAspect::Unknown, false),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FilamentAspect::Good => "Good",
            FilamentAspect::Flexible => "Flexible",
            FilamentAspect::Brittle => "Brittle",
            FilamentAspect::Unextrudable => "Unextrudable",
            FilamentAspect::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for FilamentAspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Printability {
    Yes,
    No,
    Unknown,
}

impl Printability {
    pub fn parse_cell(cell: &str) -> (Printability, bool) {
        let v = cell.trim().to_ascii_lowercase();
        match v.as_str() {
            "yes" | "true" | "1" => (Printability::Yes, true),
            "no" | "false" | "0" => (Printability::No, true),
            "" => (Printability::Unknown, true),
            _ => (Printability::Unknown, false),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Printability::Yes => "yes",
            Printability::No => "no",
            Printability::Unknown => "",
        }
    }
}

/// One dataset row: ingredient proportions in w/w% plus the outcome labels.
///
/// Composition preserves insertion order (CSV column order when loaded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formulation {
    pub id: String,
    pub composition: IndexMap<String, f64>,
    pub printable: Printability,
    pub aspect: FilamentAspect,
}

impl Formulation {
    pub fn new<I, S>(id: impl Into<String>, composition: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Formulation {
            id: id.into(),
            composition: composition.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            printable: Printability::Unknown,
            aspect: FilamentAspect::Unknown,
        }
    }

    pub fn with_labels(mut self, printable: Printability, aspect: FilamentAspect) -> Self {
        self.printable = printable;
        self.aspect = aspect;
        self
    }

    pub fn total(&self) -> f64 {
        self.composition.values().sum()
    }

    /// Looks an ingredient up by normalized key.
    pub fn proportion_of(&self, name: &str) -> Option<f64> {
        let key = normalize_text(name);
        self.composition
            .iter()
            .find(|(n, _)| normalize_text(n) == key)
            .map(|(_, v)| *v)
    }
}

/// Column roles of a wide formulation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub schema_version: u32,
    pub api_columns: Vec<String>,
    pub excipient_columns: Vec<String>,
    pub aspect_column: String,
    pub printability_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    #[serde(default = "default_tolerance")]
    pub sum_tolerance: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_SUM_TOLERANCE
}

impl DatasetSchema {
    pub fn new(
        api_columns: Vec<String>,
        excipient_columns: Vec<String>,
        aspect_column: impl Into<String>,
        printability_column: impl Into<String>,
    ) -> Result<Self> {
        let schema = DatasetSchema {
            schema_version: SCHEMA_VERSION,
            api_columns,
            excipient_columns,
            aspect_column: aspect_column.into(),
            printability_column: printability_column.into(),
            id_column: None,
            sum_tolerance: DEFAULT_SUM_TOLERANCE,
        };
        schema.check()?;
        Ok(schema)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let schema: DatasetSchema = toml::from_str(s)?;
        schema.check()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes to TOML")
    }

    /// Checks the structural invariants (version, disjoint column roles).
    pub fn check(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.api_columns.is_empty() && self.excipient_columns.is_empty() {
            return Err(Error::Schema("no ingredient columns declared".into()));
        }
        if !(self.sum_tolerance.is_finite() && self.sum_tolerance >= 0.0) {
            return Err(Error::Schema(format!(
                "sum_tolerance must be finite and non-negative, got {}",
                self.sum_tolerance
            )));
        }
        let mut seen: HashMap<String, &str> = HashMap::new();
        for (col, role) in self
            .api_columns
            .iter()
            .map(|c| (c, "api"))
            .chain(self.excipient_columns.iter().map(|c| (c, "excipient")))
        {
            let key = normalize_text(col);
            if key.is_empty() {
                return Err(Error::Schema(format!(
                    "column '{col}' has an empty normalized name"
                )));
            }
            if let Some(prev) = seen.insert(key, role) {
                return Err(Error::Schema(format!(
                    "column '{col}' declared twice ({prev} and {role})"
                )));
            }
        }
        for special in [&self.aspect_column, &self.printability_column]
            .into_iter()
            .chain(self.id_column.as_ref())
        {
            if seen.contains_key(&normalize_text(special)) {
                return Err(Error::Schema(format!(
                    "column '{special}' cannot be both a label and an ingredient column"
                )));
            }
        }
        Ok(())
    }

    /// Kind of an ingredient according to the column registry, keyed by
    /// normalized name. Names the registry does not know return `None`.
    pub fn kind_of(&self, name: &str) -> Option<IngredientKind> {
        let key = normalize_text(name);
        if self.api_columns.iter().any(|c| normalize_text(c) == key) {
            Some(IngredientKind::Api)
        } else if self.excipient_columns.iter().any(|c| normalize_text(c) == key) {
            Some(IngredientKind::Excipient)
        } else {
            None
        }
    }

    pub fn registry(&self) -> IngredientRegistry {
        IngredientRegistry::from_schema(self)
    }
}

/// Normalized-key lookup table built from a schema.
#[derive(Debug, Clone, Default)]
pub struct IngredientRegistry {
    by_key: HashMap<String, Ingredient>,
}

impl IngredientRegistry {
    pub fn from_schema(schema: &DatasetSchema) -> Self {
        let mut by_key = HashMap::new();
        let cols = schema
            .api_columns
            .iter()
            .map(|c| (c, IngredientKind::Api))
            .chain(
                schema
                    .excipient_columns
                    .iter()
                    .map(|c| (c, IngredientKind::Excipient)),
            );
        for (col, kind) in cols {
            if let Ok(ing) = Ingredient::new(col, kind) {
                by_key.entry(ing.key.clone()).or_insert(ing);
            }
        }
        IngredientRegistry { by_key }
    }

    pub fn get(&self, name: &str) -> Option<&Ingredient> {
        self.by_key.get(&normalize_text(name))
    }

    pub fn kind_of(&self, name: &str) -> Option<IngredientKind> {
        self.get(name).map(|i| i.kind)
    }

    pub fn is_api(&self, name: &str) -> bool {
        self.kind_of(name) == Some(IngredientKind::Api)
    }

    pub fn is_excipient(&self, name: &str) -> bool {
        self.kind_of(name) == Some(IngredientKind::Excipient)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    SumOutOfRange,
    NegativeProportion,
    NonFiniteProportion,
    EmptyComposition,
    UnknownAspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }
}

pub fn validate_formulation(f: &Formulation, tolerance: f64) -> ValidationReport {
    let mut findings = Vec::new();
    if f.composition.is_empty() {
        findings.push(Finding {
            code: FindingCode::EmptyComposition,
            message: format!("formulation {} has no ingredients", f.id),
        });
    }
    for (name, &p) in &f.composition {
        if !p.is_finite() {
            findings.push(Finding {
                code: FindingCode::NonFiniteProportion,
                message: format!("{name}: proportion {p} is not finite"),
            });
        } else if p < 0.0 {
            findings.push(Finding {
                code: FindingCode::NegativeProportion,
                message: format!("{name}: proportion {p} is negative"),
            });
        }
    }
    if !f.composition.is_empty() {
        let total = f.total();
        if !(total >= 100.0 - tolerance && total <= 100.0 + tolerance) {
            findings.push(Finding {
                code: FindingCode::SumOutOfRange,
                message: format!(
                    "formulation {} totals {total} w/w% (allowed 100 ± {tolerance})",
                    f.id
                ),
            });
        }
    }
    if f.aspect == FilamentAspect::Unknown {
        findings.push(Finding {
            code: FindingCode::UnknownAspect,
            message: format!("formulation {} has no known filament aspect", f.id),
        });
    }
    ValidationReport { findings }
}
