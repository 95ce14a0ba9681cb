//! Exploratory statistics over a formulation dataset: how often each API and
//! excipient appears, which drug/excipient pairs co-occur, and the share of
//! each filament aspect.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{DatasetSchema, FilamentAspect, Formulation, IngredientKind};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdaReport {
    pub api_counts: BTreeMap<String, usize>,
    pub excipient_counts: BTreeMap<String, usize>,
    pub pair_counts: BTreeMap<(String, String), usize>,
    pub aspect_counts: BTreeMap<FilamentAspect, usize>,
    pub n_formulations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameCount {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub api: String,
    pub excipient: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectShare {
    pub aspect: FilamentAspect,
    pub count: usize,
    pub proportion: f64,
}

/// Serialized form, every table sorted by descending count then name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaTables {
    pub n_formulations: usize,
    pub api_counts: Vec<NameCount>,
    pub excipient_counts: Vec<NameCount>,
    pub pair_counts: Vec<PairCount>,
    pub aspect_proportions: Vec<AspectShare>,
}

pub fn eda_summary(dataset: &[Formulation], schema: &DatasetSchema) -> EdaReport {
    let registry = schema.registry();
    let mut report = EdaReport {
        n_formulations: dataset.len(),
        ..Default::default()
    };
    for f in dataset {
        // display names come from the registry so spelling variants merge
        let mut apis = BTreeSet::new();
        let mut excipients = BTreeSet::new();
        for name in f.composition.keys() {
            if let Some(ing) = registry.get(name) {
                match ing.kind {
                    IngredientKind::Api => apis.insert(ing.name.clone()),
                    IngredientKind::Excipient => excipients.insert(ing.name.clone()),
                };
            }
        }
        for a in &apis {
            *report.api_counts.entry(a.clone()).or_default() += 1;
            for e in &excipients {
                *report.pair_counts.entry((a.clone(), e.clone())).or_default() += 1;
            }
        }
        for e in excipients {
            *report.excipient_counts.entry(e).or_default() += 1;
        }
        *report.aspect_counts.entry(f.aspect).or_default() += 1;
    }
    report
}

fn ranked<K: Clone + Ord>(m: &BTreeMap<K, usize>) -> Vec<(K, usize)> {
    let mut v: Vec<(K, usize)> = m.iter().map(|(k, c)| (k.clone(), *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

impl EdaReport {
    pub fn aspect_proportions(&self) -> BTreeMap<FilamentAspect, f64> {
        if self.n_formulations == 0 {
            return BTreeMap::new();
        }
        let n = self.n_formulations as f64;
        self.aspect_counts
            .iter()
            .map(|(a, c)| (*a, *c as f64 / n))
            .collect()
    }

    pub fn tables(&self) -> EdaTables {
        let props = self.aspect_proportions();
        EdaTables {
            n_formulations: self.n_formulations,
            api_counts: ranked(&self.api_counts)
                .into_iter()
                .map(|(name, count)| NameCount { name, count })
                .collect(),
            excipient_counts: ranked(&self.excipient_counts)
                .into_iter()
                .map(|(name, count)| NameCount { name, count })
                .collect(),
            pair_counts: ranked(&self.pair_counts)
                .into_iter()
                .map(|((api, excipient), count)| PairCount {
                    api,
                    excipient,
                    count,
                })
                .collect(),
            aspect_proportions: ranked(&self.aspect_counts)
                .into_iter()
                .map(|(aspect, count)| AspectShare {
                    aspect,
                    count,
                    proportion: props[&aspect],
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tables()).expect("EDA tables serialize")
    }

    /// Writes `eda.json` plus one CSV per table into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join("eda.json");
        std::fs::write(&json_path, self.to_json()).map_err(|e| Error::io(&json_path, e))?;

        let t = self.tables();
        write_csv(&dir.join("api_counts.csv"), &t.api_counts)?;
        write_csv(&dir.join("excipient_counts.csv"), &t.excipient_counts)?;
        write_csv(&dir.join("pair_counts.csv"), &t.pair_counts)?;
        write_csv(&dir.join("aspect_proportions.csv"), &t.aspect_proportions)?;
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::Printability;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            vec!["X".into(), "Y".into()],
            vec!["E".into(), "F".into()],
            "aspect",
            "printable",
        )
        .unwrap()
    }

    fn fixture() -> Vec<Formulation> {
        vec![
            Formulation::new("1", [("X", 10.0), ("E", 90.0)])
                .with_labels(Printability::Yes, FilamentAspect::Good),
            Formulation::new("2", [("X", 10.0), ("F", 90.0)])
                .with_labels(Printability::Yes, FilamentAspect::Good),
            Formulation::new("3", [("Y", 10.0), ("E", 90.0)])
                .with_labels(Printability::No, FilamentAspect::Brittle),
            Formulation::new("4", [("F", 100.0)])
                .with_labels(Printability::No, FilamentAspect::Unknown),
        ]
    }

    #[test]
    fn empty_dataset() {
        let r = eda_summary(&[], &schema());
        assert!(r.api_counts.is_empty());
        assert!(r.pair_counts.is_empty());
        assert!(r.aspect_proportions().is_empty());
    }

    #[test]
    fn hand_counted_fixture() {
        let r = eda_summary(&fixture()[..3], &schema());
        assert_eq!(r.api_counts["X"], 2);
        assert_eq!(r.excipient_counts["E"], 2);
        assert_eq!(r.pair_counts[&("X".to_string(), "E".to_string())], 1);
    }

    #[test]
    fn aspect_shares() {
        let r = eda_summary(&fixture(), &schema());
        let p = r.aspect_proportions();
        assert_eq!(p[&FilamentAspect::Good], 0.5);
        assert_eq!(p[&FilamentAspect::Brittle], 0.25);
        assert_eq!(p[&FilamentAspect::Unknown], 0.25);
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn tables_are_sorted() {
        let t = eda_summary(&fixture(), &schema()).tables();
        let names: Vec<_> = t.excipient_counts.iter().map(|n| n.name.as_str()).collect();
        // E and F both appear twice: tie broken by name
        assert_eq!(names, ["E", "F"]);
        assert_eq!(t.aspect_proportions[0].aspect, FilamentAspect::Good);
        let json = serde_json::to_string(&t).unwrap();
        let back: EdaTables = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        eda_summary(&fixture(), &schema())
            .write_artifacts(dir.path())
            .unwrap();
        let pairs = std::fs::read_to_string(dir.path().join("pair_counts.csv")).unwrap();
        assert!(pairs.starts_with("api,excipient,count\n"));
        assert_eq!(pairs.lines().count(), 4);
    }
}
