//! Co-occurrence baseline: recommend the excipients most often seen with an
//! API, at their median proportions, rescaled to a 100 w/w% total.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{DatasetSchema, FilamentAspect, Formulation, IngredientKind, Printability};
use crate::parser::normalize_text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedExcipient {
    pub name: String,
    pub count: usize,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiProfile {
    pub name: String,
    pub n_formulations: usize,
    pub excipients: Vec<RankedExcipient>,
    pub printable: Printability,
    pub aspect: FilamentAspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommenderModel {
    /// Keyed by normalized API name.
    pub apis: BTreeMap<String, ApiProfile>,
    /// Fallback ranking over all training formulations.
    pub global: Vec<RankedExcipient>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecommenderDiagnostic {
    UnseenApi,
    /// Fewer than k excipients were available.
    ShortList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub formulation: Formulation,
    pub diagnostics: Vec<RecommenderDiagnostic>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

#[derive(Default)]
struct Tally {
    name: String,
    values: Vec<f64>,
}

fn rank(tallies: HashMap<String, Tally>) -> Vec<RankedExcipient> {
    let mut ranked: Vec<(String, RankedExcipient)> = tallies
        .into_iter()
        .map(|(key, mut t)| {
            let count = t.values.len();
            (
                key,
                RankedExcipient {
                    median: median(&mut t.values),
                    name: t.name,
                    count,
                },
            )
        })
        .collect();
    ranked.sort_by(|a, b| b.1.count.cmp(&a.1.count).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().map(|(_, r)| r).collect()
}

fn mode<T: Copy + Ord>(counts: &BTreeMap<T, usize>, fallback: T) -> T {
    // BTreeMap iteration order breaks ties toward the smaller variant
    counts
        .iter()
        .fold(None::<(T, usize)>, |best, (&v, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((v, c)),
        })
        .map_or(fallback, |(v, _)| v)
}

pub fn fit(train: &[Formulation], schema: &DatasetSchema) -> Result<RecommenderModel> {
    if train.is_empty() {
        return Err(Error::domain("cannot fit the recommender on an empty training set"));
    }
    let registry = schema.registry();

    struct ApiTally {
        name: String,
        n: usize,
        excipients: HashMap<String, Tally>,
        printable: BTreeMap<Printability, usize>,
        aspect: BTreeMap<FilamentAspect, usize>,
    }
    let mut per_api: BTreeMap<String, ApiTally> = BTreeMap::new();
    let mut global: HashMap<String, Tally> = HashMap::new();

    for f in train {
        let mut apis = Vec::new();
        let mut excipients: Vec<(String, &str, f64)> = Vec::new();
        for (name, &pct) in &f.composition {
            if !(pct > 0.0 && pct.is_finite()) {
                continue;
            }
            match registry.kind_of(name) {
                Some(IngredientKind::Api) => apis.push((normalize_text(name), name.as_str())),
                Some(IngredientKind::Excipient) => {
                    excipients.push((normalize_text(name), name.as_str(), pct))
                }
                None => {}
            }
        }
        for (key, name, pct) in &excipients {
            let t = global.entry(key.clone()).or_default();
            if t.name.is_empty() {
                t.name = name.to_string();
            }
            t.values.push(*pct);
        }
        for (key, name) in apis {
            let at = per_api.entry(key).or_insert_with(|| ApiTally {
                name: name.to_string(),
                n: 0,
                excipients: HashMap::new(),
                printable: BTreeMap::new(),
                aspect: BTreeMap::new(),
            });
            at.n += 1;
            *at.printable.entry(f.printable).or_default() += 1;
            *at.aspect.entry(f.aspect).or_default() += 1;
            for (ekey, ename, pct) in &excipients {
                let t = at.excipients.entry(ekey.clone()).or_default();
                if t.name.is_empty() {
                    t.name = ename.to_string();
                }
                t.values.push(*pct);
            }
        }
    }

    let apis = per_api
        .into_iter()
        .map(|(key, t)| {
            (
                key,
                ApiProfile {
                    name: t.name,
                    n_formulations: t.n,
                    excipients: rank(t.excipients),
                    printable: mode(&t.printable, Printability::Unknown),
                    aspect: mode(&t.aspect, FilamentAspect::Unknown),
                },
            )
        })
        .collect();
    Ok(RecommenderModel {
        apis,
        global: rank(global),
    })
}

impl RecommenderModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn profile(&self, api: &str) -> Option<&ApiProfile> {
        self.apis.get(&normalize_text(api))
    }

    pub fn recommend(&self, api: &str, dose: f64, k: usize) -> Result<Recommendation> {
        recommend(self, api, dose, k)
    }
}

pub fn recommend(model: &RecommenderModel, api: &str, dose: f64, k: usize) -> Result<Recommendation> {
    if !(dose > 0.0 && dose < 100.0) {
        return Err(Error::domain(format!("dose must be in (0, 100) w/w%, got {dose}")));
    }
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    let mut diagnostics = Vec::new();
    let profile = model.profile(api);
    let (ranked, api_name, printable, aspect) = match profile {
        Some(p) if !p.excipients.is_empty() => (&p.excipients, p.name.as_str(), p.printable, p.aspect),
        _ => {
            if profile.is_none() {
                diagnostics.push(RecommenderDiagnostic::UnseenApi);
            }
            let (printable, aspect) = profile
                .map_or((Printability::Unknown, FilamentAspect::Unknown), |p| {
                    (p.printable, p.aspect)
                });
            (&model.global, api, printable, aspect)
        }
    };
    if ranked.is_empty() {
        return Err(Error::domain("the model has no excipients to recommend"));
    }
    if ranked.len() < k {
        diagnostics.push(RecommenderDiagnostic::ShortList);
    }
    let picks = &ranked[..k.min(ranked.len())];
    let budget = 100.0 - dose;
    let median_total: f64 = picks.iter().map(|r| r.median).sum();

    let mut composition = Vec::with_capacity(picks.len() + 1);
    composition.push((api_name.to_string(), dose));
    let mut allotted = 0.0;
    for (i, r) in picks.iter().enumerate() {
        let share = if i + 1 == picks.len() {
            budget - allotted
        } else {
            r.median * budget / median_total
        };
        allotted += share;
        composition.push((r.name.clone(), share));
    }
    Ok(Recommendation {
        formulation: Formulation::new("recommendation", composition).with_labels(printable, aspect),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::validate_formulation;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            vec!["X".into(), "Y".into()],
            vec!["E".into(), "E2".into(), "F".into()],
            "aspect",
            "printable",
        )
        .unwrap()
    }

    fn fixture() -> Vec<Formulation> {
        vec![
            Formulation::new("1", [("X", 20.0), ("E", 60.0), ("F", 20.0)])
                .with_labels(Printability::Yes, FilamentAspect::Good),
            Formulation::new("2", [("X", 10.0), ("E", 40.0), ("F", 50.0)])
                .with_labels(Printability::Yes, FilamentAspect::Brittle),
            Formulation::new("3", [("X", 10.0), ("E", 90.0)])
                .with_labels(Printability::No, FilamentAspect::Good),
            Formulation::new("4", [("Y", 10.0), ("E2", 90.0)])
                .with_labels(Printability::No, FilamentAspect::Flexible),
        ]
    }

    #[test]
    fn ranks_by_hand_count() {
        let m = fit(&fixture(), &schema()).unwrap();
        let x = m.profile("x").unwrap();
        let names: Vec<_> = x.excipients.iter().map(|r| (r.name.as_str(), r.count)).collect();
        assert_eq!(names, [("E", 3), ("F", 2)]);
        assert_eq!(x.excipients[0].median, 60.0);
        assert_eq!(x.excipients[1].median, 35.0);
        assert_eq!(x.printable, Printability::Yes);
        assert_eq!(x.aspect, FilamentAspect::Good);
        // E2 never co-occurs with X
        assert!(x.excipients.iter().all(|r| r.name != "E2"));
        let global: Vec<_> = m.global.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(global, ["E", "F", "E2"]);
    }

    #[test]
    fn unseen_api_uses_global_ranking() {
        let m = fit(&fixture(), &schema()).unwrap();
        let r = m.recommend("Zolpidem", 20.0, 2).unwrap();
        assert!(r.diagnostics.contains(&RecommenderDiagnostic::UnseenApi));
        let names: Vec<_> = r.formulation.composition.keys().map(|s| s.as_str()).collect();
        assert_eq!(names, ["Zolpidem", "E", "F"]);
        assert_eq!(r.formulation.aspect, FilamentAspect::Unknown);
    }

    #[test]
    fn single_excipient_takes_the_remainder() {
        let m = fit(&fixture(), &schema()).unwrap();
        let r = m.recommend("X", 20.0, 1).unwrap();
        assert_eq!(r.formulation.composition["E"], 80.0);
    }

    #[test]
    fn equal_medians_split_evenly() {
        let m = RecommenderModel {
            apis: BTreeMap::new(),
            global: vec![
                RankedExcipient { name: "P".into(), count: 2, median: 40.0 },
                RankedExcipient { name: "Q".into(), count: 1, median: 40.0 },
            ],
        };
        let r = m.recommend("A", 10.0, 2).unwrap();
        assert_eq!(r.formulation.composition["P"], 45.0);
        assert_eq!(r.formulation.composition["Q"], 45.0);
    }

    #[test]
    fn output_is_always_valid() {
        let m = fit(&fixture(), &schema()).unwrap();
        for dose in [0.5, 1.0, 7.3, 33.3, 99.9] {
            for k in 1..=4 {
                let r = m.recommend("X", dose, k).unwrap();
                let report = validate_formulation(&r.formulation, 1e-9);
                assert!(report.findings.iter().all(|f| f.code != crate::formulation::FindingCode::SumOutOfRange));
            }
        }
    }

    #[test]
    fn bad_arguments() {
        let m = fit(&fixture(), &schema()).unwrap();
        assert!(m.recommend("X", 0.0, 1).is_err());
        assert!(m.recommend("X", 100.0, 1).is_err());
        assert!(m.recommend("X", f64::NAN, 1).is_err());
        assert!(m.recommend("X", 10.0, 0).is_err());
        assert!(fit(&[], &schema()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = fit(&fixture(), &schema()).unwrap();
        assert_eq!(RecommenderModel::from_json(&m.to_json()).unwrap(), m);
    }
}
