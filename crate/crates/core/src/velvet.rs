//! VELVET: excipient-list similarity in an ingredient co-occurrence space.
//!
//! Each ingredient is embedded as its vector of fractional proportions over
//! the training formulations (an ingredients × formulations matrix). A
//! prediction is scored against its reference by the mean Euclidean distance
//! over all (predicted, reference) ingredient pairs. Pairs involving a name
//! the embedding has never seen cost the largest pairwise distance observed
//! in the vocabulary. Lower is better.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::Formulation;
use crate::parser::{normalize_text, ParsedResponse};
use crate::stats::{mean, sample_std};

/// Penalty reported for the original study's dataset. Informational only; it
/// depends on data this toolkit does not ship.
pub const REFERENCE_DATASET_PENALTY: f64 = 9.4475;

pub const EMBEDDING_FORMAT: &str = "velvet-embedding";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VelvetDiagnostic {
    /// Prediction or reference had no usable ingredient names.
    EmptySide,
    /// Fewer than two ingredients in the vocabulary, so the penalty is 0.
    DegenerateEmbedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngredientEmbedding {
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
    n_formulations: usize,
    // row-major, one row of length n_formulations per vocabulary entry
    vectors: Vec<f64>,
    penalty: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl IngredientEmbedding {
    pub fn build(train: &[Formulation]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::domain(
                "cannot build an embedding from an empty training set",
            ));
        }
        let f = train.len();
        let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (j, form) in train.iter().enumerate() {
            for (name, &pct) in &form.composition {
                let key = normalize_text(name);
                if key.is_empty() || !pct.is_finite() {
                    continue;
                }
                let row = rows.entry(key).or_insert_with(|| vec![0.0; f]);
                row[j] = (row[j] + pct / 100.0).clamp(0.0, 1.0);
            }
        }
        let vocabulary: Vec<String> = rows.keys().cloned().collect();
        let vectors: Vec<f64> = rows.into_values().flatten().collect();
        let mut emb = IngredientEmbedding {
            index: vocabulary
                .iter()
                .enumerate()
                .map(|(i, k)| (k.clone(), i))
                .collect(),
            vocabulary,
            n_formulations: f,
            vectors,
            penalty: 0.0,
        };
        emb.penalty = emb.max_pairwise_distance();
        Ok(emb)
    }

    /// Streaming max over all vocabulary pairs; nothing quadratic is stored.
    pub fn max_pairwise_distance(&self) -> f64 {
        let v = self.vocabulary.len();
        let mut max = 0.0f64;
        for i in 0..v {
            let a = self.row(i);
            for j in i + 1..v {
                let d = euclidean(a, self.row(j));
                if d > max {
                    max = d;
                }
            }
        }
        max
    }

    fn row(&self, i: usize) -> &[f64] {
        let f = self.n_formulations;
        &self.vectors[i * f..(i + 1) * f]
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn n_formulations(&self) -> usize {
        self.n_formulations
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn is_degenerate(&self) -> bool {
        self.vocabulary.len() < 2
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(&normalize_text(name))
    }

    /// Vector for an ingredient, looked up by normalized name.
    pub fn vector(&self, name: &str) -> Option<&[f64]> {
        self.index.get(&normalize_text(name)).map(|&i| self.row(i))
    }

    fn vector_by_key(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    /// Distance between two names, or `None` if either is unknown.
    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        Some(euclidean(self.vector(a)?, self.vector(b)?))
    }

    fn pair_cost(&self, a: &str, b: &str) -> f64 {
        match (self.vector_by_key(a), self.vector_by_key(b)) {
            (Some(x), Some(y)) => euclidean(x, y),
            _ => self.penalty,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_artifact())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let art: EmbeddingArtifact = serde_json::from_str(&text)?;
        Self::from_artifact(art)
    }

    pub fn to_artifact(&self) -> EmbeddingArtifact {
        let vectors = (0..self.vocabulary.len())
            .map(|i| {
                let mut sv = SparseVector::default();
                for (j, &x) in self.row(i).iter().enumerate() {
                    if x != 0.0 {
                        sv.indices.push(j);
                        sv.values.push(x);
                    }
                }
                sv
            })
            .collect();
        EmbeddingArtifact {
            format: EMBEDDING_FORMAT.to_string(),
            version: EMBEDDING_VERSION,
            n_formulations: self.n_formulations,
            penalty: self.penalty,
            vocabulary: self.vocabulary.clone(),
            vectors,
        }
    }

    pub fn from_artifact(art: EmbeddingArtifact) -> Result<Self> {
        if art.format != EMBEDDING_FORMAT || art.version != EMBEDDING_VERSION {
            return Err(Error::Schema(format!(
                "unsupported embedding artifact {} v{}",
                art.format, art.version
            )));
        }
        if art.vectors.len() != art.vocabulary.len() {
            return Err(Error::Schema(format!(
                "embedding has {} names but {} vectors",
                art.vocabulary.len(),
                art.vectors.len()
            )));
        }
        if !(art.penalty.is_finite() && art.penalty >= 0.0) {
            return Err(Error::Schema(format!("invalid penalty {}", art.penalty)));
        }
        let f = art.n_formulations;
        let mut vectors = vec![0.0; f * art.vocabulary.len()];
        let mut index = HashMap::new();
        for (i, (name, sv)) in art.vocabulary.iter().zip(&art.vectors).enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate vocabulary entry '{name}'")));
            }
            if sv.indices.len() != sv.values.len() {
                return Err(Error::Schema(format!("'{name}': ragged sparse vector")));
            }
            for (&j, &x) in sv.indices.iter().zip(&sv.values) {
                if j >= f || !(0.0..=1.0).contains(&x) {
                    return Err(Error::Schema(format!(
                        "'{name}': entry ({j}, {x}) out of range"
                    )));
                }
                vectors[i * f + j] = x;
            }
        }
        Ok(IngredientEmbedding {
            vocabulary: art.vocabulary,
            index,
            n_formulations: f,
            vectors,
            penalty: art.penalty,
        })
    }
}

pub fn build_embedding(train: &[Formulation]) -> Result<IngredientEmbedding> {
    IngredientEmbedding::build(train)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk form of an embedding: sparse rows plus the penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingArtifact {
    pub format: String,
    pub version: u32,
    pub n_formulations: usize,
    pub penalty: f64,
    pub vocabulary: Vec<String>,
    pub vectors: Vec<SparseVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelvetScore {
    pub score: f64,
    pub oov_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<VelvetDiagnostic>,
}

fn dedup_keys<'a, I: IntoIterator<Item = &'a str>>(names: I) -> Vec<String> {
    let mut seen = HashSet::new();
    names
        .into_iter()
        .map(normalize_text)
        .filter(|k| !k.is_empty() && seen.insert(k.clone()))
        .collect()
}

/// Scores two name lists. Names are normalized and deduplicated first.
pub fn velvet_score_names(
    predicted: &[&str],
    reference: &[&str],
    emb: &IngredientEmbedding,
) -> VelvetScore {
    let p = dedup_keys(predicted.iter().copied());
    let r = dedup_keys(reference.iter().copied());
    let oov_count = p
        .iter()
        .chain(&r)
        .filter(|k| !emb.index.contains_key(*k))
        .count();
    let mut diagnostics = Vec::new();
    if emb.is_degenerate() {
        diagnostics.push(VelvetDiagnostic::DegenerateEmbedding);
    }
    if p.is_empty() || r.is_empty() {
        diagnostics.push(VelvetDiagnostic::EmptySide);
        return VelvetScore {
            score: emb.penalty,
            oov_count,
            diagnostics,
        };
    }
    let mut total = 0.0;
    for a in &p {
        for b in &r {
            total += emb.pair_cost(a, b);
        }
    }
    VelvetScore {
        score: total / (p.len() * r.len()) as f64,
        oov_count,
        diagnostics,
    }
}

pub fn velvet_score(
    prediction: &ParsedResponse,
    reference: &ParsedResponse,
    emb: &IngredientEmbedding,
) -> VelvetScore {
    velvet_score_names(
        &prediction.normalized_names(),
        &reference.normalized_names(),
        emb,
    )
}

/// Mean distance from the API to each predicted excipient (the API-centred
/// variant of the metric).
pub fn velvet_api_score(api: &str, prediction: &ParsedResponse, emb: &IngredientEmbedding) -> VelvetScore {
    velvet_score_names(&prediction.normalized_names(), &[api], emb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelvetResult {
    pub per_example: Vec<VelvetScore>,
    pub mean: f64,
    pub std: f64,
}

impl VelvetResult {
    pub fn from_scores(per_example: Vec<VelvetScore>) -> Self {
        let xs: Vec<f64> = per_example.iter().map(|s| s.score).collect();
        VelvetResult {
            mean: mean(&xs),
            std: sample_std(&xs),
            per_example,
        }
    }
}

/// Scores `(prediction, reference)` pairs.
pub fn velvet_corpus(
    pairs: &[(ParsedResponse, ParsedResponse)],
    emb: &IngredientEmbedding,
) -> Result<VelvetResult> {
    if pairs.is_empty() {
        return Err(Error::domain("VELVET over an empty set of pairs"));
    }
    Ok(VelvetResult::from_scores(
        pairs
            .iter()
            .map(|(p, r)| velvet_score(p, r, emb))
            .collect(),
    ))
}
