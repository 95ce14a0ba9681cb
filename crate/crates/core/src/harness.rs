//! Experiment manifests, per-experiment evaluation, statistical comparison
//! and report rendering.
//!
//! A run directory looks like
//!
//! ```text
//! run/
//!   manifests/*.toml    one ExperimentManifest per file
//!   predictions/*.jsonl prediction records referenced by the manifests
//!   embedding.json      VELVET embedding built from the training split
//!   reports/            evaluation output
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::{GenerationParams, DEFAULT_MAX_NEW_TOKENS};
use crate::jsonl::{read_predictions, PredictionRecord};
use crate::metrics::{bleu_corpus, rouge_l, rouge_n, tokenize, BLEU_MAX_N};
use crate::parser::parse_response;
use crate::stats::{welch_ttest, ComparisonResult, MeanStd};
use crate::velvet::{velvet_score, IngredientEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoraLayer {
    Q,
    K,
    V,
    O,
}

fn default_lora() -> BTreeSet<LoraLayer> {
    [LoraLayer::Q, LoraLayer::V].into()
}

fn default_learning_rate() -> f64 {
    1e-4
}

/// One point of a hyperparameter sweep. Training hyperparameters are
/// recorded as metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub id: String,
    pub model_name: String,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_lora")]
    pub lora_layers: BTreeSet<LoraLayer>,
    pub temperature: f64,
    pub top_p: f64,
    pub prediction_file: PathBuf,
}

impl ExperimentManifest {
    pub fn generation_params(&self) -> Result<GenerationParams> {
        GenerationParams::new(self.temperature, self.top_p, DEFAULT_MAX_NEW_TOKENS)
    }

    pub fn check(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Schema("experiment id is empty".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Schema(format!(
                "{}: learning rate must be positive, got {}",
                self.id, self.learning_rate
            )));
        }
        self.generation_params()
            .map_err(|e| Error::Schema(format!("{}: {e}", self.id)))?;
        Ok(())
    }

    /// "1e-2", "1e-4", "1e-6" for the swept values, otherwise the raw number.
    pub fn learning_rate_label(&self) -> String {
        for (v, label) in [(1e-2, "1e-2"), (1e-4, "1e-4"), (1e-6, "1e-6")] {
            if (self.learning_rate - v).abs() <= v * 1e-9 {
                return label.to_string();
            }
        }
        format!("{}", self.learning_rate)
    }

    pub fn lora_label(&self) -> String {
        self.lora_layers
            .iter()
            .map(|l| format!("{l:?}"))
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ExperimentManifest = toml::from_str(&text)?;
        m.check()?;
        Ok(m)
    }
}

/// Loads `run_dir/manifests/*.toml`, sorted by id. Relative prediction paths
/// resolve against the run directory.
pub fn load_run_manifests(run_dir: &Path) -> Result<Vec<ExperimentManifest>> {
    let dir = run_dir.join("manifests");
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let mut m = ExperimentManifest::load(&path)?;
        if m.prediction_file.is_relative() {
            m.prediction_file = run_dir.join(&m.prediction_file);
        }
        out.push(m);
    }
    check_unique_ids(&out)?;
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn check_unique_ids(manifests: &[ExperimentManifest]) -> Result<()> {
    let mut seen = HashSet::new();
    for m in manifests {
        if !seen.insert(m.id.as_str()) {
            return Err(Error::Schema(format!("duplicate experiment id '{}'", m.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub index: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub velvet: f64,
    pub oov_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest: ExperimentManifest,
    pub n_examples: usize,
    pub bleu: f64,
    pub rouge1: MeanStd,
    pub rouge2: MeanStd,
    pub rouge_l: MeanStd,
    pub velvet: MeanStd,
    pub per_example: Vec<ExampleScores>,
}

pub const COMPARED_METRICS: [&str; 4] = ["rouge1", "rouge2", "rouge_l", "velvet"];

impl ExperimentReport {
    pub fn metric_values(&self, metric: &str) -> Option<Vec<f64>> {
        let get: fn(&ExampleScores) -> f64 = match metric {
            "rouge1" => |e| e.rouge1,
            "rouge2" => |e| e.rouge2,
            "rouge_l" => |e| e.rouge_l,
            "velvet" => |e| e.velvet,
            _ => return None,
        };
        Some(self.per_example.iter().map(get).collect())
    }

    /// Aggregates as recomputed from the per-example table.
    pub fn recompute(&self) -> [MeanStd; 4] {
        COMPARED_METRICS.map(|m| MeanStd::of(&self.metric_values(m).unwrap()))
    }

    pub fn per_example_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.per_example {
            w.serialize(row).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV")
    }
}

/// Scores a list of prediction records. BLEU is pooled over the whole list;
/// every other metric is per record and summarised as mean ± sample std.
pub fn evaluate_records(
    manifest: &ExperimentManifest,
    records: &[PredictionRecord],
    embedding: &IngredientEmbedding,
) -> Result<ExperimentReport> {
    if records.is_empty() {
        return Err(Error::domain(format!(
            "{}: prediction file has no records",
            manifest.id
        )));
    }
    let mut refs = Vec::with_capacity(records.len());
    let mut preds = Vec::with_capacity(records.len());
    let mut per_example = Vec::with_capacity(records.len());
    for (index, rec) in records.iter().enumerate() {
        let rt = tokenize(&rec.reference);
        let pt = tokenize(&rec.prediction);
        let v = velvet_score(
            &parse_response(&rec.prediction),
            &parse_response(&rec.reference),
            embedding,
        );
        per_example.push(ExampleScores {
            index,
            rouge1: rouge_n(&rt, &pt, 1).f1,
            rouge2: rouge_n(&rt, &pt, 2).f1,
            rouge_l: rouge_l(&rt, &pt).f1,
            velvet: v.score,
            oov_count: v.oov_count,
            error: rec.error.clone(),
        });
        refs.push(rt);
        preds.push(pt);
    }
    let bleu = bleu_corpus(&refs, &preds, BLEU_MAX_N)?;
    let mut report = ExperimentReport {
        manifest: manifest.clone(),
        n_examples: records.len(),
        bleu,
        rouge1: MeanStd::default(),
        rouge2: MeanStd::default(),
        rouge_l: MeanStd::default(),
        velvet: MeanStd::default(),
        per_example,
    };
    let [r1, r2, rl, v] = report.recompute();
    report.rouge1 = r1;
    report.rouge2 = r2;
    report.rouge_l = rl;
    report.velvet = v;
    Ok(report)
}

pub fn evaluate_experiment(
    manifest: &ExperimentManifest,
    embedding: &IngredientEmbedding,
) -> Result<ExperimentReport> {
    let records = read_predictions(&manifest.prediction_file)?;
    evaluate_records(manifest, &records, embedding)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedComparison {
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub results: Vec<ComparisonResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedComparison>,
}

/// Welch tests on the per-example ROUGE and VELVET distributions of two
/// experiments. BLEU has a single corpus value and is not tested.
pub fn compare_reports(a: &ExperimentReport, b: &ExperimentReport, alpha: f64) -> Comparison {
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for metric in COMPARED_METRICS {
        let xa = a.metric_values(metric).unwrap();
        let xb = b.metric_values(metric).unwrap();
        match welch_ttest(metric, &xa, &xb, alpha) {
            Ok(r) => results.push(r),
            Err(e) => {
                let msg = e.to_string();
                let reason = msg
                    .strip_prefix(&format!("{metric}: "))
                    .unwrap_or(&msg)
                    .to_string();
                skipped.push(SkippedComparison {
                    metric: metric.to_string(),
                    reason,
                })
            }
        }
    }
    Comparison {
        a: a.manifest.id.clone(),
        b: b.manifest.id.clone(),
        results,
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub experiments: Vec<ExperimentReport>,
    pub comparisons: Vec<Comparison>,
}

impl ReportBundle {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub json: String,
    pub csv: String,
    pub table: String,
}

impl RenderedReport {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.json", &self.json),
            ("aggregates.csv", &self.csv),
            ("report.txt", &self.table),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

const CSV_HEADER: [&str; 17] = [
    "id",
    "model",
    "learning_rate",
    "lora_layers",
    "temperature",
    "top_p",
    "do_sample",
    "n_examples",
    "bleu",
    "rouge1_mean",
    "rouge1_std",
    "rouge2_mean",
    "rouge2_std",
    "rouge_l_mean",
    "rouge_l_std",
    "velvet_mean",
    "velvet_std",
];

pub fn render_report(reports: &[ExperimentReport], comparisons: &[Comparison]) -> RenderedReport {
    let mut experiments = reports.to_vec();
    experiments.sort_by(|a, b| a.manifest.id.cmp(&b.manifest.id));
    let mut comparisons = comparisons.to_vec();
    comparisons.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
    let bundle = ReportBundle {
        experiments,
        comparisons,
    };
    let json = serde_json::to_string_pretty(&bundle).expect("report serializes");

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory CSV");
    for r in &bundle.experiments {
        let m = &r.manifest;
        let do_sample = m
            .generation_params()
            .map(|p| p.do_sample().to_string())
            .unwrap_or_default();
        w.write_record([
            m.id.clone(),
            m.model_name.clone(),
            m.learning_rate_label(),
            m.lora_label(),
            m.temperature.to_string(),
            m.top_p.to_string(),
            do_sample,
            r.n_examples.to_string(),
            r.bleu.to_string(),
            r.rouge1.mean.to_string(),
            r.rouge1.std.to_string(),
            r.rouge2.mean.to_string(),
            r.rouge2.std.to_string(),
            r.rouge_l.mean.to_string(),
            r.rouge_l.std.to_string(),
            r.velvet.mean.to_string(),
            r.velvet.std.to_string(),
        ])
        .expect("in-memory CSV");
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV");

    RenderedReport {
        table: render_table(&bundle),
        json,
        csv,
    }
}

fn render_table(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<12} {:>6} {:<8} {:>5} {:>5} {:>5} {:>7} {:>15} {:>15} {:>15} {:>15}",
        "id", "model", "lr", "lora", "temp", "top_p", "n", "BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "VELVET"
    );
    let pm = |m: &MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
    for r in &bundle.experiments {
        let m = &r.manifest;
        let _ = writeln!(
            out,
            "{:<16} {:<12} {:>6} {:<8} {:>5} {:>5} {:>5} {:>7.4} {:>15} {:>15} {:>15} {:>15}",
            m.id,
            m.model_name,
            m.learning_rate_label(),
            m.lora_label(),
            m.temperature,
            m.top_p,
            r.n_examples,
            r.bleu,
            pm(&r.rouge1),
            pm(&r.rouge2),
            pm(&r.rouge_l),
            pm(&r.velvet),
        );
    }
    for c in &bundle.comparisons {
        let _ = writeln!(out, "\n{} vs {}", c.a, c.b);
        for r in &c.results {
            let _ = writeln!(
                out,
                "  {:<8} t = {:>9.4}  df = {:>8.2}  p = {:.3e}{}",
                r.metric,
                r.t_statistic,
                r.df,
                r.p_value,
                if r.significant { "  *" } else { "" }
            );
        }
        for s in &c.skipped {
            let _ = writeln!(out, "  {:<8} skipped: {}", s.metric, s.reason);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::Formulation;

    fn manifest(id: &str) -> ExperimentManifest {
        ExperimentManifest {
            id: id.into(),
            model_name: "llama2-7b".into(),
            learning_rate: 1e-4,
            lora_layers: default_lora(),
            temperature: 0.7,
            top_p: 0.9,
            prediction_file: PathBuf::from("predictions/x.jsonl"),
        }
    }

    fn embedding() -> IngredientEmbedding {
        IngredientEmbedding::build(&[
            Formulation::new("1", [("Paracetamol", 20.0), ("HPMC", 60.0), ("Talc", 20.0)]),
            Formulation::new("2", [("Paracetamol", 10.0), ("PCL", 90.0)]),
        ])
        .unwrap()
    }

    fn rec(reference: &str, prediction: &str) -> PredictionRecord {
        PredictionRecord {
            input: "Paracetamol: 20 w/w%".into(),
            reference: reference.into(),
            prediction: prediction.into(),
            error: None,
        }
    }

    const R1: &str = "For this formulation, use these excipients: HPMC: 60 w/w%, Talc: 20 w/w%. This is printable and has a Good filament aspect.";
    const R2: &str = "For this formulation, use these excipients: PCL: 90 w/w%. This is printable and has a Flexible filament aspect.";

    #[test]
    fn perfect_predictions() {
        let recs = [rec(R1, R1), rec(R2, R2)];
        let r = evaluate_records(&manifest("a"), &recs, &embedding()).unwrap();
        assert_eq!(r.bleu, 1.0);
        for m in [r.rouge1, r.rouge2, r.rouge_l] {
            assert_eq!(m, MeanStd { mean: 1.0, std: 0.0 });
        }
        // R1 has two excipients, so its all-pairs score is d(HPMC, Talc)/2
        let e = embedding();
        let expect = e.distance("hpmc", "talc").unwrap() / 2.0;
        assert!((r.per_example[0].velvet - expect).abs() < 1e-15);
        assert_eq!(r.per_example[1].velvet, 0.0);
    }

    #[test]
    fn empty_predictions() {
        let recs = [rec(R1, ""), rec(R2, "")];
        let e = embedding();
        let r = evaluate_records(&manifest("a"), &recs, &e).unwrap();
        assert_eq!(r.bleu, 0.0);
        assert_eq!(r.rouge1.mean, 0.0);
        assert_eq!(r.rouge_l.mean, 0.0);
        assert_eq!(r.velvet, MeanStd { mean: e.penalty(), std: 0.0 });
    }

    #[test]
    fn no_records() {
        assert!(evaluate_records(&manifest("a"), &[], &embedding()).is_err());
    }

    #[test]
    fn labels() {
        let mut m = manifest("a");
        assert_eq!(m.learning_rate_label(), "1e-4");
        assert_eq!(m.lora_label(), "Q+V");
        m.learning_rate = 3e-5;
        m.lora_layers = [LoraLayer::Q, LoraLayer::V, LoraLayer::K, LoraLayer::O].into();
        assert_eq!(m.learning_rate_label(), "0.00003");
        assert_eq!(m.lora_label(), "Q+K+V+O");
    }

    #[test]
    fn manifest_toml() {
        let text = r#"
id = "llama-lr4-ko"
model_name = "Llama2"
learning_rate = 1e-4
lora_layers = ["Q", "V", "K", "O"]
temperature = 0.0
top_p = 0.9
prediction_file = "predictions/llama.jsonl"
"#;
        let m: ExperimentManifest = toml::from_str(text).unwrap();
        m.check().unwrap();
        assert!(!m.generation_params().unwrap().do_sample());
        assert_eq!(m.lora_layers.len(), 4);
        let bad = text.replace("top_p = 0.9", "top_p = 1.9");
        let m: ExperimentManifest = toml::from_str(&bad).unwrap();
        assert!(m.check().is_err());
        assert!(toml::from_str::<ExperimentManifest>(&text.replace("\"O\"", "\"Z\"")).is_err());
    }

    #[test]
    fn duplicate_ids() {
        assert!(check_unique_ids(&[manifest("a"), manifest("a")]).is_err());
        assert!(check_unique_ids(&[manifest("a"), manifest("b")]).is_ok());
    }

    #[test]
    fn render_empty() {
        let r = render_report(&[], &[]);
        let back = ReportBundle::from_json(&r.json).unwrap();
        assert!(back.experiments.is_empty());
        assert_eq!(r.csv.lines().count(), 1);
        assert!(r.table.starts_with("id"));
    }

    #[test]
    fn render_two_sorted() {
        let e = embedding();
        let b = evaluate_records(&manifest("b"), &[rec(R1, R2), rec(R2, R1)], &e).unwrap();
        let a = evaluate_records(&manifest("a"), &[rec(R1, R1), rec(R2, R1)], &e).unwrap();
        let cmp = compare_reports(&a, &b, 0.05);
        let r = render_report(&[b.clone(), a.clone()], &[cmp]);
        let lines: Vec<_> = r.csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), CSV_HEADER.len());
        assert!(lines[1].starts_with("a,"));
        let back = ReportBundle::from_json(&r.json).unwrap();
        assert_eq!(back.experiments, vec![a, b]);
    }
}
