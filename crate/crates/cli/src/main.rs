use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use velvet_client::{generate_batch, ClientError, EndpointConfig};
use velvet_core::alpaca::{
    dataset_to_pairs, read_jsonl, render_response, split_holdout, write_jsonl, PromptTemplates,
    SplitSpec,
};
use velvet_core::dataset::{load_wide_csv, load_wide_csv_with_diagnostics, save_wide_csv};
use velvet_core::eda::eda_summary;
use velvet_core::formulation::{validate_formulation, DatasetSchema, Formulation};
use velvet_core::generation::GenerationParams;
use velvet_core::harness::{
    compare_reports, evaluate_experiment, load_run_manifests, render_report, Comparison,
    ExperimentManifest, ExperimentReport, LoraLayer,
};
use velvet_core::jsonl::write_predictions;
use velvet_core::recommender::{fit, RecommenderModel};
use velvet_core::stats::DEFAULT_ALPHA;
use velvet_core::velvet::IngredientEmbedding;
use velvet_core::{Error, ErrorKind};

mod layout {
    pub const SCHEMA: &str = "schema.toml";
    pub const DATASET: &str = "dataset.csv";
    pub const TEMPLATES: &str = "templates.toml";
    pub const INGEST_REPORT: &str = "ingest.json";
    pub const EDA: &str = "eda";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const TRAIN_CSV: &str = "train.csv";
    pub const TEST_CSV: &str = "test.csv";
    pub const TRAIN_JSONL: &str = "train.jsonl";
    pub const TEST_JSONL: &str = "test.jsonl";
    pub const EMBEDDING: &str = "embedding.json";
    pub const MANIFESTS: &str = "manifests";
    pub const PREDICTIONS: &str = "predictions";
    pub const REPORTS: &str = "reports";
    pub const EXPERIMENTS: &str = "reports/experiments";
    pub const COMPARISONS: &str = "reports/comparisons";
}

#[derive(Parser)]
#[command(name = "velvet-kit", version, about = "Formulation corpus preparation and evaluation toolkit")]
struct Cli {
    /// Run directory holding inputs and outputs
    #[arg(long, global = true, default_value = ".")]
    run_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a wide CSV, copy it and its schema into the run directory
    Ingest(IngestArgs),
    /// Ingredient counts, API-excipient pairs and aspect shares
    Eda,
    /// Convert the whole dataset to instruction/response JSONL
    Format(TemplateArgs),
    /// Hold-out split; writes train/test CSV and JSONL and the VELVET embedding
    Split(SplitArgs),
    /// Co-occurrence baseline recommendation for one API
    Recommend(RecommendArgs),
    /// Collect predictions for the test split from an HTTP endpoint
    Generate(GenerateArgs),
    /// Score every manifest in the run directory
    Evaluate(EvaluateArgs),
    /// Welch t-tests between evaluated experiments
    Compare(CompareArgs),
    /// Render JSON, CSV and text reports from evaluated experiments
    Report,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Fail if any formulation has validation findings
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct TemplateArgs {
    /// Prompt template file; defaults to templates.toml in the run directory if present
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = SplitSpec::default().test_fraction)]
    test_fraction: f64,
    #[arg(long, default_value_t = SplitSpec::default().seed)]
    seed: u64,
    #[command(flatten)]
    templates: TemplateArgs,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    api: String,
    /// API proportion in w/w%
    #[arg(long)]
    dose: f64,
    #[arg(short, long, default_value_t = 3)]
    k: usize,
    /// Write the fitted model as JSON
    #[arg(long)]
    export_model: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment id; predictions go to predictions/<id>.jsonl
    #[arg(long)]
    id: String,
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    #[arg(long, default_value_t = velvet_core::generation::DEFAULT_MAX_NEW_TOKENS)]
    max_new_tokens: u32,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Environment variable holding a bearer token
    #[arg(long)]
    auth_env: Option<String>,
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// Prepend the template system instruction to every prompt
    #[arg(long)]
    system_prompt: bool,
    /// Input JSONL; defaults to test.jsonl in the run directory
    #[arg(long)]
    input: Option<PathBuf>,
    /// Learning rate recorded in the manifest
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    /// LoRA layers recorded in the manifest, e.g. Q,V
    #[arg(long, value_delimiter = ',', default_values = ["Q", "V"])]
    lora_layers: Vec<String>,
    #[command(flatten)]
    templates: TemplateArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Embedding artifact; defaults to embedding.json in the run directory
    #[arg(long, conflicts_with = "train_csv")]
    embedding: Option<PathBuf>,
    /// Build the embedding from this CSV instead
    #[arg(long, requires = "schema")]
    train_csv: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// First experiment id; with --b omitted, every pair is compared
    #[arg(long, requires = "b")]
    a: Option<String>,
    #[arg(long, requires = "a")]
    b: Option<String>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Client(ClientError),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        CliError::Client(e)
    }
}

impl CliError {
    fn category(&self) -> (&'static str, u8) {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Io => ("io", 3),
                ErrorKind::Schema => ("schema", 4),
                ErrorKind::Parse => ("parse", 5),
                ErrorKind::Domain => ("domain", 6),
            },
            CliError::Client(ClientError::Auth(_) | ClientError::MissingToken(_)) => ("auth", 7),
            CliError::Client(_) => ("endpoint", 8),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Client(e) => e.fmt(f),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = e.category();
            eprintln!("error [{category}]: {e}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let run = cli.run_dir.as_path();
    match cli.command {
        Command::Ingest(a) => ingest(run, a),
        Command::Eda => eda(run),
        Command::Format(a) => format(run, a),
        Command::Split(a) => split(run, a),
        Command::Recommend(a) => recommend(run, a),
        Command::Generate(a) => generate(run, a),
        Command::Evaluate(a) => evaluate(run, a),
        Command::Compare(a) => compare(run, a),
        Command::Report => report(run),
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_file(path: &Path, body: &str) -> CliResult {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load_dataset(run: &Path) -> CliResult<(DatasetSchema, Vec<Formulation>)> {
    let schema = DatasetSchema::load(&run.join(layout::SCHEMA))?;
    let data = load_wide_csv(&run.join(layout::DATASET), &schema)?;
    Ok((schema, data))
}

fn load_templates(run: &Path, args: &TemplateArgs) -> CliResult<PromptTemplates> {
    let path = match &args.templates {
        Some(p) => p.clone(),
        None => {
            let p = run.join(layout::TEMPLATES);
            if !p.exists() {
                return Ok(PromptTemplates::default());
            }
            p
        }
    };
    Ok(PromptTemplates::load(&path)?)
}

fn ingest(run: &Path, a: IngestArgs) -> CliResult {
    let schema = DatasetSchema::load(&a.schema)?;
    let loaded = load_wide_csv_with_diagnostics(&a.csv, &schema)?;
    for d in &loaded.diagnostics {
        log::warn!("row {}: {}", d.row, d.message);
    }
    let mut flagged = Vec::new();
    for f in &loaded.formulations {
        let report = validate_formulation(f, schema.sum_tolerance);
        if !report.is_valid() {
            for finding in &report.findings {
                log::warn!("formulation {}: {}", f.id, finding.message);
            }
            flagged.push(serde_json::json!({ "id": f.id, "findings": report.findings }));
        }
    }
    if a.strict && !flagged.is_empty() {
        return Err(Error::domain(format!(
            "{} of {} formulations failed validation",
            flagged.len(),
            loaded.formulations.len()
        ))
        .into());
    }
    create_dir(run)?;
    write_file(&run.join(layout::SCHEMA), &schema.to_toml_string())?;
    save_wide_csv(&run.join(layout::DATASET), &loaded.formulations, &schema)?;
    let summary = serde_json::json!({
        "n_formulations": loaded.formulations.len(),
        "row_diagnostics": loaded.diagnostics,
        "validation": flagged,
    });
    write_file(
        &run.join(layout::INGEST_REPORT),
        &serde_json::to_string_pretty(&summary).map_err(Error::from)?,
    )?;
    println!(
        "ingested {} formulations ({} with findings, {} row diagnostics)",
        loaded.formulations.len(),
        flagged.len(),
        loaded.diagnostics.len()
    );
    Ok(())
}

fn eda(run: &Path) -> CliResult {
    let (schema, data) = load_dataset(run)?;
    let report = eda_summary(&data, &schema);
    report.write_artifacts(&run.join(layout::EDA))?;
    let t = report.tables();
    println!("{} formulations", t.n_formulations);
    for (label, rows) in [("APIs", &t.api_counts), ("excipients", &t.excipient_counts)] {
        let top: Vec<String> = rows
            .iter()
            .take(5)
            .map(|r| format!("{} ({})", r.name, r.count))
            .collect();
        println!("top {label}: {}", top.join(", "));
    }
    Ok(())
}

fn format(run: &Path, a: TemplateArgs) -> CliResult {
    let (schema, data) = load_dataset(run)?;
    let templates = load_templates(run, &a)?;
    let out = dataset_to_pairs(&data, &schema.registry(), &templates);
    for (id, reason) in &out.skipped {
        log::warn!("skipped formulation {id}: {reason}");
    }
    write_jsonl(&out.pairs, &run.join(layout::PAIRS))?;
    println!("wrote {} pairs ({} skipped)", out.pairs.len(), out.skipped.len());
    Ok(())
}

fn split(run: &Path, a: SplitArgs) -> CliResult {
    let (schema, data) = load_dataset(run)?;
    let templates = load_templates(run, &a.templates)?;
    let spec = SplitSpec::new(a.test_fraction, a.seed)?;
    let (train, test) = split_holdout(&data, &spec);
    let registry = schema.registry();
    for (csv, jsonl, part) in [
        (layout::TRAIN_CSV, layout::TRAIN_JSONL, &train),
        (layout::TEST_CSV, layout::TEST_JSONL, &test),
    ] {
        save_wide_csv(&run.join(csv), part, &schema)?;
        let out = dataset_to_pairs(part, &registry, &templates);
        for (id, reason) in &out.skipped {
            log::warn!("skipped formulation {id}: {reason}");
        }
        write_jsonl(&out.pairs, &run.join(jsonl))?;
    }
    let embedding = IngredientEmbedding::build(&train)?;
    embedding.save(&run.join(layout::EMBEDDING))?;
    println!(
        "train {} / test {}; embedding over {} ingredients, penalty {:.6}",
        train.len(),
        test.len(),
        embedding.vocabulary().len(),
        embedding.penalty()
    );
    Ok(())
}

fn recommend(run: &Path, a: RecommendArgs) -> CliResult {
    let schema = DatasetSchema::load(&run.join(layout::SCHEMA))?;
    let train_path = run.join(layout::TRAIN_CSV);
    let source = if train_path.exists() {
        train_path
    } else {
        run.join(layout::DATASET)
    };
    let model: RecommenderModel = fit(&load_wide_csv(&source, &schema)?, &schema)?;
    if let Some(path) = &a.export_model {
        write_file(path, &model.to_json())?;
    }
    let rec = model.recommend(&a.api, a.dose, a.k)?;
    for d in &rec.diagnostics {
        log::warn!("{d:?}");
    }
    let excipients: Vec<(&str, f64)> = rec
        .formulation
        .composition
        .iter()
        .skip(1)
        .map(|(n, v)| (n.as_str(), *v))
        .collect();
    println!(
        "{}",
        render_response(&excipients, rec.formulation.printable, rec.formulation.aspect, "")
    );
    Ok(())
}

fn parse_lora(names: &[String]) -> CliResult<BTreeSet<LoraLayer>> {
    names
        .iter()
        .map(|n| match n.trim().to_ascii_uppercase().as_str() {
            "Q" => Ok(LoraLayer::Q),
            "K" => Ok(LoraLayer::K),
            "V" => Ok(LoraLayer::V),
            "O" => Ok(LoraLayer::O),
            other => Err(Error::domain(format!("unknown LoRA layer '{other}'")).into()),
        })
        .collect()
}

fn generate(run: &Path, a: GenerateArgs) -> CliResult {
    let params = GenerationParams::new(a.temperature, a.top_p, a.max_new_tokens)?;
    let lora_layers = parse_lora(&a.lora_layers)?;
    let input = a.input.clone().unwrap_or_else(|| run.join(layout::TEST_JSONL));
    let pairs = read_jsonl(&input)?;

    let mut cfg = EndpointConfig::new(&a.endpoint, &a.model);
    cfg.auth_env = a.auth_env.clone();
    cfg.max_concurrency = a.concurrency;
    cfg.timeout = Duration::from_secs(a.timeout_secs);
    cfg.max_retries = a.max_retries;
    if a.system_prompt {
        cfg.system_instruction = Some(load_templates(run, &a.templates)?.system_instruction);
    }

    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io(run, e))?;
    let batch = runtime.block_on(generate_batch(&cfg, &params, &pairs))?;

    let rel = PathBuf::from(layout::PREDICTIONS).join(format!("{}.jsonl", a.id));
    create_dir(&run.join(layout::PREDICTIONS))?;
    write_predictions(&batch.records, &run.join(&rel))?;
    let manifest = ExperimentManifest {
        id: a.id.clone(),
        model_name: a.model.clone(),
        learning_rate: a.learning_rate,
        lora_layers,
        temperature: a.temperature,
        top_p: a.top_p,
        prediction_file: rel,
    };
    manifest.check()?;
    let body = toml::to_string(&manifest)
        .map_err(|e| Error::Schema(format!("manifest serialization: {e}")))?;
    write_file(
        &run.join(layout::MANIFESTS).join(format!("{}.toml", a.id)),
        &body,
    )?;
    let retried = batch.attempts.iter().filter(|&&n| n > 1).count();
    println!(
        "{}: {} predictions, {} failed, {} needed retries",
        a.id,
        batch.records.len(),
        batch.failures(),
        retried
    );
    Ok(())
}

fn load_embedding(run: &Path, a: &EvaluateArgs) -> CliResult<IngredientEmbedding> {
    if let Some(csv) = &a.train_csv {
        let schema = DatasetSchema::load(a.schema.as_deref().expect("clap enforces --schema"))?;
        return Ok(IngredientEmbedding::build(&load_wide_csv(csv, &schema)?)?);
    }
    let path = a
        .embedding
        .clone()
        .unwrap_or_else(|| run.join(layout::EMBEDDING));
    Ok(IngredientEmbedding::load(&path)?)
}

fn evaluate(run: &Path, a: EvaluateArgs) -> CliResult {
    let embedding = load_embedding(run, &a)?;
    let manifests = load_run_manifests(run)?;
    if manifests.is_empty() {
        return Err(Error::domain(format!(
            "no manifests in {}",
            run.join(layout::MANIFESTS).display()
        ))
        .into());
    }
    let dir = run.join(layout::EXPERIMENTS);
    create_dir(&dir)?;
    for m in &manifests {
        let report = evaluate_experiment(m, &embedding)?;
        let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        write_file(&dir.join(format!("{}.json", m.id)), &json)?;
        write_file(&dir.join(format!("{}.csv", m.id)), &report.per_example_csv())?;
        println!(
            "{}: n={} BLEU {:.4} ROUGE-1 {:.4} ROUGE-2 {:.4} ROUGE-L {:.4} VELVET {:.4}",
            m.id,
            report.n_examples,
            report.bleu,
            report.rouge1.mean,
            report.rouge2.mean,
            report.rouge_l.mean,
            report.velvet.mean
        );
    }
    Ok(())
}

fn load_reports(run: &Path) -> CliResult<Vec<ExperimentReport>> {
    load_json_dir(&run.join(layout::EXPERIMENTS))
}

fn load_json_dir<T: serde::de::DeserializeOwned>(dir: &Path) -> CliResult<Vec<T>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text).map_err(Error::from)?)
        })
        .collect()
}

fn compare(run: &Path, a: CompareArgs) -> CliResult {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::domain(format!("alpha must be in (0, 1), got {}", a.alpha)).into());
    }
    let reports = load_reports(run)?;
    let find = |id: &str| {
        reports
            .iter()
            .find(|r| r.manifest.id == id)
            .ok_or_else(|| Error::domain(format!("no evaluated experiment '{id}'")))
    };
    let pairs: Vec<(&ExperimentReport, &ExperimentReport)> = match (&a.a, &a.b) {
        (Some(x), Some(y)) => vec![(find(x)?, find(y)?)],
        _ => {
            let mut v = Vec::new();
            for (i, x) in reports.iter().enumerate() {
                for y in &reports[i + 1..] {
                    v.push((x, y));
                }
            }
            v
        }
    };
    if pairs.is_empty() {
        return Err(Error::domain("need at least two evaluated experiments to compare").into());
    }
    let dir = run.join(layout::COMPARISONS);
    create_dir(&dir)?;
    for (x, y) in pairs {
        let c: Comparison = compare_reports(x, y, a.alpha);
        let json = serde_json::to_string_pretty(&c).map_err(Error::from)?;
        write_file(&dir.join(format!("{}__{}.json", c.a, c.b)), &json)?;
        for r in &c.results {
            println!(
                "{} vs {} {:<8} t={:+.4} df={:.2} p={:.4e}{}",
                c.a,
                c.b,
                r.metric,
                r.t_statistic,
                r.df,
                r.p_value,
                if r.significant { " *" } else { "" }
            );
        }
        for s in &c.skipped {
            println!("{} vs {} {:<8} skipped: {}", c.a, c.b, s.metric, s.reason);
        }
    }
    Ok(())
}

fn report(run: &Path) -> CliResult {
    let reports = load_reports(run)?;
    let comparisons: Vec<Comparison> = load_json_dir(&run.join(layout::COMPARISONS))?;
    let rendered = render_report(&reports, &comparisons);
    rendered.write_to(&run.join(layout::REPORTS))?;
    print!("{}", rendered.table);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        let code = |e: CliError| e.category().1;
        assert_eq!(code(Error::domain("x").into()), 6);
        assert_eq!(code(Error::Schema("x".into()).into()), 4);
        assert_eq!(code(Error::MissingKey { line: 1, key: "k".into() }.into()), 5);
        assert_eq!(code(ClientError::Auth(401).into()), 7);
        assert_eq!(code(ClientError::EmptyInput.into()), 8);
    }

    #[test]
    fn lora_names() {
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let set = parse_lora(&names(&["q", " V", "Q"])).unwrap();
        assert_eq!(set, BTreeSet::from([LoraLayer::Q, LoraLayer::V]));
        assert!(parse_lora(&names(&["X"])).is_err());
    }

    #[test]
    fn compare_ids_come_in_pairs() {
        assert!(Cli::try_parse_from(["velvet-kit", "compare", "--a", "x"]).is_err());
        assert!(Cli::try_parse_from(["velvet-kit", "compare", "--a", "x", "--b", "y"]).is_ok());
    }
}
