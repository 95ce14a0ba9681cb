//! Alpaca-format instruction/response corpora built from formulations,
//! hold-out splitting and JSONL persistence.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{Formulation, IngredientRegistry};
use crate::jsonl;
use crate::parser::{closing_sentence, normalize_text};

pub const DEFAULT_SYSTEM_INSTRUCTION: &str = "Given a drug and its quantity, suggest suitable excipients with their quantities, and indicate printability and filament aspect.";
pub const DEFAULT_INSTRUCTION_PATTERN: &str = "Recommend excipients for {dose} w/w% {api}";
pub const RESPONSE_PREFIX: &str = "For this formulation, use these excipients:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputStyle {
    /// The whole request lives in `instruction`; `input` stays empty.
    #[default]
    Instruction,
    /// `instruction` carries the system instruction and `input` reads
    /// `{api}: {dose} w/w%`.
    SeparateInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcipientOrder {
    #[default]
    Lexicographic,
    /// Composition order, e.g. CSV column order.
    AsGiven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub system_instruction: String,
    pub instruction_pattern: String,
    pub eos_token: String,
    pub input_style: InputStyle,
    pub excipient_order: ExcipientOrder,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            system_instruction: DEFAULT_SYSTEM_INSTRUCTION.to_string(),
            instruction_pattern: DEFAULT_INSTRUCTION_PATTERN.to_string(),
            eos_token: String::new(),
            input_style: InputStyle::default(),
            excipient_order: ExcipientOrder::default(),
        }
    }
}

impl PromptTemplates {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let t: PromptTemplates = toml::from_str(s)?;
        t.check()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn check(&self) -> Result<()> {
        for slot in ["{dose}", "{api}"] {
            let n = self.instruction_pattern.matches(slot).count();
            if n != 1 {
                return Err(Error::Schema(format!(
                    "instruction pattern must contain {slot} exactly once (found {n})"
                )));
            }
        }
        Ok(())
    }

    /// Fills the instruction pattern. With several APIs, the part of the
    /// pattern spanning both slots is repeated and joined with " and ".
    pub fn render_instruction(&self, apis: &[(&str, f64)]) -> String {
        let pat = &self.instruction_pattern;
        let (d, a) = (pat.find("{dose}"), pat.find("{api}"));
        let (Some(d), Some(a)) = (d, a) else {
            return pat.clone();
        };
        let lo = d.min(a);
        let hi = if d > a { d + "{dose}".len() } else { a + "{api}".len() };
        let item = &pat[lo..hi];
        let items: Vec<String> = apis
            .iter()
            .map(|(api, dose)| {
                item.replace("{dose}", &format_decimal(*dose))
                    .replace("{api}", api)
            })
            .collect();
        format!("{}{}{}", &pat[..lo], items.join(" and "), &pat[hi..])
    }
}

/// Shortest decimal that round-trips; integral values have no fraction part.
pub fn format_decimal(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub instruction: String,
    pub input: String,
    pub response: String,
}

/// Builds the response text for a list of `(name, w/w%)` excipients.
pub fn render_response(
    excipients: &[(&str, f64)],
    printable: crate::formulation::Printability,
    aspect: crate::formulation::FilamentAspect,
    eos_token: &str,
) -> String {
    let items: Vec<String> = excipients
        .iter()
        .map(|(name, pct)| format!("{name}: {} w/w%", format_decimal(*pct)))
        .collect();
    format!(
        "{RESPONSE_PREFIX} {}. {}{eos_token}",
        items.join(", "),
        closing_sentence(printable, aspect)
    )
}

pub fn formulation_to_pair(
    f: &Formulation,
    api: &str,
    templates: &PromptTemplates,
) -> Result<InstructionPair> {
    formulation_to_pair_multi(f, &[api], templates)
}

/// One pair per formulation; every listed API goes into the request and is
/// excluded from the excipient list.
pub fn formulation_to_pair_multi(
    f: &Formulation,
    apis: &[&str],
    templates: &PromptTemplates,
) -> Result<InstructionPair> {
    if apis.is_empty() {
        return Err(Error::domain(format!("formulation {}: no API given", f.id)));
    }
    let mut api_doses: Vec<(&str, f64)> = Vec::with_capacity(apis.len());
    let mut api_keys = Vec::with_capacity(apis.len());
    for api in apis {
        let key = normalize_text(api);
        let (name, dose) = f
            .composition
            .iter()
            .find(|(n, _)| normalize_text(n) == key)
            .ok_or_else(|| {
                Error::domain(format!(
                    "formulation {}: API '{api}' is not in the composition",
                    f.id
                ))
            })?;
        api_doses.push((name.as_str(), *dose));
        api_keys.push(key);
    }
    let mut excipients: Vec<(&str, f64)> = f
        .composition
        .iter()
        .filter(|(n, _)| !api_keys.contains(&normalize_text(n)))
        .map(|(n, v)| (n.as_str(), *v))
        .collect();
    if excipients.is_empty() {
        return Err(Error::domain(format!(
            "formulation {} has no excipients",
            f.id
        )));
    }
    if templates.excipient_order == ExcipientOrder::Lexicographic {
        excipients.sort_by(|a, b| a.0.cmp(b.0));
    }

    let (instruction, input) = match templates.input_style {
        InputStyle::Instruction => (templates.render_instruction(&api_doses), String::new()),
        InputStyle::SeparateInput => {
            let input = api_doses
                .iter()
                .map(|(api, dose)| format!("{api}: {} w/w%", format_decimal(*dose)))
                .collect::<Vec<_>>()
                .join(", ");
            (templates.system_instruction.clone(), input)
        }
    };
    Ok(InstructionPair {
        instruction,
        input,
        response: render_response(&excipients, f.printable, f.aspect, &templates.eos_token),
    })
}

/// Formulations that could not be turned into a pair, with the reason.
#[derive(Debug, Clone, Default)]
pub struct FormatOutcome {
    pub pairs: Vec<InstructionPair>,
    pub ids: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

/// Converts a dataset using the registry to tell APIs from excipients.
pub fn dataset_to_pairs(
    dataset: &[Formulation],
    registry: &IngredientRegistry,
    templates: &PromptTemplates,
) -> FormatOutcome {
    let mut out = FormatOutcome::default();
    for f in dataset {
        let apis: Vec<&str> = f
            .composition
            .keys()
            .filter(|n| registry.is_api(n))
            .map(|n| n.as_str())
            .collect();
        if apis.is_empty() {
            out.skipped.push((f.id.clone(), "no API in composition".into()));
            continue;
        }
        match formulation_to_pair_multi(f, &apis, templates) {
            Ok(p) => {
                out.pairs.push(p);
                out.ids.push(f.id.clone());
            }
            Err(e) => out.skipped.push((f.id.clone(), e.to_string())),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn new(test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::domain(format!(
                "test fraction must be in [0, 1], got {test_fraction}"
            )));
        }
        Ok(SplitSpec {
            test_fraction,
            seed,
        })
    }

    pub fn test_size(&self, n: usize) -> usize {
        ((self.test_fraction * n as f64).round() as usize).min(n)
    }
}

/// Hold-out split by seeded shuffle. Both halves keep the dataset's order.
pub fn split_holdout<T: Clone>(dataset: &[T], spec: &SplitSpec) -> (Vec<T>, Vec<T>) {
    let n = dataset.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let mut in_test = vec![false; n];
    for &i in &idx[..spec.test_size(n)] {
        in_test[i] = true;
    }
    let mut train = Vec::with_capacity(n);
    let mut test = Vec::new();
    for (item, t) in dataset.iter().zip(in_test) {
        if t {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, test)
}

pub fn write_jsonl(pairs: &[InstructionPair], path: &Path) -> Result<()> {
    jsonl::write_records(pairs, path)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<InstructionPair>> {
    jsonl::read_records(path, &["instruction", "input", "response"])
}
