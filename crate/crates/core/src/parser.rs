//! Text normalization and structured extraction of model-generated
//! formulation responses.
//!
//! The expected response grammar is
//!
//! ```text
//! For this formulation, use these excipients: NAME: P w/w%, NAME: P w/w%.
//! This is printable and has a ASPECT filament aspect.
//! ```
//!
//! but fine-tuned models drift from it in every possible way (preambles,
//! trailing explanations, escape-sequence garbage, wrong units, no structure
//! at all). [`parse_response`] is total: anything unexpected is reported as a
//! [`Diagnostic`] instead of an error.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::formulation::{FilamentAspect, Printability};

const PREFIX_PATTERN: &str = r"(?i)for\s+this\s+formulation\s*,?\s*use\s+these\s+excipients\s*:";
const SUFFIX_PATTERN: &str = r"(?i)this\s+(?:is\s+(?:not\s+)?printable\s+and\s+)?has\s+an?\s+[^.\n]*?filament\s+aspect\s*\.?";

static PREFIX_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(PREFIX_PATTERN).unwrap());
static SUFFIX_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(SUFFIX_PATTERN).unwrap());
// the default system instruction, as models sometimes repeat it verbatim
static PROMPT_ECHO_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)given\s+a\s+drug\s+and\s+its\s+quantity\s*,\s*suggest\s+suitable\s+excipients\s+with\s+their\s+quantities\s*,\s*and\s+indicate\s+printability\s+and\s+filament\s+aspect\s*\.?",
    )
    .unwrap()
});
static TEMPLATE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!("{PREFIX_PATTERN}|{SUFFIX_PATTERN}")).unwrap());
static NOT_PRINTABLE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bis\s+not\s+printable\b").unwrap());
static PRINTABLE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bis\s+printable\b").unwrap());
static ASPECT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bhas\s+an?\s+([[:alpha:]]+)\s+filament\s+aspect").unwrap()
});
static LEADING_NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\d+(?:\.\d+)?").unwrap());
static ESCAPE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\u[0-9A-Fa-f]{2,4}").unwrap());

/// Lowercases ASCII letters and collapses every run of characters that are
/// not ASCII letters or digits into one space. The result has no leading or
/// trailing space.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut gap = false;
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.push(c.to_ascii_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

/// Removes the response template's fixed phrases, case-insensitively. The
/// aspect slot of the closing sentence matches any word.
pub fn strip_template_phrases(s: &str) -> String {
    let mut cur = s.to_string();
    loop {
        let next = TEMPLATE_RE.replace_all(&cur, "").into_owned();
        if next == cur {
            break;
        }
        cur = next;
    }
    cur.trim().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Unit {
    WwPct,
    Other,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagnosticCode {
    /// Segment without a `name: value` split.
    NoProportion,
    /// Proportion given in something other than w/w%.
    UnitMismatch,
    DuplicateIngredient,
    /// Nothing usable was extracted.
    EmptyParse,
    /// Text before the excipient list.
    LeadingText,
    /// Text after the closing sentence.
    TrailingText,
    /// Text after the closing sentence containing non-ASCII characters or
    /// literal `\uXXXX` escapes.
    NonAsciiTail,
    /// Segment dropped because it does not look like an ingredient.
    GarbageSegment,
    /// Aspect word not among the known categories.
    UnknownAspect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    /// Byte range into the parsed text.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedExcipient {
    pub name: String,
    pub normalized_name: String,
    pub proportion: Option<f64>,
    pub unit: Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub excipients: Vec<ParsedExcipient>,
    pub printable: Printability,
    pub aspect: FilamentAspect,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedResponse {
    pub fn has(&self, code: DiagnosticCode) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }

    /// Distinct normalized excipient names, in first-seen order.
    pub fn normalized_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.excipients
            .iter()
            .map(|e| e.normalized_name.as_str())
            .filter(|n| !n.is_empty() && seen.insert(*n))
            .collect()
    }

    /// Renders back into the response grammar. Parsing the output yields the
    /// same excipients, printability and aspect for template-conforming input.
    pub fn render(&self) -> String {
        let items: Vec<String> = self
            .excipients
            .iter()
            .map(|e| match (e.proportion, e.unit) {
                (Some(p), Unit::WwPct) => format!("{}: {p} w/w%", e.name),
                (Some(p), _) => format!("{}: {p}", e.name),
                (None, _) => e.name.clone(),
            })
            .collect();
        let mut out = format!(
            "For this formulation, use these excipients: {}.",
            items.join(", ")
        );
        out.push(' ');
        out.push_str(&closing_sentence(self.printable, self.aspect));
        out
    }
}

/// The response's closing sentence. Unknown printability drops the
/// printability clause but keeps the aspect.
pub fn closing_sentence(printable: Printability, aspect: FilamentAspect) -> String {
    match printable {
        Printability::Yes => format!("This is printable and has a {aspect} filament aspect."),
        Printability::No => format!("This is not printable and has a {aspect} filament aspect."),
        Printability::Unknown => format!("This has a {aspect} filament aspect."),
    }
}

fn is_escape_garbage(s: &str) -> bool {
    !s.is_ascii() || ESCAPE_RE.is_match(s)
}

fn offset_in(outer: &str, inner: &str) -> usize {
    inner.as_ptr() as usize - outer.as_ptr() as usize
}

fn trim_section_end(s: &str) -> &str {
    s.trim_end_matches(|c: char| c.is_whitespace() || c == '.')
}

fn looks_like_name(key: &str) -> bool {
    key.split(' ')
        .any(|tok| tok.len() >= 3 && tok.bytes().all(|b| b.is_ascii_alphabetic()))
}

/// Keeps the last clause of a name candidate: text after the last colon,
/// sentence break or line break (real or a literal `\n`), so
/// "filament aspect. Input: Paracetamol" becomes "Paracetamol".
fn last_clause(s: &str) -> &str {
    let cut = [
        s.rfind(':').map(|i| i + 1),
        s.rfind(". ").map(|i| i + 2),
        s.rfind('\n').map(|i| i + 1),
        s.rfind("\\n").map(|i| i + 2),
    ]
    .into_iter()
    .flatten()
    .max()
    .unwrap_or(0);
    &s[cut..]
}

fn parse_value(value: &str) -> (Option<f64>, Unit) {
    let v = value.trim();
    let (number, rest) = match LEADING_NUMBER_RE.find(v) {
        Some(m) => (m.as_str().parse::<f64>().ok(), &v[m.end()..]),
        None => (None, v),
    };
    let compact: String = rest
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_lowercase();
    let compact = compact.trim_end_matches('.');
    let unit = if compact.is_empty() {
        Unit::None
    } else if compact.contains("w/w%") {
        Unit::WwPct
    } else {
        Unit::Other
    };
    (number, unit)
}

/// Extracts excipients, printability and aspect from generated text.
pub fn parse_response(s: &str) -> ParsedResponse {
    let mut diagnostics = Vec::new();

    let printable = if NOT_PRINTABLE_RE.is_match(s) {
        Printability::No
    } else if PRINTABLE_RE.is_match(s) {
        Printability::Yes
    } else {
        Printability::Unknown
    };

    let aspect = match ASPECT_RE.captures(s) {
        Some(c) => {
            let word = c.get(1).unwrap();
            FilamentAspect::from_label(word.as_str()).unwrap_or_else(|| {
                diagnostics.push(Diagnostic {
                    code: DiagnosticCode::UnknownAspect,
                    span: word.range(),
                });
                FilamentAspect::Unknown
            })
        }
        None => FilamentAspect::Unknown,
    };

    let mut start = 0;
    if let Some(m) = PREFIX_RE.find(s) {
        if !s[..m.start()].trim().is_empty() {
            diagnostics.push(Diagnostic {
                code: DiagnosticCode::LeadingText,
                span: 0..m.start(),
            });
        }
        start = m.end();
    } else if let Some(m) = PROMPT_ECHO_RE.find(s) {
        diagnostics.push(Diagnostic {
            code: DiagnosticCode::LeadingText,
            span: 0..m.end(),
        });
        start = m.end();
    }
    let mut end = s.len();
    if let Some(m) = SUFFIX_RE.find_at(s, start) {
        end = m.start();
        let tail = &s[m.end()..];
        let trimmed = tail.trim();
        if !trimmed.is_empty() {
            let from = m.end() + offset_in(tail, trimmed);
            let code = if is_escape_garbage(trimmed) {
                DiagnosticCode::NonAsciiTail
            } else {
                DiagnosticCode::TrailingText
            };
            diagnostics.push(Diagnostic {
                code,
                span: from..from + trimmed.len(),
            });
        }
    }

    let section = trim_section_end(&s[start..end]);
    let mut excipients: Vec<ParsedExcipient> = Vec::new();
    let mut seen = HashSet::new();

    // template phrases repeated inside the list act as separators
    let mut pieces = Vec::new();
    let mut last = 0;
    for m in TEMPLATE_RE.find_iter(section) {
        pieces.push(&section[last..m.start()]);
        last = m.end();
    }
    pieces.push(&section[last..]);

    for piece in pieces {
        for raw in piece.split(',') {
            let seg = raw.trim();
            if seg.is_empty() {
                continue;
            }
            let seg_start = start + offset_in(&s[start..], seg);
            let span = seg_start..seg_start + seg.len();

            let (name, proportion, unit) = match seg.rfind(':') {
                Some(idx) => {
                    let name = last_clause(&seg[..idx]).trim().trim_end_matches('.').trim();
                    let (p, u) = parse_value(&seg[idx + 1..]);
                    (name, p, u)
                }
                None => {
                    let name = trim_section_end(seg).trim();
                    if !looks_like_name(&normalize_text(name)) {
                        diagnostics.push(Diagnostic {
                            code: DiagnosticCode::GarbageSegment,
                            span,
                        });
                        continue;
                    }
                    (name, None, Unit::None)
                }
            };
            let key = normalize_text(name);
            if key.is_empty() {
                diagnostics.push(Diagnostic {
                    code: DiagnosticCode::GarbageSegment,
                    span,
                });
                continue;
            }
            if proportion.is_none() {
                diagnostics.push(Diagnostic {
                    code: DiagnosticCode::NoProportion,
                    span: span.clone(),
                });
            } else if unit == Unit::Other {
                diagnostics.push(Diagnostic {
                    code: DiagnosticCode::UnitMismatch,
                    span: span.clone(),
                });
            }
            if !seen.insert(key.clone()) {
                diagnostics.push(Diagnostic {
                    code: DiagnosticCode::DuplicateIngredient,
                    span,
                });
            }
            excipients.push(ParsedExcipient {
                name: name.to_string(),
                normalized_name: key,
                proportion,
                unit,
            });
        }
    }

    if excipients.is_empty() {
        diagnostics.push(Diagnostic {
            code: DiagnosticCode::EmptyParse,
            span: 0..s.len(),
        });
    }

    ParsedResponse {
        excipients,
        printable,
        aspect,
        diagnostics,
    }
}
