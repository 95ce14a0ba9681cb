//! Independent reference implementations and generators shared by the
//! integration tests. Nothing here calls into the library's metric code.

#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;
use velvet_core::formulation::{FilamentAspect, Formulation, Printability};

pub fn ngrams<'a>(xs: &'a [&'a str], n: usize) -> Vec<&'a [&'a str]> {
    if xs.len() < n {
        return Vec::new();
    }
    (0..=xs.len() - n).map(|i| &xs[i..i + n]).collect()
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Clipped overlap by greedy matching: each prediction n-gram consumes one
/// unused equal reference n-gram.
fn clipped_overlap(reference: &[&[&str]], prediction: &[&[&str]]) -> usize {
    let mut used = vec![false; reference.len()];
    let mut overlap = 0;
    for g in prediction {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *g) {
            used[j] = true;
            overlap += 1;
        }
    }
    overlap
}

/// (precision, recall, f1)
pub fn rouge_n(reference: &[&str], prediction: &[&str], n: usize) -> (f64, f64, f64) {
    let r = ngrams(reference, n);
    let p = ngrams(prediction, n);
    let overlap = clipped_overlap(&r, &p);
    let (precision, recall) = (ratio(overlap, p.len()), ratio(overlap, r.len()));
    (precision, recall, f1(precision, recall))
}

fn is_subsequence(needle: &[&str], hay: &[&str]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

/// Longest common subsequence by enumerating every subsequence of the
/// shorter input. Exponential; keep inputs short.
pub fn lcs(a: &[&str], b: &[&str]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "brute-force LCS input too long");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&str> = (0..short.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| short[i])
            .collect();
        if is_subsequence(&sub, long) {
            best = k;
        }
    }
    best
}

pub fn rouge_l(reference: &[&str], prediction: &[&str]) -> (f64, f64, f64) {
    let l = lcs(reference, prediction);
    let (precision, recall) = (ratio(l, prediction.len()), ratio(l, reference.len()));
    (precision, recall, f1(precision, recall))
}

pub fn bleu(references: &[Vec<&str>], predictions: &[Vec<&str>], max_n: usize) -> f64 {
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (r, p) in references.iter().zip(predictions) {
            let rg = ngrams(r, n);
            let pg = ngrams(p, n);
            matched += clipped_overlap(&rg, &pg);
            total += pg.len();
        }
        if matched == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln() / max_n as f64;
    }
    let r: usize = references.iter().map(|x| x.len()).sum();
    let c: usize = predictions.iter().map(|x| x.len()).sum();
    if c == 0 {
        return 0.0;
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * log_sum.exp()
}

pub fn normalize(s: &str) -> String {
    let mut out = String::new();
    let mut gap = false;
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

/// Mean all-pairs distance over a dense ingredients × formulations matrix
/// built with explicit loops.
pub fn velvet(train: &[Vec<(&str, f64)>], predicted: &[&str], reference: &[&str]) -> f64 {
    let mut names: Vec<String> = Vec::new();
    for f in train {
        for (n, _) in f {
            let k = normalize(n);
            if !k.is_empty() && !names.contains(&k) {
                names.push(k);
            }
        }
    }
    let cols = train.len();
    let mut m = vec![vec![0.0f64; cols]; names.len()];
    for (j, f) in train.iter().enumerate() {
        for (n, pct) in f {
            let k = normalize(n);
            if let Some(i) = names.iter().position(|x| *x == k) {
                m[i][j] = (m[i][j] + pct / 100.0).min(1.0);
            }
        }
    }
    let dist = |a: usize, b: usize| -> f64 {
        let mut s = 0.0;
        for (x, y) in m[a].iter().zip(&m[b]) {
            s += (x - y) * (x - y);
        }
        s.sqrt()
    };
    let mut penalty = 0.0f64;
    for a in 0..names.len() {
        for b in 0..names.len() {
            penalty = penalty.max(dist(a, b));
        }
    }
    let mut p: Vec<String> = Vec::new();
    for x in predicted {
        let k = normalize(x);
        if !k.is_empty() && !p.contains(&k) {
            p.push(k);
        }
    }
    let mut r: Vec<String> = Vec::new();
    for x in reference {
        let k = normalize(x);
        if !k.is_empty() && !r.contains(&k) {
            r.push(k);
        }
    }
    if p.is_empty() || r.is_empty() {
        return penalty;
    }
    let mut total = 0.0;
    for a in &p {
        for b in &r {
            let ia = names.iter().position(|x| x == a);
            let ib = names.iter().position(|x| x == b);
            total += match (ia, ib) {
                (Some(i), Some(j)) => dist(i, j),
                _ => penalty,
            };
        }
    }
    total / (p.len() * r.len()) as f64
}

pub const NAME_POOL: &[&str] = &[
    "HPMC",
    "HPC",
    "PCL",
    "PEG2000",
    "PEG6000",
    "Eudragit",
    "Eudragit EPO",
    "Eudragit L100",
    "Methyl paraben",
    "Polyethylene glycol PEG8000",
    "Guar gum",
    "Shellac",
    "Mannitol",
    "Magnesium stearate",
    "Triethyl citrate",
    "Talc",
    "Sorbitol",
    "Kollidon VA64",
    "Soluplus",
    "Hydroxypropyl cellulose Klucel EF",
    "Polyvinyl alcohol Parateck MXP",
    "PolylacticacidPLAIngeo4043D",
];

pub const API_POOL: &[&str] = &[
    "Paracetamol",
    "Ciprofloxacin",
    "Theophylline",
    "Clobetasol Propionate",
    "Amlodipine besylate",
    "Felodipine",
    "Itraconazole",
];

pub const ASPECTS: [FilamentAspect; 5] = [
    FilamentAspect::Good,
    FilamentAspect::Flexible,
    FilamentAspect::Brittle,
    FilamentAspect::Unextrudable,
    FilamentAspect::Unknown,
];

pub const PRINTABILITY: [Printability; 3] = [Printability::Yes, Printability::No, Printability::Unknown];

fn random_word<R: Rng>(rng: &mut R) -> String {
    const FIRST: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
    const REST: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let len = rng.random_range(2..10);
    let mut w = String::new();
    w.push(*FIRST.choose(rng).unwrap() as char);
    for _ in 1..len {
        w.push(*REST.choose(rng).unwrap() as char);
    }
    w
}

/// Real-looking names most of the time, random multi-word names otherwise.
pub fn random_name<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.6) {
        NAME_POOL.choose(rng).unwrap().to_string()
    } else {
        let words = rng.random_range(1..4);
        (0..words).map(|_| random_word(rng)).collect::<Vec<_>>().join(" ")
    }
}

/// `parts` positive shares, in hundredths of a percent, summing to 100.
pub fn random_shares<R: Rng>(rng: &mut R, parts: usize) -> Vec<f64> {
    let mut cuts: Vec<u32> = Vec::new();
    while cuts.len() < parts - 1 {
        let c = rng.random_range(1..10_000);
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let mut prev = 0;
    let mut out = Vec::with_capacity(parts);
    for c in cuts.into_iter().chain([10_000]) {
        out.push((c - prev) as f64 / 100.0);
        prev = c;
    }
    out
}

/// A valid single-API formulation; returns it with its API name.
pub fn random_formulation<R: Rng>(rng: &mut R, id: usize) -> (Formulation, String) {
    let api = API_POOL.choose(rng).unwrap().to_string();
    let n_exc = rng.random_range(1..7);
    let mut names: Vec<String> = Vec::new();
    let mut keys = vec![normalize(&api)];
    while names.len() < n_exc {
        let n = random_name(rng);
        let k = normalize(&n);
        if !keys.contains(&k) {
            keys.push(k);
            names.push(n);
        }
    }
    let shares = random_shares(rng, n_exc + 1);
    let composition: Vec<(String, f64)> = std::iter::once(api.clone())
        .chain(names)
        .zip(shares)
        .collect();
    let f = Formulation::new(id.to_string(), composition).with_labels(
        *PRINTABILITY.choose(rng).unwrap(),
        *ASPECTS.choose(rng).unwrap(),
    );
    (f, api)
}

/// Welch fixture generated once with scipy.stats.ttest_ind(equal_var=False).
#[derive(serde::Deserialize)]
pub struct WelchCase {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn welch_cases() -> Vec<WelchCase> {
    #[derive(serde::Deserialize)]
    struct Fixture {
        cases: Vec<WelchCase>,
    }
    let text = include_str!("../fixtures/welch_scipy.json");
    serde_json::from_str::<Fixture>(text).unwrap().cases
}

#[derive(serde::Deserialize)]
pub struct ExpectedExcipient {
    pub name: String,
    pub proportion: Option<f64>,
    pub unit: velvet_core::parser::Unit,
}

#[derive(serde::Deserialize)]
pub struct ResponseCase {
    pub label: String,
    pub text: String,
    pub printable: Printability,
    pub aspect: FilamentAspect,
    pub excipients: Option<Vec<ExpectedExcipient>>,
    pub diagnostics: Option<Vec<velvet_core::parser::DiagnosticCode>>,
}

pub fn response_cases() -> Vec<ResponseCase> {
    #[derive(serde::Deserialize)]
    struct Fixture {
        cases: Vec<ResponseCase>,
    }
    let text = include_str!("../fixtures/responses.json");
    serde_json::from_str::<Fixture>(text).unwrap().cases
}

/// Compares a parse against a fixture case; returns a description of the
/// first mismatch.
pub fn check_response_case(case: &ResponseCase) -> Result<(), String> {
    let p = velvet_core::parse_response(&case.text);
    if p.printable != case.printable {
        return Err(format!("printable {:?} != {:?}", p.printable, case.printable));
    }
    if p.aspect != case.aspect {
        return Err(format!("aspect {:?} != {:?}", p.aspect, case.aspect));
    }
    if let Some(expected) = &case.excipients {
        let got: Vec<(&str, Option<f64>, velvet_core::parser::Unit)> = p
            .excipients
            .iter()
            .map(|e| (e.name.as_str(), e.proportion, e.unit))
            .collect();
        let want: Vec<(&str, Option<f64>, velvet_core::parser::Unit)> = expected
            .iter()
            .map(|e| (e.name.as_str(), e.proportion, e.unit))
            .collect();
        if got != want {
            return Err(format!("excipients {got:?} != {want:?}"));
        }
    }
    if let Some(codes) = &case.diagnostics {
        let got: Vec<_> = p.diagnostics.iter().map(|d| d.code).collect();
        if &got != codes {
            return Err(format!("diagnostics {got:?} != {codes:?}"));
        }
    }
    for e in &p.excipients {
        if e.normalized_name != normalize(&e.name) {
            return Err(format!("normalized name of {:?}", e.name));
        }
    }
    Ok(())
}
