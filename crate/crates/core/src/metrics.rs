//! Corpus BLEU and ROUGE-1/-2/-L over a shared lowercase word tokenizer.
//! No stemming, no stop words, no smoothing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase tokens, none of them empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    /// Lowercases each token and drops empty ones.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenSequence(
            tokens
                .into_iter()
                .map(|t| t.as_ref().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maximal runs of alphanumeric characters, lowercased. Everything else
/// separates tokens.
pub fn tokenize(s: &str) -> TokenSequence {
    TokenSequence(
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, pred_total: usize, ref_total: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, pred_total);
        let recall = ratio(overlap, ref_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(pred: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    pred.iter()
        .map(|(g, &c)| reference.get(g).map_or(0, |&r| c.min(r)))
        .sum()
}

fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

pub fn rouge_n(reference: &TokenSequence, prediction: &TokenSequence, n: usize) -> RougeScore {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let r = ngram_counts(reference.tokens(), n);
    let p = ngram_counts(prediction.tokens(), n);
    RougeScore::from_counts(
        clipped_overlap(&p, &r),
        ngram_total(prediction.len(), n),
        ngram_total(reference.len(), n),
    )
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(reference: &TokenSequence, prediction: &TokenSequence) -> RougeScore {
    let l = lcs_len(reference.tokens(), prediction.tokens());
    RougeScore::from_counts(l, prediction.len(), reference.len())
}

/// Pooled BLEU sufficient statistics. Merging is associative, so corpora can
/// be reduced in any grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub ref_len: usize,
    pub pred_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        BleuStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            ref_len: 0,
            pred_len: 0,
        }
    }

    pub fn add(&mut self, reference: &TokenSequence, prediction: &TokenSequence) {
        for n in 1..=self.matches.len() {
            let r = ngram_counts(reference.tokens(), n);
            let p = ngram_counts(prediction.tokens(), n);
            self.matches[n - 1] += clipped_overlap(&p, &r);
            self.totals[n - 1] += ngram_total(prediction.len(), n);
        }
        self.ref_len += reference.len();
        self.pred_len += prediction.len();
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.ref_len += other.ref_len;
        self.pred_len += other.pred_len;
    }

    pub fn precisions(&self) -> Vec<f64> {
        self.matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
            .collect()
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.pred_len == 0 {
            0.0
        } else if self.pred_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.pred_len as f64).exp()
        }
    }

    pub fn score(&self) -> f64 {
        let ps = self.precisions();
        if ps.is_empty() || ps.contains(&0.0) {
            return 0.0;
        }
        let w = 1.0 / ps.len() as f64;
        let log_avg: f64 = ps.iter().map(|p| w * p.ln()).sum();
        self.brevity_penalty() * log_avg.exp()
    }
}

pub const BLEU_MAX_N: usize = 4;

pub fn bleu_corpus(
    references: &[TokenSequence],
    predictions: &[TokenSequence],
    max_n: usize,
) -> Result<f64> {
    if references.len() != predictions.len() {
        return Err(Error::domain(format!(
            "BLEU needs as many references as predictions ({} vs {})",
            references.len(),
            predictions.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::domain("BLEU over an empty corpus"));
    }
    if max_n == 0 {
        return Err(Error::domain("BLEU max_n must be at least 1"));
    }
    let mut stats = BleuStats::new(max_n);
    for (r, p) in references.iter().zip(predictions) {
        stats.add(r, p);
    }
    Ok(stats.score())
}
