//! ROUGE-N and ROUGE-L over lowercased whitespace tokens, no stemming.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(hits: usize, candidate_total: usize, reference_total: usize) -> Self {
        if hits == 0 {
            return Self::default();
        }
        let precision = hits as f64 / candidate_total as f64;
        let recall = hits as f64 / reference_total as f64;
        Self {
            precision,
            recall,
            f1: 2.0 * precision * recall / (precision + recall),
        }
    }

    fn perfect() -> Self {
        Self {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
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

/// Clipped n-gram overlap. When neither side has an n-gram of order `n`
/// (e.g. one-word texts with n = 2), identical nonempty token sequences
/// score 1 and anything else scores 0.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    assert!(n >= 1, "rouge_n needs n ≥ 1");
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    let c = ngram_counts(&cand, n);
    let r = ngram_counts(&refr, n);
    let c_total: usize = c.values().sum();
    let r_total: usize = r.values().sum();
    if c_total == 0 && r_total == 0 {
        return if !cand.is_empty() && cand == refr {
            RougeScore::perfect()
        } else {
            RougeScore::default()
        };
    }
    let hits = c
        .iter()
        .map(|(gram, &count)| count.min(r.get(gram).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(hits, c_total, r_total)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    RougeScore::from_counts(lcs_len(&cand, &refr), cand.len(), refr.len())
}
