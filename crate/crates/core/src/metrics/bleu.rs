use std::collections::HashMap;

use super::tokenize::tokenize;

pub const MAX_ORDER: usize = 4;

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and total candidate n-grams at order `n`.
pub fn modified_precision(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let total = candidate.len().saturating_sub(n - 1);
    let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
    let matched = cand
        .iter()
        .map(|(g, &c)| {
            let max_ref = refs.iter().filter_map(|r| r.get(g)).copied().max().unwrap_or(0);
            c.min(max_ref)
        })
        .sum();
    (matched, total)
}

/// Reference length closest to the candidate length; ties go to the shorter.
pub fn closest_ref_len(candidate_len: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(candidate_len), r))
        .unwrap_or(0)
}

pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len < reference_len {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    } else {
        1.0
    }
}

/// Sentence BLEU-1..BLEU-4 from pre-tokenized text.
///
/// No smoothing: a zero precision at any order gives 0. Orders longer than
/// the candidate are left out of the geometric mean, so a short candidate
/// identical to its reference still scores 1.
pub fn bleu_scores(candidate: &[String], references: &[Vec<String>]) -> [f64; MAX_ORDER] {
    let mut out = [0.0; MAX_ORDER];
    if candidate.is_empty() || references.is_empty() {
        return out;
    }
    let bp = brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), references));
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 1..=MAX_ORDER {
        let usable = n.min(candidate.len());
        if usable == n {
            let (m, t) = modified_precision(candidate, references, n);
            if m == 0 {
                zero = true;
            } else {
                log_sum += (m as f64 / t as f64).ln();
            }
        }
        out[n - 1] = if zero {
            0.0
        } else {
            bp * (log_sum / usable as f64).exp()
        };
    }
    out
}

/// Sentence BLEU-`n` (1 to 4) of `candidate` against `references`.
pub fn bleu_n(candidate: &str, references: &[&str], n: usize) -> f64 {
    assert!((1..=MAX_ORDER).contains(&n), "BLEU order must be 1..=4");
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    bleu_scores(&cand, &refs)[n - 1]
}
