//! CIDEr-D: TF-IDF weighted n-gram cosine similarity with clipped counts
//! and a gaussian length penalty, scaled by 10.

use std::collections::{HashMap, HashSet};

use super::bleu::ngram_counts;
use crate::par;

pub const DEFAULT_SIGMA: f64 = 6.0;
const ORDERS: usize = 4;

/// One question: candidate tokens and its reference token lists.
#[derive(Debug, Clone)]
pub struct CiderItem {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

struct TfIdf<'a> {
    /// Per order: n-gram -> weight.
    vectors: Vec<HashMap<&'a [String], f64>>,
    norms: [f64; ORDERS],
    length: usize,
}

/// Document frequencies over the reference sets; each question counts once
/// per n-gram regardless of how many references contain it.
fn document_frequency(items: &[CiderItem]) -> HashMap<&[String], usize> {
    let mut df = HashMap::new();
    for item in items {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &item.references {
            for n in 1..=ORDERS {
                seen.extend(r.windows(n));
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    df
}

fn tf_idf<'a>(tokens: &'a [String], df: &HashMap<&[String], usize>, log_docs: f64) -> TfIdf<'a> {
    let mut vectors = Vec::with_capacity(ORDERS);
    let mut norms = [0.0; ORDERS];
    for n in 1..=ORDERS {
        let v: HashMap<&[String], f64> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g, tf as f64 * (log_docs - d.ln()))
            })
            .collect();
        norms[n - 1] = v.values().map(|w| w * w).sum::<f64>().sqrt();
        vectors.push(v);
    }
    TfIdf {
        vectors,
        norms,
        length: tokens.len(),
    }
}

fn similarity(hyp: &TfIdf, reference: &TfIdf, sigma: f64) -> [f64; ORDERS] {
    let delta = hyp.length as f64 - reference.length as f64;
    let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
    let mut out = [0.0; ORDERS];
    for (n, slot) in out.iter_mut().enumerate() {
        let mut dot = 0.0;
        for (g, h) in &hyp.vectors[n] {
            if let Some(r) = reference.vectors[n].get(g) {
                dot += h.min(*r) * r;
            }
        }
        if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            dot /= hyp.norms[n] * reference.norms[n];
        }
        *slot = dot * penalty;
    }
    out
}

/// Per-question CIDEr-D scores; IDF comes from the references of `items`.
pub fn cider_per_question(items: &[CiderItem], sigma: f64) -> Vec<f64> {
    if items.is_empty() {
        return Vec::new();
    }
    let df = document_frequency(items);
    let log_docs = (items.len() as f64).ln();
    par::map(items, |item| {
        if item.references.is_empty() {
            return 0.0;
        }
        let hyp = tf_idf(&item.candidate, &df, log_docs);
        let total: f64 = item
            .references
            .iter()
            .map(|r| {
                let reference = tf_idf(r, &df, log_docs);
                similarity(&hyp, &reference, sigma).iter().sum::<f64>() / ORDERS as f64
            })
            .sum();
        10.0 * total / item.references.len() as f64
    })
}

/// Corpus CIDEr-D: mean of the per-question scores. `None` for an empty corpus.
pub fn cider(items: &[CiderItem], sigma: f64) -> Option<f64> {
    let scores = cider_per_question(items, sigma);
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}
