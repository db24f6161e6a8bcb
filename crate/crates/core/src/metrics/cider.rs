use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EvalSet, MetricsError, Result};

const MAX_N: usize = 4;
/// Width of the gaussian length penalty.
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiderReport {
    /// Corpus score per n-gram order, raw 0-10 scale.
    pub per_n: [f64; MAX_N],
    /// Mean of `per_n`.
    pub score: f64,
    /// Per-item score (mean over n), in item order.
    pub per_item: Vec<f64>,
}

type Gram<'a> = &'a [String];

struct TfIdf<'a> {
    vecs: [HashMap<Gram<'a>, f64>; MAX_N],
    norms: [f64; MAX_N],
    length: usize,
}

fn tf_idf<'a>(tokens: &'a [String], df: &HashMap<Gram<'a>, usize>, log_items: f64) -> TfIdf<'a> {
    let mut vecs: [HashMap<Gram<'a>, f64>; MAX_N] = Default::default();
    for n in 1..=MAX_N {
        if tokens.len() < n {
            continue;
        }
        for gram in tokens.windows(n) {
            *vecs[n - 1].entry(gram).or_insert(0.0) += 1.0;
        }
    }
    let mut norms = [0.0; MAX_N];
    for (vec, norm) in vecs.iter_mut().zip(norms.iter_mut()) {
        for (gram, weight) in vec.iter_mut() {
            // n-grams absent from every reference set get df clamped to 1
            let df = df.get(gram).copied().unwrap_or(0).max(1) as f64;
            *weight *= log_items - df.ln();
            *norm += *weight * *weight;
        }
        *norm = norm.sqrt();
    }
    TfIdf {
        vecs,
        norms,
        length: tokens.len(),
    }
}

#[allow(clippy::needless_range_loop)]
fn similarity(cand: &TfIdf<'_>, reference: &TfIdf<'_>) -> [f64; MAX_N] {
    let delta = cand.length as f64 - reference.length as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; MAX_N];
    for n in 0..MAX_N {
        if cand.norms[n] == 0.0 || reference.norms[n] == 0.0 {
            continue;
        }
        let mut dot = 0.0;
        for (gram, &c) in &cand.vecs[n] {
            if let Some(&r) = reference.vecs[n].get(gram) {
                dot += c.min(r) * r;
            }
        }
        out[n] = penalty * dot / (cand.norms[n] * reference.norms[n]);
    }
    out
}

/// CIDEr-D with count clipping and a gaussian length penalty (sigma 6).
///
/// Document frequency counts the items whose reference set contains an
/// n-gram; idf is `ln(items) - ln(max(1, df))`.
pub fn cider_d(set: &EvalSet) -> Result<CiderReport> {
    if set.len() < 2 {
        return Err(MetricsError::TooFewItems {
            metric: "cider_d",
            needed: 2,
            got: set.len(),
        });
    }
    let mut df: HashMap<Gram<'_>, usize> = HashMap::new();
    for item in set.items() {
        let mut grams: HashSet<Gram<'_>> = HashSet::new();
        for reference in &item.references {
            let tokens = reference.tokens();
            for n in 1..=MAX_N.min(tokens.len()) {
                grams.extend(tokens.windows(n));
            }
        }
        for gram in grams {
            *df.entry(gram).or_insert(0) += 1;
        }
    }
    let log_items = (set.len() as f64).ln();

    let mut per_n = [0.0; MAX_N];
    let mut per_item = Vec::with_capacity(set.len());
    for item in set.items() {
        let cand = tf_idf(item.candidate.tokens(), &df, log_items);
        let mut item_n = [0.0; MAX_N];
        for reference in &item.references {
            let reference = tf_idf(reference.tokens(), &df, log_items);
            for (acc, s) in item_n.iter_mut().zip(similarity(&cand, &reference)) {
                *acc += s;
            }
        }
        let refs = item.references.len() as f64;
        for (total, s) in per_n.iter_mut().zip(item_n.iter_mut()) {
            *s = 10.0 * *s / refs;
            *total += *s;
        }
        per_item.push(item_n.iter().sum::<f64>() / MAX_N as f64);
    }
    for v in per_n.iter_mut() {
        *v /= set.len() as f64;
    }
    let score = per_n.iter().sum::<f64>() / MAX_N as f64;
    Ok(CiderReport { per_n, score, per_item })
}
