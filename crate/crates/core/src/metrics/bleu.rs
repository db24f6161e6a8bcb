use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EvalSet, MetricsError, Result};

const MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Clipped n-gram precisions for n = 1..4.
    pub precisions: [f64; MAX_N],
    pub brevity_penalty: f64,
    /// Candidate and effective reference lengths summed over the corpus.
    pub candidate_length: usize,
    pub reference_length: usize,
    /// 0-100.
    pub score: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4: clipped counts summed over items, uniform weights, no
/// smoothing. The effective reference length per item is the closest
/// reference length, ties going to the shorter one.
pub fn bleu4(set: &EvalSet) -> Result<BleuReport> {
    if set.is_empty() {
        return Err(MetricsError::EmptyEvalSet);
    }
    let mut matched = [0usize; MAX_N];
    let mut total = [0usize; MAX_N];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;

    for item in set.items() {
        let cand = item.candidate.tokens();
        cand_len += cand.len();
        ref_len += item
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&r| (r.abs_diff(cand.len()), r))
            .expect("at least one reference");

        for n in 1..=MAX_N {
            let cand_counts = ngram_counts(cand, n);
            if cand_counts.is_empty() {
                continue;
            }
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for reference in &item.references {
                for (gram, count) in ngram_counts(reference.tokens(), n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, count) in cand_counts {
                matched[n - 1] += count.min(max_ref.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }

    let mut precisions = [0.0; MAX_N];
    for n in 0..MAX_N {
        if total[n] > 0 {
            precisions[n] = matched[n] as f64 / total[n] as f64;
        }
    }
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_N as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        precisions,
        brevity_penalty,
        candidate_length: cand_len,
        reference_length: ref_len,
        score,
    })
}
