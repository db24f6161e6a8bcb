use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EvalSet, MetricsError, Result, TokenizedCaption};

/// Anything that maps token lists to one vector per token.
pub trait TokenEmbedder {
    fn embed(&self, token_lists: &[Vec<String>]) -> Result<Vec<Vec<Vec<f64>>>>;
}

impl<F> TokenEmbedder for F
where
    F: Fn(&[Vec<String>]) -> Result<Vec<Vec<Vec<f64>>>>,
{
    fn embed(&self, token_lists: &[Vec<String>]) -> Result<Vec<Vec<Vec<f64>>>> {
        self(token_lists)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BertScoreOptions {
    pub use_idf: bool,
    /// Rescale as `(x - b) / (1 - b)` when set.
    pub baseline: Option<f64>,
}

impl Default for BertScoreOptions {
    fn default() -> Self {
        BertScoreOptions {
            use_idf: true,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScoreItem {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertScoreReport {
    /// Corpus means of the per-item values, unscaled.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub items: Vec<BertScoreItem>,
}

impl BertScoreReport {
    /// F1 on the reported 0-100 scale.
    pub fn score(&self) -> f64 {
        self.f1 * 100.0
    }
}

struct Idf {
    weights: HashMap<String, f64>,
    unseen: f64,
}

impl Idf {
    // ln((M + 1) / (df + 1)) over M reference documents
    fn from_corpus(corpus: &[TokenizedCaption]) -> Self {
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            let unique: HashSet<&str> = doc.tokens().iter().map(String::as_str).collect();
            for token in unique {
                *df.entry(token).or_insert(0) += 1;
            }
        }
        let m = corpus.len() as f64;
        Idf {
            weights: df
                .into_iter()
                .map(|(t, d)| (t.to_owned(), ((m + 1.0) / (d as f64 + 1.0)).ln()))
                .collect(),
            unseen: (m + 1.0).ln(),
        }
    }

    fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(self.unseen)
    }
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(MetricsError::ZeroVector);
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted mean over `from` tokens of their best cosine against `to`.
fn greedy(from: &[Vec<f64>], to: &[Vec<f64>], weights: &[f64]) -> f64 {
    if from.is_empty() || to.is_empty() {
        return 0.0;
    }
    let total: f64 = weights.iter().sum();
    let uniform = total <= 0.0;
    let mut acc = 0.0;
    for (i, v) in from.iter().enumerate() {
        let best = to.iter().map(|u| dot(v, u)).fold(f64::NEG_INFINITY, f64::max);
        acc += if uniform { best } else { weights[i] * best };
    }
    if uniform {
        acc / from.len() as f64
    } else {
        acc / total
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Greedy-matching BERTScore. With several references the best-F1 reference
/// is kept per item; the corpus value is the mean over items.
pub fn bert_score(
    set: &EvalSet,
    embedder: &dyn TokenEmbedder,
    idf_corpus: &[TokenizedCaption],
    opts: BertScoreOptions,
) -> Result<BertScoreReport> {
    if set.is_empty() {
        return Err(MetricsError::EmptyEvalSet);
    }
    let idf = Idf::from_corpus(idf_corpus);
    let weights_of = |c: &TokenizedCaption| -> Vec<f64> {
        if opts.use_idf {
            c.tokens().iter().map(|t| idf.weight(t)).collect()
        } else {
            vec![1.0; c.len()]
        }
    };

    let mut lists: Vec<Vec<String>> = Vec::new();
    for item in set.items() {
        lists.push(item.candidate.tokens().to_vec());
        for r in &item.references {
            lists.push(r.tokens().to_vec());
        }
    }
    let vectors = embedder.embed(&lists)?;
    if vectors.len() != lists.len() {
        return Err(MetricsError::VectorCount {
            expected: lists.len(),
            got: vectors.len(),
        });
    }
    let mut dim: Option<usize> = None;
    let mut normalized = Vec::with_capacity(vectors.len());
    for (tokens, vecs) in lists.iter().zip(vectors) {
        if vecs.len() != tokens.len() {
            return Err(MetricsError::VectorCount {
                expected: tokens.len(),
                got: vecs.len(),
            });
        }
        let mut out = Vec::with_capacity(vecs.len());
        for v in vecs {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(MetricsError::DimensionMismatch {
                        expected: d,
                        got: v.len(),
                    })
                }
                _ => {}
            }
            out.push(normalize(v)?);
        }
        normalized.push(out);
    }

    let rescale = |x: f64| match opts.baseline {
        Some(b) => (x - b) / (1.0 - b),
        None => x,
    };
    let mut cursor = normalized.into_iter();
    let mut items = Vec::with_capacity(set.len());
    for item in set.items() {
        let cand = cursor.next().expect("candidate vectors");
        let cand_w = weights_of(&item.candidate);
        let mut best: Option<BertScoreItem> = None;
        for reference in &item.references {
            let refv = cursor.next().expect("reference vectors");
            let ref_w = weights_of(reference);
            let precision = rescale(greedy(&cand, &refv, &cand_w));
            let recall = rescale(greedy(&refv, &cand, &ref_w));
            let scored = BertScoreItem {
                precision,
                recall,
                f1: f1(precision, recall),
            };
            if best.is_none_or(|b| scored.f1 > b.f1) {
                best = Some(scored);
            }
        }
        items.push(best.expect("non-empty references"));
    }
    let n = items.len() as f64;
    Ok(BertScoreReport {
        precision: items.iter().map(|i| i.precision).sum::<f64>() / n,
        recall: items.iter().map(|i| i.recall).sum::<f64>() / n,
        f1: items.iter().map(|i| i.f1).sum::<f64>() / n,
        items,
    })
}
