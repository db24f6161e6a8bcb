use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};

/// Per-seed scores with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    /// `"m ± s"` with one decimal each.
    pub fn render(&self) -> String {
        format!("{} \u{b1} {}", fmt1(self.mean), fmt1(self.std))
    }
}

/// One-decimal rendering that never prints `-0.0`.
pub(crate) fn fmt1(x: f64) -> String {
    let s = format!("{x:.1}");
    if s == "-0.0" {
        "0.0".to_owned()
    } else {
        s
    }
}

pub fn summarize(metric: &str, per_seed: &[f64]) -> Result<MetricSummary> {
    if per_seed.is_empty() {
        return Err(MetricsError::NoScores);
    }
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().sum::<f64>() / n;
    let var = per_seed.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(MetricSummary {
        metric: metric.to_owned(),
        per_seed: per_seed.to_vec(),
        mean,
        std: var.sqrt(),
    })
}
