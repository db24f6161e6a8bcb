//! Pairwise preference aggregation, sign tests and rater agreement.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum HumanEvalError {
    #[error("no judgments given")]
    NoJudgments,
    #[error("duplicate judgment for item `{item_id}`, axis {axis}, annotator `{annotator_id}`")]
    DuplicateJudgment {
        item_id: String,
        axis: Axis,
        annotator_id: String,
    },
    #[error("judgments span several axes; filter to one axis first")]
    MixedAxes,
    #[error("row {row} sums to {got}, expected {expected} raters")]
    RowSum { row: usize, expected: usize, got: usize },
    #[error("need at least 2 raters per item, got {0}")]
    TooFewRaters(usize),
    #[error("count table is empty")]
    EmptyTable,
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },
}

pub type Result<T> = std::result::Result<T, HumanEvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Faithfulness,
    Completeness,
    Accuracy,
    Detail,
    Style,
    Overall,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::Faithfulness,
        Axis::Completeness,
        Axis::Accuracy,
        Axis::Detail,
        Axis::Style,
        Axis::Overall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Faithfulness => "faithfulness",
            Axis::Completeness => "completeness",
            Axis::Accuracy => "accuracy",
            Axis::Detail => "detail",
            Axis::Style => "style",
            Axis::Overall => "overall",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = HumanEvalError;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| HumanEvalError::Unknown {
                what: "axis",
                value: s.to_owned(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    #[serde(alias = "a")]
    A,
    #[serde(alias = "b")]
    B,
    #[serde(rename = "tie", alias = "TIE", alias = "Tie")]
    Tie,
}

impl Choice {
    pub fn swapped(self) -> Choice {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
            Choice::Tie => Choice::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub item_id: String,
    pub axis: Axis,
    pub annotator_id: String,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisResult {
    pub axis: Axis,
    pub n: usize,
    pub count_a: usize,
    pub count_b: usize,
    pub count_tie: usize,
    pub prop_a: f64,
    pub prop_b: f64,
    pub prop_tie: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// How several annotators' votes on one item enter the sign test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Every judgment is one observation.
    #[default]
    AllJudgments,
    /// Each item contributes its majority vote; a split vote counts as a tie.
    ItemMajority,
}

fn ln_choose(m: u64, i: u64) -> f64 {
    let i = i.min(m - i);
    (1..=i).map(|j| ((m - i + j) as f64 / j as f64).ln()).sum()
}

/// Two-sided exact sign test: `min(1, 2 P(Bin(m, 1/2) >= k))` where `k` is
/// the larger side. Returns 1 when `m` is 0.
pub fn sign_test(wins_a: u64, wins_b: u64) -> f64 {
    let m = wins_a + wins_b;
    if m == 0 {
        return 1.0;
    }
    let k = wins_a.max(wins_b);
    let tail = if m <= 1000 {
        // binomial coefficients fit in f64 here; scale by 2^-m exactly at the end
        let mut c = 1.0f64;
        let mut terms = Vec::with_capacity((m + 1) as usize);
        for i in 0..=m {
            if i >= k {
                terms.push(c);
            }
            c = c * (m - i) as f64 / (i + 1) as f64;
        }
        terms.iter().rev().sum::<f64>() * 2f64.powi(-(m as i32))
    } else {
        let ln_half = -(m as f64) * std::f64::consts::LN_2;
        let logs: Vec<f64> = (k..=m).map(|i| ln_choose(m, i) + ln_half).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max.exp() * logs.iter().map(|l| (l - max).exp()).sum::<f64>()
    };
    (2.0 * tail).min(1.0)
}

fn check_unique(judgments: &[Judgment]) -> Result<()> {
    let mut seen = HashSet::new();
    for j in judgments {
        if !seen.insert((j.item_id.as_str(), j.axis, j.annotator_id.as_str())) {
            return Err(HumanEvalError::DuplicateJudgment {
                item_id: j.item_id.clone(),
                axis: j.axis,
                annotator_id: j.annotator_id.clone(),
            });
        }
    }
    Ok(())
}

/// Proportions over all judgments of a single axis plus a sign test over
/// the non-tie judgments.
pub fn aggregate_axis(judgments: &[Judgment], pooling: Pooling) -> Result<AxisResult> {
    let first = judgments.first().ok_or(HumanEvalError::NoJudgments)?;
    if judgments.iter().any(|j| j.axis != first.axis) {
        return Err(HumanEvalError::MixedAxes);
    }
    check_unique(judgments)?;
    let count = |c: Choice| judgments.iter().filter(|j| j.choice == c).count();
    let (a, b, tie) = (count(Choice::A), count(Choice::B), count(Choice::Tie));
    let n = judgments.len();

    let (wins_a, wins_b) = match pooling {
        Pooling::AllJudgments => (a as u64, b as u64),
        Pooling::ItemMajority => {
            let mut per_item: BTreeMap<&str, (i64, i64)> = BTreeMap::new();
            for j in judgments {
                let e = per_item.entry(&j.item_id).or_default();
                match j.choice {
                    Choice::A => e.0 += 1,
                    Choice::B => e.1 += 1,
                    Choice::Tie => {}
                }
            }
            per_item.values().fold((0, 0), |(wa, wb), &(x, y)| match x.cmp(&y) {
                std::cmp::Ordering::Greater => (wa + 1, wb),
                std::cmp::Ordering::Less => (wa, wb + 1),
                std::cmp::Ordering::Equal => (wa, wb),
            })
        }
    };
    let p_value = sign_test(wins_a, wins_b);
    let prop_a = a as f64 / n as f64;
    let prop_b = b as f64 / n as f64;
    Ok(AxisResult {
        axis: first.axis,
        n,
        count_a: a,
        count_b: b,
        count_tie: tie,
        prop_a,
        prop_b,
        prop_tie: 1.0 - prop_a - prop_b,
        p_value,
        significant: p_value < ALPHA,
    })
}

/// Groups judgments by axis and aggregates each, in axis order.
pub fn aggregate(judgments: &[Judgment], pooling: Pooling) -> Result<Vec<AxisResult>> {
    if judgments.is_empty() {
        return Err(HumanEvalError::NoJudgments);
    }
    check_unique(judgments)?;
    let mut by_axis: BTreeMap<Axis, Vec<Judgment>> = BTreeMap::new();
    for j in judgments {
        by_axis.entry(j.axis).or_default().push(j.clone());
    }
    by_axis.values().map(|js| aggregate_axis(js, pooling)).collect()
}

/// Items x {A, B, tie} count table for one axis, items in sorted order.
pub fn choice_table(judgments: &[Judgment]) -> Vec<Vec<usize>> {
    let mut rows: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for j in judgments {
        let row = rows.entry(&j.item_id).or_default();
        row[match j.choice {
            Choice::A => 0,
            Choice::B => 1,
            Choice::Tie => 2,
        }] += 1;
    }
    rows.into_values().map(|r| r.to_vec()).collect()
}

/// Fleiss' kappa over an items x categories count table where every row
/// sums to `raters_per_item`.
pub fn fleiss_kappa(table: &[Vec<usize>], raters_per_item: usize) -> Result<f64> {
    if table.is_empty() || table[0].is_empty() {
        return Err(HumanEvalError::EmptyTable);
    }
    if raters_per_item < 2 {
        return Err(HumanEvalError::TooFewRaters(raters_per_item));
    }
    let categories = table.iter().map(Vec::len).max().unwrap_or(0);
    let r = raters_per_item as f64;
    let items = table.len() as f64;
    let mut category_totals = vec![0usize; categories];
    let mut p_bar = 0.0;
    for (row_idx, row) in table.iter().enumerate() {
        let sum: usize = row.iter().sum();
        if sum != raters_per_item {
            return Err(HumanEvalError::RowSum {
                row: row_idx,
                expected: raters_per_item,
                got: sum,
            });
        }
        let agree: usize = row.iter().map(|&c| c * c.saturating_sub(1)).sum();
        p_bar += agree as f64 / (r * (r - 1.0));
        for (t, &c) in category_totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    p_bar /= items;
    let p_e: f64 = category_totals
        .iter()
        .map(|&t| {
            let p = t as f64 / (items * r);
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Cohen's kappa for two raters over the same items.
pub fn cohen_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(HumanEvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(HumanEvalError::EmptyTable);
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let mut rows: HashMap<&T, i128> = HashMap::new();
    let mut cols: HashMap<&T, i128> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let expected: i128 = rows.iter().map(|(k, r)| r * cols.get(k).copied().unwrap_or(0)).sum();
    // (p_o - p_e) / (1 - p_e), scaled by n^2 so the arithmetic stays exact
    let denom = n * n - expected;
    if denom == 0 {
        return Ok(if agree == n { 1.0 } else { 0.0 });
    }
    Ok((n * agree - expected) as f64 / denom as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judgments(axis: Axis, choices: &[Choice]) -> Vec<Judgment> {
        choices
            .iter()
            .enumerate()
            .map(|(i, &choice)| Judgment {
                item_id: format!("item{i}"),
                axis,
                annotator_id: "ann".into(),
                choice,
            })
            .collect()
    }

    #[test]
    fn ten_zero_is_significant() {
        let r = aggregate_axis(&judgments(Axis::Overall, &[Choice::A; 10]), Pooling::AllJudgments).unwrap();
        assert!((r.p_value - 2.0 * 0.5f64.powi(10)).abs() < 1e-15);
        assert!(r.significant);
        assert_eq!(r.prop_a, 1.0);
    }

    #[test]
    fn balanced_is_capped() {
        let mut cs = vec![Choice::A; 5];
        cs.extend([Choice::B; 5]);
        let r = aggregate_axis(&judgments(Axis::Style, &cs), Pooling::AllJudgments).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn all_ties() {
        let r = aggregate_axis(&judgments(Axis::Detail, &[Choice::Tie; 8]), Pooling::AllJudgments).unwrap();
        assert_eq!((r.prop_tie, r.p_value, r.significant), (1.0, 1.0, false));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            aggregate_axis(&[], Pooling::AllJudgments),
            Err(HumanEvalError::NoJudgments)
        ));
        let mut js = judgments(Axis::Style, &[Choice::A]);
        js.push(js[0].clone());
        assert!(matches!(
            aggregate_axis(&js, Pooling::AllJudgments),
            Err(HumanEvalError::DuplicateJudgment { .. })
        ));
        let mut mixed = judgments(Axis::Style, &[Choice::A]);
        mixed.extend(judgments(Axis::Detail, &[Choice::B]));
        assert!(matches!(
            aggregate_axis(&mixed, Pooling::AllJudgments),
            Err(HumanEvalError::MixedAxes)
        ));
    }

    #[test]
    fn item_majority_pooling() {
        let mk = |item: &str, ann: &str, choice| Judgment {
            item_id: item.into(),
            axis: Axis::Overall,
            annotator_id: ann.into(),
            choice,
        };
        let js = vec![
            mk("1", "x", Choice::A),
            mk("1", "y", Choice::A),
            mk("1", "z", Choice::B),
            mk("2", "x", Choice::A),
            mk("2", "y", Choice::B),
        ];
        let r = aggregate_axis(&js, Pooling::ItemMajority).unwrap();
        assert_eq!(r.p_value, sign_test(1, 0));
        assert_eq!(r.n, 5);
    }

    #[test]
    fn large_m_uses_log_space() {
        let p = sign_test(1500, 1500);
        assert!(p > 0.9 && p <= 1.0);
        assert!(sign_test(3000, 0) < 1e-300 || sign_test(3000, 0) == 0.0);
        let near = sign_test(1040, 960);
        assert!(near > 0.0 && near < 0.1, "{near}");
    }

    #[test]
    fn fleiss_examples() {
        assert_eq!(fleiss_kappa(&[vec![3, 0], vec![3, 0]], 3).unwrap(), 1.0);
        // P_i = 1/3 each, P_e = 1/2
        let k = fleiss_kappa(&[vec![2, 1], vec![1, 2]], 3).unwrap();
        assert!((k - (1.0 / 3.0 - 0.5) / 0.5).abs() < 1e-12);
        assert!(matches!(
            fleiss_kappa(&[vec![2, 1], vec![1, 1]], 3),
            Err(HumanEvalError::RowSum { row: 1, .. })
        ));
    }

    #[test]
    fn cohen_worked_example() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y, count) in [("x", "x", 20), ("x", "y", 5), ("y", "x", 10), ("y", "y", 15)] {
            for _ in 0..count {
                a.push(x);
                b.push(y);
            }
        }
        assert_eq!(cohen_kappa(&a, &b).unwrap(), 0.4);
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        assert!(cohen_kappa(&["x"; 4], &["y"; 4]).unwrap() <= 0.0);
        assert!(matches!(
            cohen_kappa(&["x"], &[]),
            Err(HumanEvalError::LengthMismatch(1, 0))
        ));
    }
}
