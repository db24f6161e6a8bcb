//! Statistics over reformulation datasets and stylized-caption pairing.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::normalize_text;
use crate::metrics::{levenshtein_words, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no reformulation pairs given")]
    NoPairs,
    #[error("pair `{0}` has empty text")]
    EmptyText(String),
    #[error("labels reference unknown pair `{0}`")]
    UnknownPair(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulationPair {
    pub image_id: String,
    pub original: String,
    pub reformulated: String,
    pub language: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Characters,
    Words,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformulationStats {
    pub total: usize,
    pub unchanged: usize,
    pub unchanged_fraction: f64,
    /// Word-level Levenshtein distance, averaged over all pairs.
    pub mean_edit_distance: f64,
    pub mean_len_before: f64,
    pub mean_len_after: f64,
    pub length_unit: LengthUnit,
}

fn length(text: &str, unit: LengthUnit) -> usize {
    match unit {
        LengthUnit::Characters => text.chars().count(),
        LengthUnit::Words => text.split_whitespace().count(),
    }
}

/// Unchanged means equal after NFC normalisation. Character lengths count
/// spaces.
pub fn reformulation_stats(pairs: &[ReformulationPair], unit: LengthUnit) -> Result<ReformulationStats> {
    if pairs.is_empty() {
        return Err(AnalysisError::NoPairs);
    }
    let mut unchanged = 0usize;
    let mut distance = 0usize;
    let mut before = 0usize;
    let mut after = 0usize;
    for pair in pairs {
        let original = normalize_text(&pair.original);
        let reformulated = normalize_text(&pair.reformulated);
        if original.trim().is_empty() || reformulated.trim().is_empty() {
            return Err(AnalysisError::EmptyText(pair.image_id.clone()));
        }
        if original == reformulated {
            unchanged += 1;
        } else {
            distance += levenshtein_words(&tokenize(&original), &tokenize(&reformulated));
        }
        before += length(&original, unit);
        after += length(&reformulated, unit);
    }
    let n = pairs.len() as f64;
    Ok(ReformulationStats {
        total: pairs.len(),
        unchanged,
        unchanged_fraction: unchanged as f64 / n,
        mean_edit_distance: distance as f64 / n,
        mean_len_before: before as f64 / n,
        mean_len_after: after as f64 / n,
        length_unit: unit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Element {
    Object,
    Action,
    Attribute,
    Setting,
    Other,
}

impl Element {
    pub const ALL: [Element; 5] = [
        Element::Object,
        Element::Action,
        Element::Attribute,
        Element::Setting,
        Element::Other,
    ];

    fn label(self) -> &'static str {
        match self {
            Element::Object => "Object",
            Element::Action => "Action",
            Element::Attribute => "Attribute",
            Element::Setting => "Setting",
            Element::Other => "Other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Add,
    Replace,
    Remove,
    Rewrite,
}

impl ChangeKind {
    pub const ALL: [ChangeKind; 4] = [
        ChangeKind::Add,
        ChangeKind::Replace,
        ChangeKind::Remove,
        ChangeKind::Rewrite,
    ];

    fn label(self) -> &'static str {
        match self {
            ChangeKind::Add => "Add",
            ChangeKind::Replace => "Replace",
            ChangeKind::Remove => "Remove",
            ChangeKind::Rewrite => "Rewrite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChangeLabel {
    pub element: Element,
    pub kind: ChangeKind,
}

/// One line of a labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLabels {
    pub pair_id: String,
    pub labels: Vec<ChangeLabel>,
}

/// Element x kind counts. Rewrites have no element breakdown: they are
/// counted only in the rewrite column margin, never in a row total.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeTable {
    /// `cells[element][kind]` for add/replace/remove.
    pub cells: [[usize; 3]; 5],
    pub row_totals: [usize; 5],
    /// add, replace, remove, rewrite.
    pub column_totals: [usize; 4],
}

impl ChangeTable {
    pub fn cell(&self, element: Element, kind: ChangeKind) -> Option<usize> {
        let e = Element::ALL.iter().position(|&x| x == element)?;
        match kind {
            ChangeKind::Rewrite => None,
            k => Some(self.cells[e][ChangeKind::ALL.iter().position(|&x| x == k)?]),
        }
    }

    pub fn rewrites(&self) -> usize {
        self.column_totals[3]
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for kind in ChangeKind::ALL {
            let _ = write!(out, " {:>7}", kind.label());
        }
        let _ = writeln!(out, " {:>7}", "Total");
        for (e, element) in Element::ALL.iter().enumerate() {
            let [a, r, m] = self.cells[e];
            let _ = writeln!(
                out,
                "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7}",
                element.label(),
                a,
                r,
                m,
                "--",
                self.row_totals[e]
            );
        }
        let [a, r, m, w] = self.column_totals;
        let _ = writeln!(out, "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7}", "Total", a, r, m, w, "");
        out
    }
}

/// Tallies change labels. A pair counts at most once per (element, kind)
/// cell but may contribute to several cells. When `known_pairs` is given,
/// labels for other pair ids are rejected.
pub fn change_tally(labels: &[PairLabels], known_pairs: Option<&HashSet<String>>) -> Result<ChangeTable> {
    let mut table = ChangeTable::default();
    for entry in labels {
        if let Some(known) = known_pairs {
            if !known.contains(&entry.pair_id) {
                return Err(AnalysisError::UnknownPair(entry.pair_id.clone()));
            }
        }
        let unique: HashSet<ChangeLabel> = entry.labels.iter().copied().collect();
        let mut rewritten = false;
        for label in unique {
            if label.kind == ChangeKind::Rewrite {
                rewritten = true;
                continue;
            }
            let e = Element::ALL
                .iter()
                .position(|&x| x == label.element)
                .expect("known element");
            let k = ChangeKind::ALL
                .iter()
                .position(|&x| x == label.kind)
                .expect("known kind");
            table.cells[e][k] += 1;
            table.row_totals[e] += 1;
            table.column_totals[k] += 1;
        }
        if rewritten {
            table.column_totals[3] += 1;
        }
    }
    Ok(table)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(curr[j]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Token-level longest common subsequence between two captions.
pub fn token_overlap(a: &str, b: &str) -> usize {
    lcs_len(tokenize(a).tokens(), tokenize(b).tokens())
}

/// Index of the candidate sharing the longest token subsequence with the
/// stylized caption; ties go to the lowest index. `None` for no candidates.
pub fn pair_stylized_to_original<S: AsRef<str>>(stylized: &str, candidates: &[S]) -> Option<usize> {
    let target = tokenize(stylized);
    let mut best: Option<(usize, usize)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let overlap = lcs_len(target.tokens(), tokenize(cand.as_ref()).tokens());
        if best.is_none_or(|(_, b)| overlap > b) {
            best = Some((i, overlap));
        }
    }
    best.map(|(i, _)| i)
}
