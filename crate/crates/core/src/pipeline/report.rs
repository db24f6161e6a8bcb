//! Result tables.
//!
//! The grid has one row per variant and one column per metric, with
//! `m ± s` cells over seeds. Rows form three groups (base, additional-set
//! variants, extension variants); within a group of two or more rows the best
//! rendered value of each column is bold. The comparison list puts external
//! reference systems above our own row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::plan::VariantName;
use super::{PipelineError, Result, RunRecord};
use crate::metrics::{fmt1, summarize, MetricKind, MetricSummary};

/// One line of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub variant: String,
    pub n: usize,
    pub seed: u64,
    pub metric: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Show CIDEr multiplied by 100 in rendered tables.
    pub cider_percent: bool,
}

/// An external system for the comparison list, scores already on the
/// reported scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub name: String,
    pub scores: BTreeMap<String, f64>,
}

fn metric_of(name: &str) -> Result<MetricKind> {
    MetricKind::parse(name).ok_or_else(|| PipelineError::Report(format!("unknown metric `{name}`")))
}

fn metric_set(records: &[RunRecord]) -> Result<Vec<MetricKind>> {
    let first = records
        .first()
        .ok_or_else(|| PipelineError::Report("no run records".into()))?;
    let names: BTreeSet<&String> = first.scores.keys().collect();
    if names.is_empty() {
        return Err(PipelineError::Report(format!(
            "{} (seed {}) has no scores",
            first.variant, first.seed
        )));
    }
    for r in records {
        if r.scores.keys().collect::<BTreeSet<_>>() != names {
            return Err(PipelineError::Report(format!(
                "inconsistent metric sets: {} (n {}, seed {}) differs from {}",
                r.variant, r.n, r.seed, first.variant
            )));
        }
    }
    let mut kinds = names.into_iter().map(|n| metric_of(n)).collect::<Result<Vec<_>>>()?;
    kinds.sort();
    Ok(kinds)
}

pub fn score_lines(records: &[RunRecord]) -> Result<Vec<ScoreLine>> {
    let metrics = metric_set(records)?;
    let mut lines = Vec::new();
    for r in records {
        for m in &metrics {
            lines.push(ScoreLine {
                variant: r.variant.clone(),
                n: r.n,
                seed: r.seed,
                metric: m.as_str().to_owned(),
                score: r.scores[m.as_str()],
            });
        }
    }
    Ok(lines)
}

/// Line-delimited `{variant, n, seed, metric, score}`.
pub fn machine_report(records: &[RunRecord]) -> Result<String> {
    let mut out = String::new();
    for line in score_lines(records)? {
        out.push_str(&serde_json::to_string(&line).expect("score line serializes"));
        out.push('\n');
    }
    Ok(out)
}

struct Row {
    label: String,
    group: u8,
    cells: Vec<MetricSummary>,
}

struct Grid {
    n: usize,
    rows: Vec<Row>,
}

fn scale(metric: MetricKind, opts: ReportOptions) -> f64 {
    if metric == MetricKind::CiderD && opts.cider_percent {
        100.0
    } else {
        1.0
    }
}

fn grids(records: &[RunRecord], opts: ReportOptions) -> Result<(Vec<MetricKind>, Vec<Grid>)> {
    let metrics = metric_set(records)?;
    let mut cells: BTreeMap<(usize, bool, VariantName), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.n, r.plus_imagenet, r.name)).or_default().push(r);
    }
    let mut grids: Vec<Grid> = Vec::new();
    for ((n, plus, name), rs) in cells {
        let row = Row {
            label: rs[0].variant.clone(),
            group: match (plus, name) {
                (true, _) => 2,
                (false, VariantName::Base) => 0,
                _ => 1,
            },
            cells: metrics
                .iter()
                .map(|m| {
                    let k = scale(*m, opts);
                    let per_seed: Vec<f64> = rs.iter().map(|r| r.scores[m.as_str()] * k).collect();
                    summarize(m.as_str(), &per_seed).map_err(PipelineError::from)
                })
                .collect::<Result<_>>()?,
        };
        match grids.last_mut() {
            Some(g) if g.n == n => g.rows.push(row),
            _ => grids.push(Grid { n, rows: vec![row] }),
        }
    }
    for g in &mut grids {
        g.rows.sort_by_key(|r| r.group);
    }
    Ok((metrics, grids))
}

/// `bold[row][col]`: best rendered mean within the row's group.
#[allow(clippy::needless_range_loop)]
fn bold_marks(grid: &Grid, columns: usize) -> Vec<Vec<bool>> {
    let mut marks = vec![vec![false; columns]; grid.rows.len()];
    for group in 0..3u8 {
        let members: Vec<usize> = (0..grid.rows.len()).filter(|&i| grid.rows[i].group == group).collect();
        if members.len() < 2 {
            continue;
        }
        for c in 0..columns {
            let rounded = |i: usize| {
                fmt1(grid.rows[i].cells[c].mean)
                    .parse::<f64>()
                    .unwrap_or(f64::NEG_INFINITY)
            };
            let best = members.iter().map(|&i| rounded(i)).fold(f64::NEG_INFINITY, f64::max);
            for &i in &members {
                marks[i][c] = rounded(i) == best;
            }
        }
    }
    marks
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Markdown grid, one table per base size when several are present.
pub fn render_grid_text(records: &[RunRecord], opts: ReportOptions) -> Result<String> {
    let (metrics, grids) = grids(records, opts)?;
    let multi = grids.len() > 1;
    let mut out = String::new();
    for (gi, grid) in grids.iter().enumerate() {
        if multi {
            if gi > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "N = {}\n", grid.n);
        }
        let marks = bold_marks(grid, metrics.len());
        out.push('|');
        for m in &metrics {
            let _ = write!(out, " | {}", m.label());
        }
        out.push_str(" |\n|---");
        for _ in &metrics {
            out.push_str("|---");
        }
        out.push_str("|\n");
        for (row, bold) in grid.rows.iter().zip(&marks) {
            let _ = write!(out, "| {}", row.label);
            for (cell, &b) in row.cells.iter().zip(bold) {
                if b {
                    let _ = write!(out, " | **{}**", cell.render());
                } else {
                    let _ = write!(out, " | {}", cell.render());
                }
            }
            out.push_str(" |\n");
        }
    }
    Ok(out)
}

/// HTML twin of [`render_grid_text`]; each row group is its own `tbody`.
pub fn render_grid_html(records: &[RunRecord], opts: ReportOptions) -> Result<String> {
    let (metrics, grids) = grids(records, opts)?;
    let mut out = String::new();
    for grid in &grids {
        let marks = bold_marks(grid, metrics.len());
        let _ = writeln!(out, "<table data-n=\"{}\">", grid.n);
        out.push_str("<thead><tr><th></th>");
        for m in &metrics {
            let _ = write!(out, "<th>{}</th>", escape(m.label()));
        }
        out.push_str("</tr></thead>\n");
        let mut current: Option<u8> = None;
        for (row, bold) in grid.rows.iter().zip(&marks) {
            if current != Some(row.group) {
                if current.is_some() {
                    out.push_str("</tbody>\n");
                }
                out.push_str("<tbody>\n");
                current = Some(row.group);
            }
            let _ = write!(out, "<tr><td>{}</td>", escape(&row.label));
            for (cell, &b) in row.cells.iter().zip(bold) {
                if b {
                    let _ = write!(out, "<td><b>{}</b></td>", escape(&cell.render()));
                } else {
                    let _ = write!(out, "<td>{}</td>", escape(&cell.render()));
                }
            }
            out.push_str("</tr>\n");
        }
        if current.is_some() {
            out.push_str("</tbody>\n");
        }
        out.push_str("</table>\n");
    }
    Ok(out)
}

struct Comparison {
    metrics: Vec<MetricKind>,
    references: Vec<(String, Vec<Option<f64>>)>,
    ours: (String, Vec<Option<f64>>),
}

fn comparison(
    records: &[RunRecord],
    references: &[ReferenceRow],
    metrics: &[MetricKind],
    ours: Option<&str>,
    opts: ReportOptions,
) -> Result<Comparison> {
    if metrics.is_empty() {
        return Err(PipelineError::Report("no metrics selected".into()));
    }
    let available = metric_set(records)?;
    for m in metrics {
        if !available.contains(m) {
            return Err(PipelineError::Report(format!("records have no {} scores", m.as_str())));
        }
    }
    let n = records.iter().map(|r| r.n).max().unwrap_or(0);
    let mut by_label: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.n == n) {
        by_label.entry(r.variant.as_str()).or_default().push(r);
    }
    let mean = |rs: &[&RunRecord], m: MetricKind| {
        rs.iter().map(|r| r.scores[m.as_str()]).sum::<f64>() / rs.len() as f64 * scale(m, opts)
    };
    let label = match ours {
        Some(l) => {
            if !by_label.contains_key(l) {
                return Err(PipelineError::Report(format!("no records for variant `{l}`")));
            }
            l.to_owned()
        }
        None => {
            // best on the first selected metric; earlier labels win ties
            let mut best: Option<(&str, f64)> = None;
            for (l, rs) in &by_label {
                let v = mean(rs, metrics[0]);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((l, v));
                }
            }
            best.map(|(l, _)| l.to_owned()).expect("records are non-empty")
        }
    };
    let ours_scores = metrics
        .iter()
        .map(|&m| Some(mean(&by_label[label.as_str()], m)))
        .collect();
    let refs = references
        .iter()
        .map(|r| {
            let vals = metrics
                .iter()
                .map(|m| {
                    r.scores
                        .iter()
                        .find(|(k, _)| MetricKind::parse(k) == Some(*m))
                        .map(|(_, v)| *v)
                })
                .collect();
            (r.name.clone(), vals)
        })
        .collect();
    Ok(Comparison {
        metrics: metrics.to_vec(),
        references: refs,
        ours: (label, ours_scores),
    })
}

fn value(v: Option<f64>) -> String {
    v.map(fmt1).unwrap_or_else(|| "-".into())
}

/// Markdown comparison list: reference systems, then our variant (the
/// best on the first metric unless `ours` names one).
pub fn render_comparison_text(
    records: &[RunRecord],
    references: &[ReferenceRow],
    metrics: &[MetricKind],
    ours: Option<&str>,
    opts: ReportOptions,
) -> Result<String> {
    let c = comparison(records, references, metrics, ours, opts)?;
    let mut out = String::from("| Model");
    for m in &c.metrics {
        let _ = write!(out, " | {}", m.label());
    }
    out.push_str(" |\n|---");
    for _ in &c.metrics {
        out.push_str("|---");
    }
    out.push_str("|\n");
    for (name, vals) in c.references.iter().chain(std::iter::once(&c.ours)) {
        let _ = write!(out, "| {name}");
        for v in vals {
            let _ = write!(out, " | {}", value(*v));
        }
        out.push_str(" |\n");
    }
    Ok(out)
}

pub fn render_comparison_html(
    records: &[RunRecord],
    references: &[ReferenceRow],
    metrics: &[MetricKind],
    ours: Option<&str>,
    opts: ReportOptions,
) -> Result<String> {
    let c = comparison(records, references, metrics, ours, opts)?;
    let mut out = String::from("<table>\n<thead><tr><th>Model</th>");
    for m in &c.metrics {
        let _ = write!(out, "<th>{}</th>", escape(m.label()));
    }
    out.push_str("</tr></thead>\n");
    let row = |out: &mut String, name: &str, vals: &[Option<f64>]| {
        let _ = write!(out, "<tr><td>{}</td>", escape(name));
        for v in vals {
            let _ = write!(out, "<td>{}</td>", value(*v));
        }
        out.push_str("</tr>\n");
    };
    if !c.references.is_empty() {
        out.push_str("<tbody>\n");
        for (name, vals) in &c.references {
            row(&mut out, name, vals);
        }
        out.push_str("</tbody>\n");
    }
    out.push_str("<tbody>\n");
    row(&mut out, &c.ours.0, &c.ours.1);
    out.push_str("</tbody>\n</table>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(name: VariantName, plus: bool, seed: u64, bleu: f64, cider: f64) -> RunRecord {
        RunRecord {
            variant: super::super::plan::label(name, plus),
            name,
            plus_imagenet: plus,
            n: 100,
            seed,
            plan_digest: String::new(),
            stages: Vec::new(),
            scores: [("bleu4".to_string(), bleu), ("cider_d".to_string(), cider)].into(),
        }
    }

    #[test]
    fn three_seeds_of_base() {
        let rs: Vec<_> = (0..3)
            .map(|s| record(VariantName::Base, false, s, 2.0 + s as f64 * 0.1, 0.1))
            .collect();
        let text = render_grid_text(&rs, ReportOptions::default()).unwrap();
        assert_eq!(
            text,
            "| | B@4 | CIDEr |\n|---|---|---|\n| base | 2.1 \u{b1} 0.1 | 0.1 \u{b1} 0.0 |\n"
        );
    }

    #[test]
    fn single_seed_has_zero_std() {
        let text = render_grid_text(&[record(VariantName::Re, false, 0, 3.0, 0.2)], ReportOptions::default()).unwrap();
        assert!(text.contains("3.0 \u{b1} 0.0"));
    }

    #[test]
    fn best_in_group_is_bold() {
        let rs = vec![
            record(VariantName::Base, false, 0, 9.0, 0.1),
            record(VariantName::Own, false, 0, 2.0, 0.3),
            record(VariantName::Re, false, 0, 3.0, 0.2),
        ];
        let text = render_grid_text(&rs, ReportOptions { cider_percent: true }).unwrap();
        assert!(text.contains("| base | 9.0 \u{b1} 0.0 | 10.0 \u{b1} 0.0 |"));
        assert!(text.contains("| own | 2.0 \u{b1} 0.0 | **30.0 \u{b1} 0.0** |"));
        assert!(text.contains("| re | **3.0 \u{b1} 0.0** | 20.0 \u{b1} 0.0 |"));
    }

    #[test]
    fn inconsistent_metrics_rejected() {
        let mut b = record(VariantName::Re, false, 1, 1.0, 1.0);
        b.scores.remove("cider_d");
        let rs = vec![record(VariantName::Re, false, 0, 1.0, 1.0), b];
        assert!(matches!(
            render_grid_text(&rs, ReportOptions::default()),
            Err(PipelineError::Report(_))
        ));
        assert!(machine_report(&[]).is_err());
    }

    #[test]
    fn machine_report_lines() {
        let text = machine_report(&[record(VariantName::Own, true, 2, 1.5, 0.25)]).unwrap();
        assert_eq!(
            text,
            "{\"variant\":\"own+IN\",\"n\":100,\"seed\":2,\"metric\":\"bleu4\",\"score\":1.5}\n\
             {\"variant\":\"own+IN\",\"n\":100,\"seed\":2,\"metric\":\"cider_d\",\"score\":0.25}\n"
        );
    }
}
