//! Charts and summary tables from the ledger and the diagnostics reports.
//!
//! Every SVG has a CSV sidecar with the plotted numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use sslab_core::data::Split;
use sslab_core::diagnostics::{
    default_n_grid, pearson_r_p, render_correlation_table, render_variance_table, DiagnosticsReport,
    ExplainedVarianceCurve, VarianceColumn,
};

use crate::error::{io_err, missing, runtime, Result};
use crate::ledger::{read_ledger, Evaluation, LedgerRow};
use crate::registry::Registry;
use crate::svg::{grouped_bars, log_lines, scatter, ScatterPoint};

/// Marker area, in square pixels, of the largest dataset in a scatter.
pub const MAX_MARKER_AREA: f64 = 900.0;

pub const ACCURACY: &str = "accuracy";
pub const SCATTER: &str = "scatter";
pub const EV_CURVES: &str = "explained_variance";
pub const RANDOM_LABEL_GAPS: &str = "random_label_gaps";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn put(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        self.files.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| runtime(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| runtime(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| runtime(e.to_string()))?;
        self.put(name, &String::from_utf8(bytes).map_err(|e| runtime(e.to_string()))?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per (dataset, kind, evaluation): the largest label fraction,
/// preferring the 256-dim pooling, then the smallest pooled dim.
pub fn headline_rows(rows: &[LedgerRow]) -> Vec<&LedgerRow> {
    let mut best: BTreeMap<(String, String, bool), &LedgerRow> = BTreeMap::new();
    let rank = |r: &LedgerRow| (r.label_fraction, r.pooled_dim == Some(256), std::cmp::Reverse(r.pooled_dim));
    for r in rows {
        let key = (r.dataset.clone(), r.kind.clone(), r.evaluation == Evaluation::EndToEnd);
        let better = match best.get(&key) {
            None => true,
            Some(b) => rank(r).partial_cmp(&rank(b)).is_some_and(|o| o.is_gt()),
        };
        if better {
            best.insert(key, r);
        }
    }
    best.into_values().collect()
}

/// Every `diagnostics/<id>/report.json`, ordered by run id.
pub fn load_reports(reg: &Registry) -> Result<Vec<DiagnosticsReport>> {
    let dir = reg.root().join("diagnostics");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path().join("report.json")))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            DiagnosticsReport::from_json(&text).map_err(Into::into)
        })
        .collect()
}

fn series_index(names: &[String], name: &str) -> usize {
    names.iter().position(|n| n == name).unwrap_or(0)
}

/// Marker areas proportional to training-set size.
pub fn marker_areas(sizes: &[usize]) -> Vec<f64> {
    let max = sizes.iter().copied().max().unwrap_or(1).max(1) as f64;
    sizes.iter().map(|&s| MAX_MARKER_AREA * s as f64 / max).collect()
}

fn label_of(row: &LedgerRow) -> String {
    match row.evaluation {
        Evaluation::Probe => row.kind.clone(),
        Evaluation::EndToEnd => format!("{} (end to end)", row.kind),
    }
}

fn accuracy_chart(w: &mut Writer, heads: &[&LedgerRow]) -> Result<()> {
    let datasets: Vec<String> = heads.iter().map(|r| r.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let series: Vec<String> = heads.iter().map(|r| label_of(r)).collect::<BTreeSet<_>>().into_iter().collect();
    let mut values = vec![vec![None; series.len()]; datasets.len()];
    let mut rows = Vec::new();
    for r in heads {
        let (g, s) = (series_index(&datasets, &r.dataset), series_index(&series, &label_of(r)));
        values[g][s] = r.test_acc;
        rows.push(vec![
            r.dataset.clone(),
            r.kind.clone(),
            format!("{:?}", r.evaluation).to_lowercase(),
            r.pooled_dim.map(|d| d.to_string()).unwrap_or_default(),
            r.label_fraction.to_string(),
            opt(r.test_acc),
        ]);
    }
    w.csv(
        &format!("{ACCURACY}.csv"),
        &["dataset", "kind", "evaluation", "pooled_dim", "label_fraction", "test_acc"],
        &rows,
    )?;
    w.put(&format!("{ACCURACY}.svg"), &grouped_bars("Downstream test accuracy", "test accuracy", &datasets, &series, &values))
}

fn scatter_chart(w: &mut Writer, heads: &[&LedgerRow]) -> Result<()> {
    let baselines: BTreeMap<&str, f64> = heads
        .iter()
        .filter(|r| r.is_baseline_for(&r.dataset))
        .filter_map(|r| r.test_acc.map(|a| (r.dataset.as_str(), a)))
        .collect();
    let points: Vec<&&LedgerRow> = heads
        .iter()
        .filter(|r| r.evaluation == Evaluation::Probe && r.test_acc.is_some() && baselines.contains_key(r.dataset.as_str()))
        .collect();
    let series: Vec<String> = points.iter().map(|r| r.kind.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let areas = marker_areas(&points.iter().map(|r| r.train_size).collect::<Vec<_>>());
    let mut rows = Vec::new();
    let mut marks = Vec::new();
    for (r, area) in points.iter().zip(areas) {
        let (x, y) = (baselines[r.dataset.as_str()], r.test_acc.expect("filtered"));
        rows.push(vec![
            r.dataset.clone(),
            r.kind.clone(),
            x.to_string(),
            y.to_string(),
            r.train_size.to_string(),
            area.to_string(),
        ]);
        marks.push(ScatterPoint { x, y, area, series: series_index(&series, &r.kind), label: format!("{} / {}", r.dataset, r.kind) });
    }
    w.csv(&format!("{SCATTER}.csv"), &["dataset", "series", "x", "y", "train_size", "marker_area"], &rows)?;
    w.put(
        &format!("{SCATTER}.svg"),
        &scatter(
            "Linear probe vs. supervised test accuracy (marker area = training-set size)",
            "supervised test accuracy",
            "probe test accuracy",
            &series,
            &marks,
        ),
    )
}

fn curve_name(report: &DiagnosticsReport, c: &ExplainedVarianceCurve) -> String {
    format!("{}/{}/{}_{}", report.dataset, report.pretext, c.split.map_or("all", |s| s.as_str()), c.dim)
}

fn variance_charts(w: &mut Writer, reports: &[DiagnosticsReport]) -> Result<()> {
    let grid = default_n_grid();
    let curves: Vec<(String, &ExplainedVarianceCurve)> =
        reports.iter().flat_map(|r| r.pca.iter().map(move |c| (curve_name(r, c), c))).collect();
    let ns: BTreeSet<usize> = grid.iter().copied().chain(curves.iter().flat_map(|(_, c)| c.ns.iter().copied())).collect();
    let mut header = vec!["n".to_string()];
    header.extend(curves.iter().map(|(n, _)| n.clone()));
    let rows: Vec<Vec<String>> = ns
        .iter()
        .map(|&n| std::iter::once(n.to_string()).chain(curves.iter().map(|(_, c)| opt(c.at(n)))).collect())
        .collect();
    w.csv(&format!("{EV_CURVES}.csv"), &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
    let lines: Vec<(String, Vec<(usize, f64)>)> =
        curves.iter().map(|(n, c)| (n.clone(), c.ns.iter().copied().zip(c.fractions.iter().copied()).collect())).collect();
    w.put(
        &format!("{EV_CURVES}.svg"),
        &log_lines("Cumulative explained variance", "principal components n", "fraction of variance", &grid, &lines),
    )?;

    // Mean TRAIN curve per (pretext, dim) across datasets, on the grid entries all of them reach.
    let mut groups: BTreeMap<(String, usize), Vec<&ExplainedVarianceCurve>> = BTreeMap::new();
    for r in reports {
        for c in r.pca.iter().filter(|c| c.split == Some(Split::Train)) {
            groups.entry((r.pretext.clone(), c.dim)).or_default().push(c);
        }
    }
    let columns: Vec<VarianceColumn> = groups
        .into_iter()
        .map(|((pretext, dim), cs)| {
            let ns: Vec<usize> = grid.iter().copied().filter(|&n| cs.iter().all(|c| c.at(n).is_some())).collect();
            let fractions = ns.iter().map(|&n| cs.iter().map(|c| c.at(n).expect("filtered")).sum::<f64>() / cs.len() as f64).collect();
            let curve = ExplainedVarianceCurve { dim, rows: cs.iter().map(|c| c.rows).sum(), split: Some(Split::Train), ns, fractions };
            VarianceColumn { pretext, pooled_dim: dim, curve }
        })
        .collect();
    w.put("explained_variance_table.csv", &render_variance_table(&columns, &grid))
}

fn random_label_chart(w: &mut Writer, reports: &[DiagnosticsReport]) -> Result<()> {
    let with: Vec<&DiagnosticsReport> = reports.iter().filter(|r| r.random_labels.is_some()).collect();
    let datasets: Vec<String> = with.iter().map(|r| r.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let series: Vec<String> = with.iter().map(|r| r.pretext.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut values = vec![vec![None; series.len()]; datasets.len()];
    let mut rows = Vec::new();
    for r in &with {
        let rl = r.random_labels.expect("filtered");
        values[series_index(&datasets, &r.dataset)][series_index(&series, &r.pretext)] = Some(rl.gap());
        rows.push(vec![
            r.dataset.clone(),
            r.pretext.clone(),
            rl.normal_train_acc.to_string(),
            rl.shuffled_train_acc.to_string(),
            rl.gap().to_string(),
        ]);
    }
    w.csv(
        &format!("{RANDOM_LABEL_GAPS}.csv"),
        &["dataset", "kind", "normal_train_acc", "shuffled_train_acc", "gap"],
        &rows,
    )?;
    w.put(
        &format!("{RANDOM_LABEL_GAPS}.svg"),
        &grouped_bars("Probe training accuracy: normal minus shuffled labels", "gap", &datasets, &series, &values),
    )?;

    // Normal vs. shuffled training accuracy across datasets, per pretext.
    let mut table = Vec::new();
    for kind in &series {
        let pairs: Vec<(f64, f64)> = with
            .iter()
            .filter(|r| &r.pretext == kind)
            .map(|r| r.random_labels.map(|rl| (rl.shuffled_train_acc, rl.normal_train_acc)).expect("filtered"))
            .collect();
        if pairs.len() >= 3 {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            match pearson_r_p(&x, &y) {
                Ok(stat) => table.push((kind.clone(), stat)),
                Err(e) => info!("no correlation for {kind}: {e}"),
            }
        }
    }
    if !table.is_empty() {
        w.put("random_label_correlation.csv", &render_correlation_table(&table))?;
    }
    Ok(())
}

fn generalization_table(w: &mut Writer, reports: &[DiagnosticsReport], heads: &[&LedgerRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .filter_map(|r| {
            let g = r.generalization?;
            let norm = heads
                .iter()
                .find(|h| h.run_id == r.run_id && h.evaluation == Evaluation::Probe)
                .and_then(|h| h.normalized_acc);
            Some(vec![
                r.dataset.clone(),
                r.pretext.clone(),
                g.pretext_acc_val_half.to_string(),
                g.pretext_acc_test_full.to_string(),
                g.ratio.to_string(),
                opt(norm),
            ])
        })
        .collect();
    if rows.is_empty() {
        return Ok(());
    }
    w.csv(
        "generalization.csv",
        &["dataset", "pretext", "pretext_acc_val_half", "pretext_acc_test_full", "ratio", "normalized_acc"],
        &rows,
    )
}

/// Render every chart and table into `<out>/report/`.
pub fn write_report(reg: &Registry) -> Result<ReportArtifacts> {
    let ledger_path = reg.ledger_path();
    let rows = read_ledger(&ledger_path)?;
    if rows.is_empty() {
        return Err(missing(format!("ledger {} is empty; train and probe some runs first", ledger_path.display())));
    }
    let reports = load_reports(reg)?;
    let dir = reg.report_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut w = Writer { dir: dir.clone(), files: Vec::new() };
    let heads = headline_rows(&rows);
    accuracy_chart(&mut w, &heads)?;
    scatter_chart(&mut w, &heads)?;
    variance_charts(&mut w, &reports)?;
    random_label_chart(&mut w, &reports)?;
    generalization_table(&mut w, &reports, &heads)?;
    Ok(ReportArtifacts { dir, files: w.files })
}

/// Parse a CSV sidecar into header and string rows.
pub fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| runtime(e.to_string()))?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()).map_err(|e| runtime(e.to_string())))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
