//! Comparison tables and plot series from evaluation reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::Noise;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, Metric};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Selection accuracy: selector vs end-to-end attention.
    Table1,
    /// WER: audio-only, two-step, end-to-end, oracle.
    Table2,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Layout::Table1),
            "table2" => Ok(Layout::Table2),
            _ => Err(Error::Config(format!("unknown layout {s:?} (table1 or table2)"))),
        }
    }
}

impl Layout {
    fn metric(self) -> Metric {
        match self {
            Layout::Table1 => Metric::Accuracy,
            Layout::Table2 => Metric::Wer,
        }
    }

    /// Column systems and their headers.
    fn columns(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Layout::Table1 => &[("ss", "SS"), ("e2e", "[SS + A/V ASR]")],
            Layout::Table2 => &[
                ("audio-only", "Audio-only ASR"),
                ("two-step", "SS -> A/V ASR"),
                ("e2e", "[SS + A/V ASR]"),
                ("oracle", "Oracle SS -> A/V ASR"),
            ],
        }
    }

    /// Systems scored once per noise condition and shared by every track row.
    fn track_independent(self, system: &str) -> bool {
        self == Layout::Table2 && matches!(system, "audio-only" | "oracle")
    }
}

/// `(baseline - system) / baseline` in percent.
pub fn relative_improvement(baseline: f64, system: f64) -> f64 {
    100.0 * (baseline - system) / baseline
}

/// One table row.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub dataset: String,
    pub noise: Noise,
    pub tracks: usize,
    pub values: BTreeMap<String, f64>,
    /// Relative WER improvement over audio-only, percent, per system.
    pub vs_audio_only: BTreeMap<String, f64>,
}

/// Rows in dataset, noise, track order. Errors list every missing cell.
pub fn comparison_rows(report: &EvalReport, layout: Layout) -> Result<Vec<ComparisonRow>> {
    if report.metric != layout.metric() {
        return Err(Error::Invalid(format!("{layout:?} needs a {:?} report", layout.metric())));
    }
    let present: BTreeSet<&str> = report.rows.iter().map(|r| r.system.as_str()).collect();
    let columns: Vec<&str> = layout
        .columns()
        .iter()
        .map(|(s, _)| *s)
        .filter(|s| present.contains(s))
        .collect();
    if columns.is_empty() {
        return Err(Error::Data(format!("report has no {layout:?} systems")));
    }
    let dataset_order: Vec<&str> = report.rows.iter().fold(Vec::new(), |mut acc, r| {
        if !acc.contains(&r.dataset.as_str()) {
            acc.push(r.dataset.as_str());
        }
        acc
    });
    // Rows come from the track-dependent systems when there are any.
    let row_systems: Vec<&str> = match columns.iter().copied().filter(|s| !layout.track_independent(s)).collect::<Vec<_>>() {
        v if v.is_empty() => columns.clone(),
        v => v,
    };
    let mut grid: BTreeSet<(usize, Noise, usize)> = BTreeSet::new();
    for r in &report.rows {
        if row_systems.contains(&r.system.as_str()) {
            let d = dataset_order.iter().position(|&d| d == r.dataset).expect("seen");
            grid.insert((d, r.noise, r.tracks));
        }
    }
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for &(d, noise, tracks) in &grid {
        let dataset = dataset_order[d];
        let mut values = BTreeMap::new();
        for &s in &columns {
            let cell = report.get(dataset, noise, tracks, s).or_else(|| {
                if layout.track_independent(s) {
                    report
                        .rows
                        .iter()
                        .filter(|r| r.dataset == dataset && r.noise == noise && r.system == s)
                        .min_by_key(|r| r.tracks)
                } else {
                    None
                }
            });
            match cell {
                Some(c) => {
                    values.insert(s.to_string(), c.value);
                }
                None => missing.push(format!("{dataset}/{noise}-n{tracks}/{s}")),
            }
        }
        let mut vs_audio_only = BTreeMap::new();
        if let (Layout::Table2, Some(&base)) = (layout, values.get("audio-only")) {
            for (s, &v) in &values {
                if s != "audio-only" {
                    vs_audio_only.insert(s.clone(), relative_improvement(base, v));
                }
            }
        }
        out.push(ComparisonRow {
            dataset: dataset.to_string(),
            noise,
            tracks,
            values,
            vs_audio_only,
        });
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("incomplete grid, missing: {}", missing.join(", "))));
    }
    Ok(out)
}

/// Fixed-width table grouped by dataset, then noise, then track count.
/// Accuracy is printed as a fraction, WER in percent.
pub fn render_table(report: &EvalReport, layout: Layout) -> Result<String> {
    let rows = comparison_rows(report, layout)?;
    let present: BTreeSet<&String> = rows.iter().flat_map(|r| r.values.keys()).collect();
    let columns: Vec<(&str, &str)> = layout
        .columns()
        .iter()
        .copied()
        .filter(|(s, _)| present.iter().any(|p| p.as_str() == *s))
        .collect();
    let rel: Vec<&str> = columns
        .iter()
        .map(|(s, _)| *s)
        .filter(|s| rows.iter().any(|r| r.vs_audio_only.contains_key(*s)))
        .collect();

    let mut header: Vec<String> = vec!["Dataset".into(), "Noise".into(), "Tracks".into()];
    header.extend(columns.iter().map(|(_, h)| h.to_string()));
    header.extend(rel.iter().map(|s| format!("rel. {s}")));
    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut prev: Option<(&str, Noise)> = None;
    for r in &rows {
        let same_dataset = prev.is_some_and(|(d, _)| d == r.dataset);
        let ds = if same_dataset { String::new() } else { r.dataset.clone() };
        let noise = if same_dataset && prev.is_some_and(|(_, n)| n == r.noise) {
            String::new()
        } else {
            r.noise.to_string()
        };
        prev = Some((&r.dataset, r.noise));
        let mut line = vec![ds, noise, r.tracks.to_string()];
        for (s, _) in &columns {
            line.push(match (r.values.get(*s), layout) {
                (Some(v), Layout::Table1) => format!("{v:.2}"),
                (Some(v), Layout::Table2) => format!("{:.1}", 100.0 * v),
                (None, _) => "-".into(),
            });
        }
        for s in &rel {
            line.push(r.vs_audio_only.get(*s).map_or("-".into(), |v| format!("{v:.1}%")));
        }
        cells.push(line);
    }
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let mut out = String::new();
    let fmt_line = |out: &mut String, fields: &[String]| {
        let parts: Vec<String> = fields
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (f, &w))| if i < 2 { format!("{f:<w$}") } else { format!("{f:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    fmt_line(&mut out, &header);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for c in &cells {
        fmt_line(&mut out, c);
    }
    Ok(out)
}

/// Writes one series per `(dataset, noise, system)` into `dir`: a header
/// comment, then `tracks value` lines with x ascending. Values are printed
/// exactly as in the report's JSON form.
pub fn emit_plot_data(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Data("report has no rows to plot".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut series: BTreeMap<(String, Noise, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in &report.rows {
        series
            .entry((r.dataset.clone(), r.noise, r.system.clone()))
            .or_default()
            .push((r.tracks, r.value));
    }
    let metric = match report.metric {
        Metric::Accuracy => "accuracy",
        Metric::Wer => "wer",
    };
    let mut written = Vec::with_capacity(series.len());
    for ((dataset, noise, system), mut points) in series {
        points.sort_by_key(|p| p.0);
        let mut text = format!("# tracks {metric} dataset={dataset} noise={noise} system={system}\n");
        for (x, y) in points {
            let _ = writeln!(text, "{x} {}", serde_json::to_string(&y).expect("finite"));
        }
        let path = dir.join(format!("{dataset}_{noise}_{system}_{metric}.dat"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
