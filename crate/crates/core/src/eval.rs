//! Selection accuracy, word error rate and grid reports.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::{ConditionSpec, Noise};
use crate::data::{EvalExample, EvalSet};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::system::{infer_two_step, loop_rows, Trained};
use crate::transducer::Transcript;

/// Per-frame choices of one system on one example.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionTrace {
    pub utt_id: String,
    pub selected: Vec<usize>,
    pub truth: Vec<usize>,
}

impl SelectionTrace {
    pub fn new(utt_id: impl Into<String>, selected: Vec<usize>, truth: Vec<usize>) -> Result<Self> {
        let utt_id = utt_id.into();
        if selected.len() != truth.len() {
            return Err(Error::Invalid(format!(
                "trace {utt_id}: {} selections for {} frames",
                selected.len(),
                truth.len()
            )));
        }
        Ok(Self { utt_id, selected, truth })
    }

    pub fn correct(&self) -> usize {
        self.selected.iter().zip(&self.truth).filter(|(a, b)| a == b).count()
    }
}

/// Correct frames over all frames, pooled across traces.
pub fn top1_frame_accuracy(traces: &[SelectionTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Invalid("no traces to score".into()));
    }
    let mut correct = 0;
    let mut total = 0;
    for t in traces {
        if t.selected.len() != t.truth.len() {
            return Err(Error::Invalid(format!("trace {}: length mismatch", t.utt_id)));
        }
        correct += t.correct();
        total += t.truth.len();
    }
    if total == 0 {
        return Err(Error::Invalid("traces hold no frames".into()));
    }
    Ok(correct as f64 / total as f64)
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimum-cost word alignment. Among equal-cost backtraces a substitution
/// is taken before an insertion, and an insertion before a deletion.
pub fn align_words(hyp: &str, reference: &str) -> EditCounts {
    let (h, r) = (words(hyp), words(reference));
    let (n, m) = (r.len(), h.len());
    // d[i][j]: cost of aligning r[..i] with h[..j].
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            d[i][j] = sub.min(d[i][j - 1] + 1).min(d[i - 1][j] + 1);
        }
    }
    let mut c = EditCounts {
        ref_words: n,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]) {
            if r[i - 1] != h[j - 1] {
                c.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            c.insertions += 1;
            j -= 1;
        } else {
            c.deletions += 1;
            i -= 1;
        }
    }
    c
}

/// Word-level edit distance divided by the reference length. Whitespace
/// tokens, case-folded.
pub fn word_error_rate(hyp: &str, reference: &str) -> Result<f64> {
    let c = align_words(hyp, reference);
    if c.ref_words == 0 {
        return Err(Error::Invalid("empty reference".into()));
    }
    Ok(c.errors() as f64 / c.ref_words as f64)
}

/// Total word errors over total reference words.
pub fn corpus_wer<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<f64> {
    let (mut errors, mut words) = (0, 0);
    for (h, r) in pairs {
        let c = align_words(h, r);
        errors += c.errors();
        words += c.ref_words;
    }
    if words == 0 {
        return Err(Error::Invalid("no reference words".into()));
    }
    Ok(errors as f64 / words as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Wer,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "wer" => Ok(Metric::Wer),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

/// One grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub noise: Noise,
    pub tracks: usize,
    pub system: String,
    pub value: f64,
    /// Frames (accuracy) or reference words (WER) behind the value.
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    /// Checkpoint digest per system label.
    pub checkpoints: BTreeMap<String, String>,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Meta { metric: Metric, meta: ReportMeta },
    Cell(ReportRow),
}

pub type CellKey = (String, Noise, usize, String);

impl EvalReport {
    pub fn new(metric: Metric, meta: ReportMeta) -> Self {
        Self {
            metric,
            meta,
            rows: Vec::new(),
        }
    }

    fn key(r: &ReportRow) -> CellKey {
        (r.dataset.clone(), r.noise, r.tracks, r.system.clone())
    }

    pub fn push(&mut self, row: ReportRow) -> Result<()> {
        let k = Self::key(&row);
        if self.rows.iter().any(|r| Self::key(r) == k) {
            return Err(Error::Invalid(format!("duplicate cell {k:?}")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, dataset: &str, noise: Noise, tracks: usize, system: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.noise == noise && r.tracks == tracks && r.system == system)
    }

    pub fn value(&self, noise: Noise, tracks: usize, system: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.noise == noise && r.tracks == tracks && r.system == system)
            .map(|r| r.value)
    }

    /// Errors listing every absent `(dataset, noise, tracks, system)` cell.
    pub fn check_complete(&self, dataset: &str, conditions: &[ConditionSpec], systems: &[&str]) -> Result<()> {
        let missing: Vec<String> = conditions
            .iter()
            .flat_map(|c| systems.iter().map(move |s| (c, *s)))
            .filter(|(c, s)| self.get(dataset, c.noise, c.tracks, s).is_none())
            .map(|(c, s)| format!("{dataset}/{}/{s}", c.tag()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!("report is missing cells: {}", missing.join(", "))))
        }
    }

    /// Meta line followed by one line per cell.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Line::Meta {
            metric: self.metric,
            meta: self.meta.clone(),
        })
        .expect("serializes");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(&Line::Cell(r.clone())).expect("serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut report: Option<EvalReport> = None;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: Line =
                serde_json::from_str(line).map_err(|e| Error::Data(format!("report line {}: {e}", n + 1)))?;
            match (parsed, report.as_mut()) {
                (Line::Meta { metric, meta }, None) => report = Some(EvalReport::new(metric, meta)),
                (Line::Cell(row), Some(r)) => r.push(row)?,
                (Line::Meta { .. }, Some(_)) => {
                    return Err(Error::Data(format!("report line {}: second meta record", n + 1)))
                }
                (Line::Cell(_), None) => return Err(Error::Data("report has no meta record".into())),
            }
        }
        report.ok_or_else(|| Error::Data("empty report".into()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Aligned one-row-per-cell listing.
    pub fn to_table(&self) -> String {
        let header = ["dataset", "noise", "tracks", "system", "value", "support"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.dataset.clone(),
                    r.noise.to_string(),
                    r.tracks.to_string(),
                    r.system.clone(),
                    format!("{:.4}", r.value),
                    r.support.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for c in &cells {
            for (w, s) in widths.iter_mut().zip(c) {
                *w = (*w).max(s.len());
            }
        }
        let mut out = String::new();
        let mut line = |fields: &[&str]| {
            let parts: Vec<String> = fields
                .iter()
                .zip(widths)
                .map(|(f, w)| format!("{f:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for c in &cells {
            line(&c.each_ref().map(String::as_str));
        }
        out
    }

    /// Combines reports of the same metric and run configuration.
    pub fn merge(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or_else(|| Error::Invalid("nothing to merge".into()))?;
        let mut out = EvalReport::new(first.metric, first.meta.clone());
        for r in reports {
            if r.metric != first.metric {
                return Err(Error::Data("cannot merge accuracy and WER reports".into()));
            }
            if r.meta.config_digest != first.meta.config_digest || r.meta.seed != first.meta.seed {
                return Err(Error::Data(format!(
                    "reports come from different runs (config digest {} vs {})",
                    r.meta.config_digest, first.meta.config_digest
                )));
            }
            for (k, v) in &r.meta.checkpoints {
                match out.meta.checkpoints.get(k) {
                    Some(prev) if prev != v => {
                        return Err(Error::Data(format!("system {k} scored with two different checkpoints")))
                    }
                    _ => {
                        out.meta.checkpoints.insert(k.clone(), v.clone());
                    }
                }
            }
            for row in &r.rows {
                if out.get(&row.dataset, row.noise, row.tracks, &row.system) != Some(row) {
                    out.push(row.clone())?;
                }
            }
        }
        Ok(out)
    }
}

/// Anything that can be scored on an evaluation example.
pub trait Scorer {
    fn label(&self) -> String;
    /// Checkpoint digest, when the scorer is backed by one.
    fn digest(&self) -> Option<String> {
        None
    }
    /// Per-frame track choice, for systems that select.
    fn select(&self, set: &EvalSet, ex: &EvalExample) -> Result<Option<Vec<usize>>>;
    fn transcribe(&self, set: &EvalSet, ex: &EvalExample) -> Result<Option<Transcript>>;
}

/// Frontend features of every evaluation utterance under one model, computed
/// once on the utterance's own length and looped per example.
pub struct TrackCache<'a> {
    pub model: &'a Trained,
    cache: RefCell<HashMap<usize, Tensor>>,
}

impl<'a> TrackCache<'a> {
    pub fn new(model: &'a Trained) -> Self {
        Self {
            model,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn features(&self, set: &EvalSet, utt: usize) -> Result<Tensor> {
        if let Some(t) = self.cache.borrow().get(&utt) {
            return Ok(t.clone());
        }
        let t = self.model.visual_features(&set.utts[utt].video)?;
        self.cache.borrow_mut().insert(utt, t.clone());
        Ok(t)
    }

    /// The example's tracks, each looped to the audio length.
    pub fn tracks(&self, set: &EvalSet, ex: &EvalExample) -> Result<Vec<Tensor>> {
        let frames = ex.features.shape()[0];
        ex.tracks
            .iter()
            .map(|&u| loop_rows(&self.features(set, u)?, frames))
            .collect()
    }
}

pub struct SelectorScorer<'a>(pub TrackCache<'a>);

impl Scorer for SelectorScorer<'_> {
    fn label(&self) -> String {
        "ss".into()
    }

    fn digest(&self) -> Option<String> {
        Some(self.0.model.checkpoint_digest.clone())
    }

    fn select(&self, set: &EvalSet, ex: &EvalExample) -> Result<Option<Vec<usize>>> {
        let tracks = self.0.tracks(set, ex)?;
        let scores = self.0.model.scores(&ex.features, &tracks)?;
        Ok(Some(crate::attention::select_track(&scores)?))
    }

    fn transcribe(&self, _: &EvalSet, _: &EvalExample) -> Result<Option<Transcript>> {
        Ok(None)
    }
}

pub struct E2eScorer<'a>(pub TrackCache<'a>);

impl Scorer for E2eScorer<'_> {
    fn label(&self) -> String {
        "e2e".into()
    }

    fn digest(&self) -> Option<String> {
        Some(self.0.model.checkpoint_digest.clone())
    }

    fn select(&self, set: &EvalSet, ex: &EvalExample) -> Result<Option<Vec<usize>>> {
        let tracks = self.0.tracks(set, ex)?;
        let scores = self.0.model.scores(&ex.features, &tracks)?;
        Ok(Some(crate::attention::select_track(&scores)?))
    }

    fn transcribe(&self, set: &EvalSet, ex: &EvalExample) -> Result<Option<Transcript>> {
        let tracks = self.0.tracks(set, ex)?;
        Ok(Some(self.0.model.infer_e2e(&ex.features, &tracks)?.transcript))
    }
}

/// Selector followed by the single-track A/V model; with `ss: None` the true
/// track is fed instead (oracle selection).
pub struct TwoStepScorer<'a> {
    pub ss: Option<TrackCache<'a>>,
    pub av: TrackCache<'a>,
}

impl Scorer for TwoStepScorer<'_> {
    fn label(&self) -> String {
        if self.ss.is_some() { "two-step" } else { "oracle" }.into()
    }

    fn digest(&self) -> Option<String> {
        let av = &self.av.model.checkpoint_digest;
        Some(match &self.ss {
            Some(ss) => format!("{}+{av}", ss.model.checkpoint_digest),
            None => av.clone(),
        })
    }

    fn select(&self, set: &EvalSet, ex: &EvalExample) -> Result<Option<Vec<usize>>> {
        match &self.ss {
            Some(ss) => {
                let tracks = ss.tracks(set, ex)?;
                Ok(Some(crate::attention::select_track(&ss.model.scores(&ex.features, &tracks)?)?))
            }
            None => Ok(Some(vec![ex.ground_truth; ex.features.shape()[0]])),
        }
    }

    fn transcribe(&self, set: &EvalSet, ex: &EvalExample) -> Result<Option<Transcript>> {
        let av_tracks = self.av.tracks(set, ex)?;
        let (hyp, _) = match &self.ss {
            Some(ss) => {
                let ss_tracks = ss.tracks(set, ex)?;
                infer_two_step(Some(ss.model), self.av.model, &ex.features, &ss_tracks, &av_tracks, None)?
            }
            None => infer_two_step(None, self.av.model, &ex.features, &[], &av_tracks, Some(ex.ground_truth))?,
        };
        Ok(Some(hyp))
    }
}

pub struct AudioOnlyScorer<'a>(pub &'a Trained);

impl Scorer for AudioOnlyScorer<'_> {
    fn label(&self) -> String {
        "audio-only".into()
    }

    fn digest(&self) -> Option<String> {
        Some(self.0.checkpoint_digest.clone())
    }

    fn select(&self, _: &EvalSet, _: &EvalExample) -> Result<Option<Vec<usize>>> {
        Ok(None)
    }

    fn transcribe(&self, _: &EvalSet, ex: &EvalExample) -> Result<Option<Transcript>> {
        Ok(Some(self.0.transcribe(&ex.features, None)?))
    }
}

/// Uniformly random per-frame choice; a chance-level reference.
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn label(&self) -> String {
        "random".into()
    }

    fn select(&self, _: &EvalSet, ex: &EvalExample) -> Result<Option<Vec<usize>>> {
        let mut rng = stream(self.seed, "random-scorer", ex.utt as u64 ^ ((ex.tracks.len() as u64) << 32));
        let n = ex.tracks.len();
        Ok(Some((0..ex.features.shape()[0]).map(|_| rng.random_range(0..n)).collect()))
    }

    fn transcribe(&self, _: &EvalSet, _: &EvalExample) -> Result<Option<Transcript>> {
        Ok(None)
    }
}

/// Scores every `(condition, scorer)` cell over the whole set. Scorers that
/// do not produce the requested metric are an error.
pub fn run_grid(
    dataset: &str,
    metric: Metric,
    set: &EvalSet,
    conditions: &[ConditionSpec],
    scorers: &[&dyn Scorer],
    meta: ReportMeta,
) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut report = EvalReport::new(metric, meta);
    for s in scorers {
        if let Some(d) = s.digest() {
            report.meta.checkpoints.insert(s.label(), d);
        }
    }
    for cond in conditions {
        for s in scorers {
            let label = s.label();
            let (value, support) = match metric {
                Metric::Accuracy => {
                    let mut traces = Vec::with_capacity(set.len());
                    for i in 0..set.len() {
                        let ex = set.example(i, cond)?;
                        let sel = s.select(set, &ex)?.ok_or_else(|| {
                            Error::Config(format!("system {label} does not select tracks"))
                        })?;
                        let truth = vec![ex.ground_truth; sel.len()];
                        traces.push(SelectionTrace::new(set.utts[i].id.clone(), sel, truth)?);
                    }
                    let frames = traces.iter().map(|t| t.truth.len()).sum();
                    (top1_frame_accuracy(&traces)?, frames)
                }
                Metric::Wer => {
                    let mut pairs = Vec::with_capacity(set.len());
                    for i in 0..set.len() {
                        let ex = set.example(i, cond)?;
                        let hyp = s
                            .transcribe(set, &ex)?
                            .ok_or_else(|| Error::Config(format!("system {label} does not transcribe")))?;
                        pairs.push((hyp.text(), set.utts[i].transcript.text()));
                    }
                    let words = pairs.iter().map(|(_, r)| words(r).len()).sum();
                    (corpus_wer(pairs.iter().map(|(h, r)| (h.as_str(), r.as_str())))?, words)
                }
            };
            log::info!("{dataset} {} {label}: {value:.4}", cond.tag());
            report.push(ReportRow {
                dataset: dataset.to_string(),
                noise: cond.noise,
                tracks: cond.tracks,
                system: label,
                value,
                support,
            })?;
        }
    }
    Ok(report)
}
