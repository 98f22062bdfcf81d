//! Accuracy tables, probe curves and trivial-example filtering.

use crate::corpus::Corpus;
use crate::datagen::Split;
use crate::encoder::{EncoderError, ModelKind, ScorerModel};
use crate::geometry::{Command, Reasoning};
use crate::io::{fmt_f64, write_atomic, IoError};
use crate::nn::argmax;
use crate::probing::{AuxTask, ProbeRun};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("the {0} split has no commands")]
    EmptySplit(&'static str),
    #[error("the trivial-example filter needs a text-only model, got {0}")]
    WrongModelKind(&'static str),
    #[error("threshold must lie in (0.5, 1), got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Accuracy of one model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub split: Split,
    /// Extractive, absolute, relative, all.
    pub accuracy: [f64; 4],
    /// Commands per reasoning type.
    pub counts: [usize; 3],
}

impl ReportRow {
    pub fn ext(&self) -> f64 {
        self.accuracy[0]
    }
    pub fn abs(&self) -> f64 {
        self.accuracy[1]
    }
    pub fn rel(&self) -> f64 {
        self.accuracy[2]
    }
    pub fn all(&self) -> f64 {
        self.accuracy[3]
    }
}

pub type GroundingReport = Vec<ReportRow>;

fn type_index(r: Reasoning) -> usize {
    Reasoning::ALL.iter().position(|x| *x == r).expect("known reasoning type")
}

/// The element a model picks for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub model: String,
    pub split: Split,
    pub command_id: String,
    pub reasoning: Reasoning,
    pub predicted_id: String,
    pub target_id: String,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.predicted_id == self.target_id
    }
}

/// Grounds every command of `split`, in corpus order.
pub fn predictions(
    name: &str,
    model: &ScorerModel,
    corpus: &Corpus,
    split: Split,
    jobs: usize,
) -> Result<Vec<Prediction>, ReportError> {
    let commands = corpus.commands_in(split);
    if commands.is_empty() {
        return Err(ReportError::EmptySplit(split.name()));
    }
    let one = |c: &&Command| -> Result<Prediction, EncoderError> {
        Ok(Prediction {
            model: name.to_string(),
            split,
            command_id: c.id.clone(),
            reasoning: c.reasoning,
            predicted_id: model.ground(corpus.screen_of(c), &c.phrase)?.id.clone(),
            target_id: c.target_id.clone(),
        })
    };
    let out: Result<Vec<_>, EncoderError> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| EncoderError::InvalidConfig(e.to_string()))?;
        pool.install(|| commands.par_iter().map(one).collect())
    } else {
        commands.iter().map(one).collect()
    };
    Ok(out?)
}

/// Accuracy per reasoning type from predictions of one model on one split.
/// Types with no commands get accuracy `NaN`.
pub fn row_from_predictions(model: &str, split: Split, preds: &[Prediction]) -> ReportRow {
    let mut correct = [0usize; 3];
    let mut counts = [0usize; 3];
    for p in preds.iter().filter(|p| p.model == model && p.split == split) {
        let k = type_index(p.reasoning);
        counts[k] += 1;
        correct[k] += p.correct() as usize;
    }
    let total: usize = counts.iter().sum();
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    ReportRow {
        model: model.to_string(),
        split,
        accuracy: [
            ratio(correct[0], counts[0]),
            ratio(correct[1], counts[1]),
            ratio(correct[2], counts[2]),
            ratio(correct.iter().sum(), total),
        ],
        counts,
    }
}

pub fn grounding_row(
    name: &str,
    model: &ScorerModel,
    corpus: &Corpus,
    split: Split,
    jobs: usize,
) -> Result<ReportRow, ReportError> {
    let preds = predictions(name, model, corpus, split, jobs)?;
    Ok(row_from_predictions(name, split, &preds))
}

pub const PREDICTION_HEADER: [&str; 6] = ["model", "split", "command_id", "reasoning", "predicted_id", "target_id"];

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), IoError> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(PREDICTION_HEADER)?;
        for p in preds {
            wtr.write_record([
                p.model.as_str(),
                p.split.name(),
                &p.command_id,
                p.reasoning.short_name(),
                &p.predicted_id,
                &p.target_id,
            ])?;
        }
        wtr.flush()
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| IoError::schema(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| IoError::schema(path, e.to_string()))?.clone();
    if header.iter().ne(PREDICTION_HEADER) {
        return Err(IoError::schema(path, "unexpected predictions header"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| IoError::schema(path, e.to_string()))?;
        let reasoning = Reasoning::ALL
            .into_iter()
            .find(|r| r.short_name() == &row[3])
            .ok_or_else(|| IoError::schema(path, format!("bad reasoning {:?}", &row[3])))?;
        out.push(Prediction {
            model: row[0].to_string(),
            split: row[1].parse().map_err(|e: String| IoError::schema(path, e))?,
            command_id: row[2].to_string(),
            reasoning,
            predicted_id: row[4].to_string(),
            target_id: row[5].to_string(),
        });
    }
    Ok(out)
}

pub fn grounding_report(
    models: &[(&str, &ScorerModel)],
    corpus: &Corpus,
    split: Split,
    jobs: usize,
) -> Result<GroundingReport, ReportError> {
    models
        .iter()
        .map(|(name, m)| grounding_row(name, m, corpus, split, jobs))
        .collect()
}

pub const REPORT_HEADER: [&str; 9] = [
    "model", "split", "ext_acc", "abs_acc", "rel_acc", "all_acc", "n_ext", "n_abs", "n_rel",
];

pub fn write_report(path: &Path, report: &[ReportRow]) -> Result<(), IoError> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(REPORT_HEADER)?;
        for r in report {
            let mut row = vec![r.model.clone(), r.split.name().to_string()];
            row.extend(r.accuracy.iter().map(|a| fmt_f64(*a)));
            row.extend(r.counts.iter().map(|n| n.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()
    })
}

pub fn read_report(path: &Path) -> Result<GroundingReport, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| IoError::schema(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| IoError::schema(path, e.to_string()))?.clone();
    if header.iter().ne(REPORT_HEADER) {
        return Err(IoError::schema(path, "unexpected report header"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| IoError::schema(path, e.to_string()))?;
        let bad = |m: &str| IoError::schema(path, format!("bad {m}"));
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad(REPORT_HEADER[i]));
        let n = |i: usize| row[i].parse::<usize>().map_err(|_| bad(REPORT_HEADER[i]));
        out.push(ReportRow {
            model: row[0].to_string(),
            split: row[1].parse().map_err(|_| bad("split"))?,
            accuracy: [f(2)?, f(3)?, f(4)?, f(5)?],
            counts: [n(6)?, n(7)?, n(8)?],
        });
    }
    Ok(out)
}

/// Plain-text table in the layout `model split Ext Abs Rel All`.
pub fn format_report(report: &[ReportRow]) -> String {
    let mut out = format!("{:<10} {:<6} {:>7} {:>7} {:>7} {:>7}\n", "model", "split", "Ext", "Abs", "Rel", "All");
    for r in report {
        let _ = write!(out, "{:<10} {:<6}", r.model, r.split.name());
        for a in r.accuracy {
            let _ = write!(out, " {:>7.2}", a * 100.0);
        }
        out.push('\n');
    }
    out
}

/// One line of the filter's removal log.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalEntry {
    pub command_id: String,
    pub reasoning: Reasoning,
    /// Pair probability of the top-ranked element.
    pub top1_prob: f64,
    pub removed: bool,
}

/// Drops every command whose target the text-only model ranks first with
/// pair probability above `tau`.
pub fn filter_trivial(
    corpus: &Corpus,
    model: &ScorerModel,
    tau: f64,
) -> Result<(Corpus, Vec<RemovalEntry>), ReportError> {
    if model.kind != ModelKind::TextOnly {
        return Err(ReportError::WrongModelKind(model.kind.name()));
    }
    if !(tau > 0.5 && tau < 1.0) {
        return Err(ReportError::InvalidThreshold(tau));
    }
    let mut log = Vec::with_capacity(corpus.commands.len());
    for c in &corpus.commands {
        let screen = corpus.screen_of(c);
        let scores = model.screen_scores(screen, &c.phrase)?;
        let best = argmax(scores.iter().map(|s| s.relevance));
        let top1_prob = scores[best].probability;
        log.push(RemovalEntry {
            command_id: c.id.clone(),
            reasoning: c.reasoning,
            top1_prob,
            removed: screen.elements[best].id == c.target_id && top1_prob > tau,
        });
    }
    let removed: std::collections::HashSet<&str> =
        log.iter().filter(|e| e.removed).map(|e| e.command_id.as_str()).collect();
    let kept = corpus.retain_commands(|c| !removed.contains(c.id.as_str()));
    Ok((kept, log))
}

pub fn write_removal_log(path: &Path, log: &[RemovalEntry]) -> Result<(), IoError> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["command_id", "reasoning", "top1_prob", "removed"])?;
        for e in log {
            wtr.write_record([
                e.command_id.as_str(),
                e.reasoning.short_name(),
                &fmt_f64(e.top1_prob),
                if e.removed { "true" } else { "false" },
            ])?;
        }
        wtr.flush()
    })
}

/// Fraction of absolute and relative commands.
pub fn spatial_fraction(commands: &[Command]) -> f64 {
    let n = commands.iter().filter(|c| c.reasoning.is_spatial()).count();
    n as f64 / commands.len().max(1) as f64
}

/// Plotted points of one (model, task) sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCurve {
    pub model: String,
    pub task: AuxTask,
    /// `(param_count, aux_test_acc, selectivity)`, strictly increasing in
    /// parameter count.
    pub points: Vec<(usize, f64, f64)>,
}

/// Groups sweep results into curves, leaving out failed probes and keeping
/// the first run of any repeated parameter count.
pub fn probe_curves(model: &str, runs: &[ProbeRun]) -> Vec<ProbeCurve> {
    let mut by_task: BTreeMap<AuxTask, Vec<&ProbeRun>> = BTreeMap::new();
    for r in runs {
        by_task.entry(r.task).or_default().push(r);
    }
    by_task
        .into_iter()
        .map(|(task, mut rs)| {
            rs.sort_by_key(|r| (r.param_count, r.probe_index));
            let mut points: Vec<(usize, f64, f64)> = Vec::new();
            for r in rs.into_iter().filter(|r| !r.failed) {
                if points.last().is_none_or(|p| p.0 < r.param_count) {
                    points.push((r.param_count, r.aux_test_acc, r.selectivity));
                }
            }
            ProbeCurve {
                model: model.to_string(),
                task,
                points,
            }
        })
        .collect()
}

/// Writes `curves.csv` (every run, failed ones flagged) and `curves.svg`
/// (accuracy and selectivity panels per task, log-scaled x axis).
pub fn emit_curves(dir: &Path, sweeps: &[(String, Vec<ProbeRun>)]) -> Result<Vec<ProbeCurve>, IoError> {
    let curves: Vec<ProbeCurve> = sweeps.iter().flat_map(|(m, runs)| probe_curves(m, runs)).collect();
    write_atomic(&dir.join("curves.csv"), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["model", "task", "param_count", "aux_test_acc", "selectivity", "failed"])?;
        for (model, runs) in sweeps {
            let mut sorted: Vec<&ProbeRun> = runs.iter().collect();
            sorted.sort_by_key(|r| (r.task, r.param_count, r.probe_index));
            for r in sorted {
                wtr.write_record([
                    model.as_str(),
                    r.task.name(),
                    &r.param_count.to_string(),
                    &fmt_f64(r.aux_test_acc),
                    &fmt_f64(r.selectivity),
                    if r.failed { "true" } else { "false" },
                ])?;
            }
        }
        wtr.flush()
    })?;
    let svg = render_svg(&curves);
    write_atomic(&dir.join("curves.svg"), |w| w.write_all(svg.as_bytes()))?;
    Ok(curves)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// A self-contained SVG: one column per task, accuracy on top, selectivity
/// below, one polyline per model.
pub fn render_svg(curves: &[ProbeCurve]) -> String {
    let (pw, ph, margin) = (260.0, 180.0, 50.0);
    let tasks: Vec<AuxTask> = {
        let mut t: Vec<AuxTask> = curves.iter().map(|c| c.task).collect();
        t.sort();
        t.dedup();
        t
    };
    let models: Vec<&str> = {
        let mut m: Vec<&str> = Vec::new();
        for c in curves {
            if !m.contains(&c.model.as_str()) {
                m.push(&c.model);
            }
        }
        m
    };
    let points = curves.iter().flat_map(|c| c.points.iter());
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut smin, mut smax) = (0.0f64, 0.0f64);
    for &(p, _, s) in points {
        xmin = xmin.min((p as f64).log10());
        xmax = xmax.max((p as f64).log10());
        smin = smin.min(s);
        smax = smax.max(s);
    }
    if !xmin.is_finite() {
        (xmin, xmax) = (0.0, 1.0);
    }
    if xmax - xmin < 1e-9 {
        xmax = xmin + 1.0;
    }
    if smax - smin < 1e-9 {
        smax = smin + 1.0;
    }
    let width = margin + tasks.len().max(1) as f64 * (pw + margin);
    let height = margin * 2.0 + 2.0 * (ph + margin);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (ti, task) in tasks.iter().enumerate() {
        let left = margin + ti as f64 * (pw + margin);
        for (row, (label, lo, hi)) in [("accuracy", 0.0, 1.0), ("selectivity", smin, smax)].into_iter().enumerate() {
            let top = margin + row as f64 * (ph + margin);
            let _ = writeln!(
                out,
                r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle">{task} {label}</text>"#,
                left + pw / 2.0,
                top - 8.0
            );
            let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{hi:.2}</text>"#, left - 4.0, top + 10.0);
            let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{lo:.2}</text>"#, left - 4.0, top + ph);
            let mut decade = xmin.ceil() as i32;
            while f64::from(decade) <= xmax {
                let x = left + (f64::from(decade) - xmin) / (xmax - xmin) * pw;
                let _ = writeln!(
                    out,
                    r##"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="#ccc"/><text x="{x:.1}" y="{}" text-anchor="middle">1e{decade}</text>"##,
                    top,
                    top + ph,
                    top + ph + 14.0
                );
                decade += 1;
            }
            for c in curves.iter().filter(|c| c.task == *task) {
                let color = PALETTE[models.iter().position(|m| *m == c.model).unwrap_or(0) % PALETTE.len()];
                let pts: Vec<String> = c
                    .points
                    .iter()
                    .map(|&(p, acc, sel)| {
                        let v = if row == 0 { acc } else { sel };
                        let x = left + ((p as f64).log10() - xmin) / (xmax - xmin) * pw;
                        let y = top + ph - (v - lo) / (hi - lo) * ph;
                        format!("{x:.1},{y:.1}")
                    })
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
        }
    }
    for (i, m) in models.iter().enumerate() {
        let y = height - margin / 2.0;
        let x = margin + i as f64 * 120.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{m}</text>"#,
            x + 20.0,
            PALETTE[i % PALETTE.len()],
            x + 25.0,
            y + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}
