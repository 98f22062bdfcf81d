//! The experiment as a sequence of stages that read and write files.
//!
//! ```text
//! gen -> train (text, layout) -> eval -> probe -> report
//!                              \-> filter
//! ```
//!
//! Every stage takes a [`RunConfig`] and writes its artifacts atomically, so
//! rerunning a stage replaces its outputs and leaves nothing half-written.

use crate::corpus::{format_summary, Corpus, COMMANDS_FILE, PAIRS_FILE, SCREENS_FILE};
use crate::datagen::{generate_corpus, make_pairs, split_dataset, DatagenError, GenConfig, Split};
use crate::encoder::export::{representations, write_representations, RepresentationRecord};
use crate::encoder::model::{DEFAULT_BUCKETS, DEFAULT_DIM};
use crate::encoder::{examples_for, train, EncoderError, LossCurve, ModelKind, ScorerModel, TrainConfig, Vocab};
use crate::io::{fmt_f64, read_to_string, write_atomic, IoError};
use crate::probing::{
    build_aux_dataset, import_representations, probe_sweep, read_sweep, write_sweep, AuxTask, ProbeConfig, ProbeRun,
    ProbingError,
};
use crate::report::{
    emit_curves, filter_trivial, format_report, predictions, read_report, row_from_predictions, spatial_fraction,
    write_predictions, write_removal_log, write_report, ReportError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing prerequisite {0}: run the earlier stage first")]
    MissingPrerequisite(PathBuf),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Probing(#[from] ProbingError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl PipelineError {
    /// Process exit status: 2 usage, 3 data or schema, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Datagen(DatagenError::InvalidConfig(_) | DatagenError::BadRatios(_)) => 2,
            PipelineError::Encoder(EncoderError::InvalidConfig(_)) => 2,
            PipelineError::Probing(ProbingError::InvalidConfig(_)) => 2,
            PipelineError::Report(ReportError::InvalidThreshold(_) | ReportError::WrongModelKind(_)) => 2,
            PipelineError::Encoder(EncoderError::NonFiniteLoss { .. }) => 4,
            PipelineError::Report(ReportError::Encoder(EncoderError::NonFiniteLoss { .. })) => 4,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub buckets: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: DEFAULT_DIM,
            buckets: DEFAULT_BUCKETS,
            seed: 11,
        }
    }
}

/// Everything a run needs. Every seed is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub models_dir: PathBuf,
    pub reports_dir: PathBuf,
    pub gen: GenConfig,
    pub pair_seed: u64,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub model: ModelConfig,
    pub train_text: TrainConfig,
    pub train_layout: TrainConfig,
    pub probe: ProbeConfig,
    /// Corpus split whose pairs are encoded for probing.
    pub probe_source: Split,
    /// Records kept per auxiliary task.
    pub probe_records: usize,
    pub probe_split_seed: u64,
    pub control_seed: u64,
    pub tau: f64,
    pub jobs: usize,
}

fn tuned_training() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.15,
        batch_size: 64,
        epochs: 140,
        seed: 13,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_dir: "run/corpus".into(),
            models_dir: "run/models".into(),
            reports_dir: "run/reports".into(),
            gen: GenConfig::default(),
            pair_seed: 1,
            split_ratios: [0.5, 0.2, 0.3],
            split_seed: 3,
            model: ModelConfig::default(),
            train_text: tuned_training(),
            train_layout: tuned_training(),
            probe: ProbeConfig::default(),
            probe_source: Split::Test,
            probe_records: 7000,
            probe_split_seed: 5,
            control_seed: 9,
            tau: 0.99,
            jobs: 1,
        }
    }
}

impl RunConfig {
    /// A small configuration for the `demo` smoke run, rooted at `dir`.
    pub fn demo(dir: &Path) -> Self {
        let base = RunConfig::default();
        let train = TrainConfig {
            epochs: 80,
            ..tuned_training()
        };
        RunConfig {
            corpus_dir: dir.join("corpus"),
            models_dir: dir.join("models"),
            reports_dir: dir.join("reports"),
            gen: GenConfig {
                screens: 1500,
                ..base.gen
            },
            train_text: train.clone(),
            train_layout: train,
            probe: ProbeConfig {
                epochs: 6,
                control_epochs: 20,
                ..base.probe
            },
            probe_records: 1500,
            ..base
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            w.write_all(b"\n")
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.gen.validate()?;
        self.train_text.validate()?;
        self.train_layout.validate()?;
        self.probe.validate()?;
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Config(format!("split_ratios must sum to 1, got {:?}", self.split_ratios)));
        }
        if self.model.dim == 0 || self.model.buckets == 0 {
            return Err(PipelineError::Config("model dim and buckets must be positive".into()));
        }
        if !(self.tau > 0.5 && self.tau < 1.0) {
            return Err(PipelineError::Config(format!("tau must lie in (0.5, 1), got {}", self.tau)));
        }
        if self.jobs == 0 {
            return Err(PipelineError::Config("jobs must be at least 1".into()));
        }
        if self.probe_records < 10 {
            return Err(PipelineError::Config("probe_records must be at least 10".into()));
        }
        Ok(())
    }

    pub fn train_config(&self, kind: ModelKind) -> &TrainConfig {
        match kind {
            ModelKind::TextOnly => &self.train_text,
            ModelKind::LayoutAware => &self.train_layout,
        }
    }

    pub fn checkpoint_path(&self, kind: ModelKind) -> PathBuf {
        self.models_dir.join(format!("{}.json", kind.name()))
    }

    pub fn loss_path(&self, kind: ModelKind) -> PathBuf {
        self.models_dir.join(format!("loss_{}.csv", kind.name()))
    }

    pub fn grounding_path(&self) -> PathBuf {
        self.reports_dir.join("grounding.csv")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.reports_dir.join("predictions.csv")
    }

    pub fn representations_path(&self, label: &str) -> PathBuf {
        self.reports_dir.join(format!("reps_{label}.csv"))
    }

    pub fn sweep_path(&self, label: &str) -> PathBuf {
        self.reports_dir.join(format!("sweep_{label}.csv"))
    }

    pub fn filtered_dir(&self) -> PathBuf {
        self.reports_dir.join("filtered")
    }

    pub fn removal_log_path(&self) -> PathBuf {
        self.reports_dir.join("removal_log.csv")
    }
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e).into())
}

fn require(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingPrerequisite(path.to_path_buf()))
    }
}

/// Generates the corpus, assigns splits, writes the corpus files and returns
/// the summary table.
pub fn cmd_gen(cfg: &RunConfig) -> Result<String, PipelineError> {
    cfg.validate()?;
    let generated = generate_corpus(&cfg.gen)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.pair_seed);
    let mut pairs = make_pairs(&generated.screens, &generated.commands, &mut rng)?;
    split_dataset(&mut pairs, cfg.split_ratios, cfg.split_seed)?;
    let corpus = Corpus::new(generated.screens, generated.commands, pairs).map_err(PipelineError::Config)?;
    ensure_dir(&cfg.corpus_dir)?;
    corpus.save(&cfg.corpus_dir)?;
    Ok(format_summary(&corpus))
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus, PipelineError> {
    for f in [SCREENS_FILE, COMMANDS_FILE, PAIRS_FILE] {
        require(&cfg.corpus_dir.join(f))?;
    }
    Ok(Corpus::load(&cfg.corpus_dir)?)
}

/// Vocabulary of training commands and every element text.
pub fn build_vocab(corpus: &Corpus) -> Vocab {
    let train: Vec<&str> = corpus.commands_in(Split::Train).into_iter().map(|c| c.phrase.as_str()).collect();
    let texts = corpus.screens.iter().flat_map(|s| s.elements.iter().map(|e| e.text.as_str()));
    Vocab::build(train.into_iter().chain(texts))
}

/// Trains one model kind on the train split and writes its checkpoint and
/// loss curve.
pub fn cmd_train(cfg: &RunConfig, kind: ModelKind) -> Result<LossCurve, PipelineError> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let mut model = ScorerModel::new(kind, build_vocab(&corpus), cfg.model.dim, cfg.model.buckets, cfg.model.seed);
    let examples = examples_for(&model, &corpus, Split::Train)?;
    let curve = train(&mut model, &examples, cfg.train_config(kind))?;
    ensure_dir(&cfg.models_dir)?;
    model.save(&cfg.checkpoint_path(kind))?;
    write_atomic(&cfg.loss_path(kind), |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in curve.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt_f64(*l))?;
        }
        Ok(())
    })?;
    Ok(curve)
}

pub fn load_model(cfg: &RunConfig, kind: ModelKind) -> Result<ScorerModel, PipelineError> {
    let path = cfg.checkpoint_path(kind);
    require(&path)?;
    let model = ScorerModel::load(&path)?;
    if model.kind != kind {
        return Err(IoError::schema(&path, format!("checkpoint holds a {} model", model.kind.name())).into());
    }
    Ok(model)
}

const KINDS: [ModelKind; 2] = [ModelKind::TextOnly, ModelKind::LayoutAware];

/// Grounding accuracy of both models on the dev and test splits.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String, PipelineError> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let models: Vec<ScorerModel> = KINDS.iter().map(|&k| load_model(cfg, k)).collect::<Result<_, _>>()?;
    let mut preds = Vec::new();
    let mut rows = Vec::new();
    for split in [Split::Dev, Split::Test] {
        for m in &models {
            let p = predictions(m.kind.name(), m, &corpus, split, cfg.jobs)?;
            rows.push(row_from_predictions(m.kind.name(), split, &p));
            preds.extend(p);
        }
    }
    ensure_dir(&cfg.reports_dir)?;
    write_predictions(&cfg.predictions_path(), &preds)?;
    write_report(&cfg.grounding_path(), &rows)?;
    Ok(format_report(&rows))
}

/// Probe sweeps over the chosen tasks. Without `import`, both models'
/// representations of the probe source split are exported and probed;
/// with it, the imported vectors are probed under the file's stem as label.
pub fn cmd_probe(
    cfg: &RunConfig,
    tasks: &[AuxTask],
    import: Option<&Path>,
) -> Result<Vec<(String, Vec<ProbeRun>)>, PipelineError> {
    cfg.validate()?;
    let tasks: Vec<AuxTask> = if tasks.is_empty() { AuxTask::ALL.to_vec() } else { tasks.to_vec() };
    let mut sources: Vec<(String, Vec<RepresentationRecord>)> = Vec::new();
    ensure_dir(&cfg.reports_dir)?;
    if let Some(path) = import {
        require(path)?;
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("imported")
            .to_string();
        sources.push((label, import_representations(path)?));
    } else {
        let corpus = load_corpus(cfg)?;
        for kind in KINDS {
            let model = load_model(cfg, kind)?;
            let recs = representations(&model, &corpus, &[cfg.probe_source])?;
            write_representations(&cfg.representations_path(kind.name()), &recs)?;
            sources.push((kind.name().to_string(), recs));
        }
    }
    let mut out = Vec::new();
    for (label, recs) in sources {
        let mut runs = Vec::new();
        for &task in &tasks {
            let aux = build_aux_dataset(&recs, task, cfg.probe_split_seed, Some(cfg.probe_records), label.as_str())?;
            log::info!("{label} {task}: {} records", aux.records.len());
            runs.extend(probe_sweep(&aux, &cfg.probe, cfg.control_seed, cfg.jobs)?);
        }
        write_sweep(&cfg.sweep_path(&label), &runs)?;
        out.push((label, runs));
    }
    Ok(out)
}

/// Sweep files in the reports directory, sorted by label.
pub fn find_sweeps(cfg: &RunConfig) -> Result<Vec<(String, Vec<ProbeRun>)>, PipelineError> {
    let mut labels = Vec::new();
    if cfg.reports_dir.exists() {
        let entries = std::fs::read_dir(&cfg.reports_dir).map_err(|e| IoError::io(&cfg.reports_dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| IoError::io(&cfg.reports_dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(label) = name.strip_prefix("sweep_").and_then(|n| n.strip_suffix(".csv")) {
                labels.push(label.to_string());
            }
        }
    }
    labels.sort();
    labels
        .into_iter()
        .map(|l| Ok((l.clone(), read_sweep(&cfg.sweep_path(&l))?)))
        .collect()
}

/// Renders the probe curves and returns the grounding table plus a best
/// accuracy summary per sweep and task.
pub fn cmd_report(cfg: &RunConfig) -> Result<String, PipelineError> {
    let mut out = String::new();
    let grounding = cfg.grounding_path();
    let sweeps = find_sweeps(cfg)?;
    if !grounding.exists() && sweeps.is_empty() {
        return Err(PipelineError::MissingPrerequisite(grounding));
    }
    if grounding.exists() {
        out.push_str(&format_report(&read_report(&grounding)?));
    }
    if !sweeps.is_empty() {
        emit_curves(&cfg.reports_dir, &sweeps)?;
        out.push_str("\nsweep      task  best_acc  linear_sel  max_sel\n");
        for (label, runs) in &sweeps {
            for task in AuxTask::ALL {
                let rs: Vec<&ProbeRun> = runs.iter().filter(|r| r.task == task && !r.failed).collect();
                if rs.is_empty() {
                    continue;
                }
                let best = rs.iter().map(|r| r.aux_test_acc).fold(f64::NEG_INFINITY, f64::max);
                let max_sel = rs.iter().map(|r| r.selectivity).fold(f64::NEG_INFINITY, f64::max);
                out.push_str(&format!(
                    "{label:<10} {task}  {best:>8.3}  {:>10.3}  {max_sel:>7.3}\n",
                    rs[0].selectivity
                ));
            }
        }
    }
    Ok(out)
}

/// Outcome of the trivial-example filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub before: usize,
    pub after: usize,
    pub spatial_before: f64,
    pub spatial_after: f64,
}

/// Removes commands the text-only model solves with high certainty and
/// writes the filtered corpus and the removal log.
pub fn cmd_filter(cfg: &RunConfig, tau: f64) -> Result<FilterSummary, PipelineError> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let model = load_model(cfg, ModelKind::TextOnly)?;
    let (kept, log) = filter_trivial(&corpus, &model, tau)?;
    let dir = cfg.filtered_dir();
    ensure_dir(&dir)?;
    kept.save(&dir)?;
    write_removal_log(&cfg.removal_log_path(), &log)?;
    Ok(FilterSummary {
        before: corpus.commands.len(),
        after: kept.commands.len(),
        spatial_before: spatial_fraction(&corpus.commands),
        spatial_after: spatial_fraction(&kept.commands),
    })
}

/// Every stage in order; returns a human-readable log of the run.
pub fn run_all(cfg: &RunConfig) -> Result<String, PipelineError> {
    let mut out = String::new();
    cfg.validate()?;
    ensure_dir(&cfg.reports_dir)?;
    cfg.save(&cfg.reports_dir.join("config.json"))?;
    out.push_str(&cmd_gen(cfg)?);
    for kind in KINDS {
        let curve = cmd_train(cfg, kind)?;
        out.push_str(&format!(
            "trained {} model: final loss {:.4}\n",
            kind.name(),
            curve.last().copied().unwrap_or(f64::NAN)
        ));
    }
    out.push('\n');
    out.push_str(&cmd_eval(cfg)?);
    cmd_probe(cfg, &[], None)?;
    let f = cmd_filter(cfg, cfg.tau)?;
    out.push_str(&format!(
        "\nfilter: kept {} of {} commands, spatial share {:.3} -> {:.3}\n\n",
        f.after, f.before, f.spatial_before, f.spatial_after
    ));
    out.push_str(&cmd_report(cfg)?);
    Ok(out)
}

/// The full pipeline on the small demo configuration under `dir`.
pub fn demo(dir: &Path, jobs: usize) -> Result<String, PipelineError> {
    let cfg = RunConfig {
        jobs,
        ..RunConfig::demo(dir)
    };
    run_all(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::demo(dir);
        cfg.gen.screens = 60;
        cfg.train_text.epochs = 2;
        cfg.train_layout.epochs = 2;
        cfg.probe.probes = 3;
        cfg.probe.max_width = 8;
        cfg.probe.epochs = 1;
        cfg.probe.control_epochs = 1;
        cfg.probe_records = 200;
        cfg
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let p = dir.path().join("c.json");
        cfg.save(&p).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap(), cfg);
        std::fs::write(&p, r#"{"tau": 0.9}"#).unwrap();
        let partial = RunConfig::load(&p).unwrap();
        assert_eq!(partial.tau, 0.9);
        assert_eq!(partial.gen, GenConfig::default());
        std::fs::write(&p, r#"{"bogus": 1}"#).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn stages_require_their_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let err = cmd_train(&cfg, ModelKind::TextOnly).unwrap_err();
        assert!(matches!(err, PipelineError::MissingPrerequisite(_)));
        assert_eq!(err.exit_code(), 3);
        cmd_gen(&cfg).unwrap();
        assert!(matches!(cmd_eval(&cfg), Err(PipelineError::MissingPrerequisite(_))));
        assert!(matches!(cmd_report(&cfg), Err(PipelineError::MissingPrerequisite(_))));
    }

    #[test]
    fn tiny_run_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let log = run_all(&cfg).unwrap();
        assert!(log.contains("extractive"));
        for p in [
            cfg.grounding_path(),
            cfg.predictions_path(),
            cfg.sweep_path("text"),
            cfg.sweep_path("layout"),
            cfg.removal_log_path(),
            cfg.reports_dir.join("curves.svg"),
        ] {
            assert!(p.exists(), "{}", p.display());
        }
        let imported = cmd_probe(&cfg, &[AuxTask::AT2], Some(&cfg.representations_path("layout"))).unwrap();
        assert_eq!(imported[0].0, "reps_layout");
        assert_eq!(imported[0].1.len(), 3);
    }

    #[test]
    fn divergence_maps_to_numeric_exit_code() {
        let e = PipelineError::Encoder(EncoderError::NonFiniteLoss { epoch: 0 });
        assert_eq!(e.exit_code(), 4);
    }
}
