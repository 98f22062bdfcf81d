//! Diagnostic probes on frozen pair representations.
//!
//! Each auxiliary task turns exported representations into a binary dataset
//! (label 0 is Top / Left / Above / Left, label 1 is Bottom / Right / Below /
//! Right). A sweep trains a family of ReLU probes of growing size on the task
//! and on a control task with fixed random labels, and reports accuracy and
//! selectivity for each probe.

use crate::datagen::{assign_splits, Split};
use crate::encoder::export::{RepresentationRecord, GEOMETRY_COLUMNS};
use crate::geometry::{absolute_region, relative_position, BoundingBox, Horizontal, RelHorizontal, RelVertical, Vertical};
use crate::io::{fmt_f64, write_atomic, IoError};
use crate::nn::{max_relative_error, numeric_gradient, Adam, Mlp};
use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const PROBE_SPLIT: [f64; 3] = [0.3, 0.2, 0.5];
pub const FAMILY_SIZE: usize = 50;
pub const MAX_WIDTH: usize = 256;

#[derive(Debug, Error)]
pub enum ProbingError {
    #[error("{task} {split} split has a single class")]
    SingleClassDataset { task: AuxTask, split: &'static str },
    #[error("no records for {0}")]
    EmptyDataset(AuxTask),
    #[error("representation file does not match the schema: {0}")]
    SchemaMismatch(String),
    #[error("row {row} has {got} vector values, expected {expected}")]
    InconsistentDimension { row: usize, expected: usize, got: usize },
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AuxTask {
    /// Element in the top or bottom half of the screen.
    AT1,
    /// Element in the left or right half of the screen.
    AT2,
    /// Element above or below the command's target.
    AT3,
    /// Element left or right of the command's target.
    AT4,
}

impl AuxTask {
    pub const ALL: [AuxTask; 4] = [AuxTask::AT1, AuxTask::AT2, AuxTask::AT3, AuxTask::AT4];

    pub fn name(self) -> &'static str {
        match self {
            AuxTask::AT1 => "AT1",
            AuxTask::AT2 => "AT2",
            AuxTask::AT3 => "AT3",
            AuxTask::AT4 => "AT4",
        }
    }

    /// Label from geometry alone, or `None` when the record is excluded.
    pub fn label(self, bbox: &BoundingBox, target: &BoundingBox, is_target: bool) -> Option<u8> {
        match self {
            AuxTask::AT1 => Some((absolute_region(bbox).1 == Vertical::Bottom) as u8),
            AuxTask::AT2 => Some((absolute_region(bbox).0 == Horizontal::Right) as u8),
            AuxTask::AT3 if is_target => None,
            AuxTask::AT4 if is_target => None,
            AuxTask::AT3 => match relative_position(bbox, target).1 {
                RelVertical::Above => Some(0),
                RelVertical::Below => Some(1),
                RelVertical::None => None,
            },
            AuxTask::AT4 => match relative_position(bbox, target).0 {
                RelHorizontal::Left => Some(0),
                RelHorizontal::Right => Some(1),
                RelHorizontal::None => None,
            },
        }
    }
}

impl std::fmt::Display for AuxTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AuxTask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AuxTask::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown task {s:?}, expected AT1..AT4"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxRecord {
    pub vector: Vec<f64>,
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxDataset {
    pub task: AuxTask,
    pub dim: usize,
    pub provenance: String,
    pub records: Vec<AuxRecord>,
}

impl AuxDataset {
    pub fn split(&self, split: Split) -> (Array2<f64>, Vec<usize>) {
        let rows: Vec<&AuxRecord> = self.records.iter().filter(|r| r.split == split).collect();
        let mut x = Array2::zeros((rows.len(), self.dim));
        for (i, r) in rows.iter().enumerate() {
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&r.vector[..]));
        }
        (x, rows.iter().map(|r| r.label as usize).collect())
    }

    fn check_classes(&self) -> Result<(), ProbingError> {
        for split in Split::ALL {
            let mut seen = [false; 2];
            for r in self.records.iter().filter(|r| r.split == split) {
                seen[r.label as usize] = true;
            }
            if seen != [true, true] {
                return Err(ProbingError::SingleClassDataset {
                    task: self.task,
                    split: split.name(),
                });
            }
        }
        Ok(())
    }
}

/// Labels every usable record for `task`, optionally keeps a seeded random
/// subset of `max_records`, and assigns a 30-20-50 split per record.
pub fn build_aux_dataset(
    records: &[RepresentationRecord],
    task: AuxTask,
    seed: u64,
    max_records: Option<usize>,
    provenance: impl Into<String>,
) -> Result<AuxDataset, ProbingError> {
    let mut labelled: Vec<(usize, u8)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| task.label(&r.bbox, &r.target_bbox, r.is_target()).map(|l| (i, l)))
        .collect();
    if labelled.is_empty() {
        return Err(ProbingError::EmptyDataset(task));
    }
    if let Some(cap) = max_records.filter(|&c| c < labelled.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa0c5_0b5e);
        let mut keep = index::sample(&mut rng, labelled.len(), cap).into_vec();
        keep.sort_unstable();
        labelled = keep.into_iter().map(|k| labelled[k]).collect();
    }
    let splits = assign_splits(labelled.len(), PROBE_SPLIT, seed);
    let dim = records[labelled[0].0].vector.len();
    let ds = AuxDataset {
        task,
        dim,
        provenance: provenance.into(),
        records: labelled
            .into_iter()
            .zip(splits)
            .map(|((i, label), split)| AuxRecord {
                vector: records[i].vector.clone(),
                label,
                split,
            })
            .collect(),
    };
    ds.check_classes()?;
    Ok(ds)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fixed random label of a vector: a function of its bytes and the seed only.
pub fn control_label(vector: &[f64], seed: u64) -> u8 {
    let h = vector
        .iter()
        .fold(splitmix(seed), |h, v| splitmix(h ^ v.to_bits()));
    (h >> 63) as u8
}

/// Same vectors and splits, labels replaced by [`control_label`].
pub fn make_control(aux: &AuxDataset, seed: u64) -> AuxDataset {
    AuxDataset {
        task: aux.task,
        dim: aux.dim,
        provenance: format!("{} (control, seed {seed})", aux.provenance),
        records: aux
            .records
            .iter()
            .map(|r| AuxRecord {
                vector: r.vector.clone(),
                label: control_label(&r.vector, seed),
                split: r.split,
            })
            .collect(),
    }
}

/// Training budget shared by every probe of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub control_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub probes: usize,
    pub max_width: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 20,
            control_epochs: 60,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 17,
            probes: FAMILY_SIZE,
            max_width: MAX_WIDTH,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbingError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ProbingError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.control_epochs == 0 || self.batch_size == 0 {
            return Err(ProbingError::InvalidConfig(
                "epochs, control_epochs and batch_size must be at least 1".into(),
            ));
        }
        if self.probes < 2 || self.max_width == 0 {
            return Err(ProbingError::InvalidConfig("need at least 2 probes and a positive width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub control_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl ProbeSpec {
    pub fn sizes(&self, dim: usize) -> Vec<usize> {
        std::iter::once(dim).chain(self.hidden.iter().copied()).chain([2]).collect()
    }

    pub fn param_count(&self, dim: usize) -> usize {
        Mlp::param_count_for(&self.sizes(dim))
    }
}

fn one_layer(dim: usize, w: usize) -> usize {
    Mlp::param_count_for(&[dim, w, 2])
}

fn two_layer(dim: usize, w: usize) -> usize {
    Mlp::param_count_for(&[dim, w, w, 2])
}

/// Hidden widths of the probe family: a linear probe, then one hidden layer,
/// then two equal hidden layers up to `max_width`, with parameter counts
/// log-spaced and strictly increasing. Sizes that would repeat a count are
/// dropped, so a narrow range yields fewer than `n` probes.
pub fn probe_family(dim: usize, n: usize, max_width: usize) -> Vec<Vec<usize>> {
    let lo = Mlp::param_count_for(&[dim, 2]) as f64;
    let hi = two_layer(dim, max_width) as f64;
    let one_max = one_layer(dim, max_width);
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    let mut prev = lo as usize;
    for i in 1..n {
        let target = (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp();
        let last = i == n - 1;
        let mut hidden = None;
        if (target as usize) <= one_max && !last {
            let mut w = ((target - 2.0) / (dim + 3) as f64).round().max(1.0) as usize;
            while one_layer(dim, w) <= prev {
                w += 1;
            }
            if w <= max_width {
                hidden = Some(vec![w]);
            }
        }
        let hidden = hidden.unwrap_or_else(|| {
            // w^2 + (dim + 4) w + 2 = target
            let b = (dim + 4) as f64;
            let mut w = ((-b + (b * b + 4.0 * (target - 2.0)).sqrt()) / 2.0).round().max(1.0) as usize;
            if last {
                w = max_width;
            }
            while two_layer(dim, w) <= prev && w < max_width {
                w += 1;
            }
            vec![w.min(max_width); 2]
        });
        let count = Mlp::param_count_for(&[&[dim][..], &hidden, &[2]].concat());
        if count > prev {
            prev = count;
            out.push(hidden);
        }
    }
    out
}

/// The `cfg.probes` specs of a sweep, sorted by parameter count.
pub fn sweep_specs(dim: usize, cfg: &ProbeConfig) -> Vec<ProbeSpec> {
    probe_family(dim, cfg.probes, cfg.max_width)
        .into_iter()
        .enumerate()
        .map(|(i, hidden)| ProbeSpec {
            hidden,
            epochs: cfg.epochs,
            control_epochs: cfg.control_epochs,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            seed: cfg.seed.wrapping_add(i as u64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub task: AuxTask,
    pub probe_index: usize,
    pub param_count: usize,
    pub aux_test_acc: f64,
    pub aux_test_ce: f64,
    pub control_train_acc: f64,
    pub control_train_ce: f64,
    pub selectivity: f64,
    pub failed: bool,
}

pub fn selectivity(control_train_ce: f64, aux_test_ce: f64) -> f64 {
    control_train_ce - aux_test_ce
}

pub struct Fitted {
    pub probe: Mlp,
    pub epochs_run: usize,
}

/// Adam on mini-batches. With `dev` given, returns the parameters of the
/// epoch with the best dev accuracy (earliest on ties); otherwise the final
/// parameters. `None` when the loss diverges.
pub fn fit_probe(
    spec: &ProbeSpec,
    train: (&Array2<f64>, &[usize]),
    dev: Option<(&Array2<f64>, &[usize])>,
    epochs: usize,
    seed: u64,
) -> Option<Fitted> {
    let (x, y) = train;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = Mlp::new(&spec.sizes(x.ncols()), &mut rng);
    let mut adam = Adam::new(spec.learning_rate, probe.params.len());
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut best: Option<(f64, Mlp)> = None;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            let xb = x.select(ndarray::Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grad) = probe.loss_and_grad(xb.view(), &yb);
            if !loss.is_finite() {
                return None;
            }
            adam.step(&mut probe.params.data, &grad);
        }
        if !probe.params.all_finite() {
            return None;
        }
        if let Some((dx, dy)) = dev {
            let (_, acc) = probe.evaluate(dx.view(), dy);
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, probe.clone()));
            }
        }
    }
    Some(Fitted {
        probe: best.map_or(probe, |(_, p)| p),
        epochs_run: epochs,
    })
}

fn run_one(
    index: usize,
    spec: &ProbeSpec,
    aux: &AuxDataset,
    splits: &Splits,
) -> ProbeRun {
    let param_count = spec.param_count(aux.dim);
    let failed = || ProbeRun {
        task: aux.task,
        probe_index: index,
        param_count,
        aux_test_acc: f64::NAN,
        aux_test_ce: f64::NAN,
        control_train_acc: f64::NAN,
        control_train_ce: f64::NAN,
        selectivity: f64::NAN,
        failed: true,
    };
    let Some(aux_fit) = fit_probe(
        spec,
        (&splits.train.0, &splits.train.1),
        Some((&splits.dev.0, &splits.dev.1)),
        spec.epochs,
        spec.seed,
    ) else {
        log::warn!("{} probe {index} diverged on the auxiliary task", aux.task);
        return failed();
    };
    let Some(ctl_fit) = fit_probe(
        spec,
        (&splits.control.0, &splits.control.1),
        None,
        spec.control_epochs,
        spec.seed ^ 0xc0_7701,
    ) else {
        log::warn!("{} probe {index} diverged on the control task", aux.task);
        return failed();
    };
    let (aux_test_ce, aux_test_acc) = aux_fit.probe.evaluate(splits.test.0.view(), &splits.test.1);
    let (control_train_ce, control_train_acc) =
        ctl_fit.probe.evaluate(splits.control.0.view(), &splits.control.1);
    if !(aux_test_ce.is_finite() && control_train_ce.is_finite()) {
        return failed();
    }
    ProbeRun {
        task: aux.task,
        probe_index: index,
        param_count,
        aux_test_acc,
        aux_test_ce,
        control_train_acc,
        control_train_ce,
        selectivity: selectivity(control_train_ce, aux_test_ce),
        failed: false,
    }
}

struct Splits {
    train: (Array2<f64>, Vec<usize>),
    dev: (Array2<f64>, Vec<usize>),
    test: (Array2<f64>, Vec<usize>),
    control: (Array2<f64>, Vec<usize>),
}

/// Trains every spec on the auxiliary task and on its control task.
///
/// With `jobs > 1` probes train in parallel; each probe is seeded on its own,
/// so results do not depend on `jobs`.
pub fn probe_sweep(
    aux: &AuxDataset,
    cfg: &ProbeConfig,
    control_seed: u64,
    jobs: usize,
) -> Result<Vec<ProbeRun>, ProbingError> {
    cfg.validate()?;
    let control = make_control(aux, control_seed);
    let splits = Splits {
        train: aux.split(Split::Train),
        dev: aux.split(Split::Dev),
        test: aux.split(Split::Test),
        control: control.split(Split::Train),
    };
    let specs = sweep_specs(aux.dim, cfg);
    let mut runs: Vec<ProbeRun> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ProbingError::InvalidConfig(e.to_string()))?;
        pool.install(|| {
            specs
                .par_iter()
                .enumerate()
                .map(|(i, s)| run_one(i, s, aux, &splits))
                .collect()
        })
    } else {
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let run = run_one(i, s, aux, &splits);
                log::debug!(
                    "{} probe {i} ({} params): acc {:.3} sel {:.3}",
                    aux.task,
                    run.param_count,
                    run.aux_test_acc,
                    run.selectivity
                );
                run
            })
            .collect()
    };
    runs.sort_by_key(|r| (r.param_count, r.probe_index));
    Ok(runs)
}

/// Finite-difference check of a probe architecture on random inputs.
pub fn probe_grad_check(hidden: &[usize], dim: usize, epsilon: f64, samples: usize, seed: u64) -> f64 {
    assert!((1e-6..=1e-3).contains(&epsilon), "epsilon must be in [1e-6, 1e-3]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = std::iter::once(dim).chain(hidden.iter().copied()).chain([2]).collect();
    let mut probe = Mlp::new(&sizes, &mut rng);
    let x = Array2::from_shape_fn((8, dim), |(i, j)| ((i * 31 + j * 17) % 13) as f64 / 6.0 - 1.0);
    let y: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let (_, analytic) = probe.loss_and_grad(x.view(), &y);
    let chosen = index::sample(&mut rng, probe.params.len(), samples.min(probe.params.len())).into_vec();
    let mut data = std::mem::take(&mut probe.params.data);
    let numeric = numeric_gradient(&mut data, &chosen, epsilon, |p| {
        probe.params.data.clear();
        probe.params.data.extend_from_slice(p);
        probe.loss(x.view(), &y)
    });
    let picked: Vec<f64> = chosen.iter().map(|&i| analytic[i]).collect();
    max_relative_error(&picked, &numeric)
}

pub const SWEEP_HEADER: [&str; 9] = [
    "task",
    "probe_index",
    "param_count",
    "aux_test_acc",
    "aux_test_ce",
    "control_train_acc",
    "control_train_ce",
    "selectivity",
    "failed",
];

pub fn write_sweep(path: &Path, runs: &[ProbeRun]) -> Result<(), IoError> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(SWEEP_HEADER)?;
        for r in runs {
            wtr.write_record([
                r.task.name().to_string(),
                r.probe_index.to_string(),
                r.param_count.to_string(),
                fmt_f64(r.aux_test_acc),
                fmt_f64(r.aux_test_ce),
                fmt_f64(r.control_train_acc),
                fmt_f64(r.control_train_ce),
                fmt_f64(r.selectivity),
                r.failed.to_string(),
            ])?;
        }
        wtr.flush()
    })
}

pub fn read_sweep(path: &Path) -> Result<Vec<ProbeRun>, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| IoError::schema(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| IoError::schema(path, e.to_string()))?.clone();
    if header.iter().ne(SWEEP_HEADER) {
        return Err(IoError::schema(path, "unexpected sweep header"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| IoError::schema(path, e.to_string()))?;
        let bad = |what: &str| IoError::schema(path, format!("bad {what} in row {:?}", row.position().map(|p| p.line())));
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad(SWEEP_HEADER[i]));
        out.push(ProbeRun {
            task: row[0].parse().map_err(|_| bad("task"))?,
            probe_index: row[1].parse().map_err(|_| bad("probe_index"))?,
            param_count: row[2].parse().map_err(|_| bad("param_count"))?,
            aux_test_acc: f(3)?,
            aux_test_ce: f(4)?,
            control_train_acc: f(5)?,
            control_train_ce: f(6)?,
            selectivity: f(7)?,
            failed: row[8].parse().map_err(|_| bad("failed"))?,
        });
    }
    Ok(out)
}

/// Reads a representation file written by
/// [`export_representations`](crate::encoder::export::export_representations).
pub fn import_representations(path: &Path) -> Result<Vec<RepresentationRecord>, ProbingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| IoError::schema(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| IoError::schema(path, e.to_string()))?.clone();
    let n_geo = GEOMETRY_COLUMNS.len();
    if header.len() < n_geo || header.iter().take(n_geo).ne(GEOMETRY_COLUMNS) {
        return Err(ProbingError::SchemaMismatch(format!(
            "expected leading columns {}",
            GEOMETRY_COLUMNS.join(",")
        )));
    }
    let dim = header.len() - n_geo;
    for (i, name) in header.iter().skip(n_geo).enumerate() {
        if name != format!("v{i}") {
            return Err(ProbingError::SchemaMismatch(format!("column {name:?} should be v{i}")));
        }
    }
    if dim == 0 {
        return Err(ProbingError::SchemaMismatch("no vector columns".into()));
    }
    let mut out = Vec::new();
    for (row_no, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| IoError::schema(path, e.to_string()))?;
        if row.len() != header.len() {
            return Err(ProbingError::InconsistentDimension {
                row: row_no + 1,
                expected: dim,
                got: row.len().saturating_sub(n_geo),
            });
        }
        let num = |i: usize| -> Result<u32, ProbingError> {
            row[i]
                .parse()
                .map_err(|_| ProbingError::SchemaMismatch(format!("row {}: bad {}", row_no + 1, GEOMETRY_COLUMNS[i])))
        };
        let bx = |o: usize| -> Result<BoundingBox, ProbingError> {
            BoundingBox::new(num(o)?, num(o + 1)?, num(o + 2)?, num(o + 3)?)
                .map_err(|e| ProbingError::SchemaMismatch(format!("row {}: {e}", row_no + 1)))
        };
        let vector = (n_geo..row.len())
            .map(|i| {
                row[i].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    ProbingError::SchemaMismatch(format!("row {}: bad value {:?}", row_no + 1, &row[i]))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(RepresentationRecord {
            command_id: row[0].to_string(),
            element_id: row[1].to_string(),
            target_id: row[2].to_string(),
            bbox: bx(3)?,
            target_bbox: bx(7)?,
            vector,
        });
    }
    Ok(out)
}
