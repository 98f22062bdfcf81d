//! Pairwise relevance scorers.
//!
//! A command `c` and an element `u` are scored as a pair: the tokens of
//! `[c, SEP, u.text]` are embedded and mean-pooled, the pooled vector goes
//! through a ReLU layer (its output is the pair's [`Representation`]) and a
//! final linear layer produces logits for irrelevant/relevant. Grounding picks
//! the element with the largest relevance score
//! `logit(relevant) - logit(irrelevant)`, which is the element maximizing the
//! pair probability as well.
//!
//! [`ModelKind::TextOnly`] sees only text. [`ModelKind::LayoutAware`] also adds
//! bucketed embeddings of the element's four box coordinates to each element
//! token.

pub mod checkpoint;
pub mod export;
pub mod model;
pub mod vocab;

use crate::corpus::Corpus;
use crate::datagen::Split;
use crate::nn::{max_relative_error, numeric_gradient};
pub use model::{ModelKind, PairInput, Representation, Score, ScorerModel};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
pub use vocab::Vocab;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("command has no tokens")]
    EmptyCommand,
    #[error("representation has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("screen {0:?} has no elements")]
    EmptyScreen(String),
    #[error("training loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training pairs")]
    NoTrainingData,
    #[error("unresolved reference: {0}")]
    Unresolved(String),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 5,
            seed: 13,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EncoderError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(EncoderError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(EncoderError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean training loss per epoch.
pub type LossCurve = Vec<f64>;

/// Tokenized pairs of one split with their labels.
pub fn examples_for(
    model: &ScorerModel,
    corpus: &Corpus,
    split: Split,
) -> Result<Vec<(PairInput, usize)>, EncoderError> {
    corpus
        .pairs_in(split)
        .map(|p| {
            let cmd = corpus
                .command(&p.command_id)
                .ok_or_else(|| EncoderError::Unresolved(format!("command {}", p.command_id)))?;
            let screen = corpus.screen_of(cmd);
            let el = screen
                .element(&p.element_id)
                .ok_or_else(|| EncoderError::Unresolved(format!("element {}", p.element_id)))?;
            Ok((model.prepare(&cmd.phrase, el)?, p.label as usize))
        })
        .collect()
}

/// Mini-batch SGD with a fixed step on the two-class cross-entropy.
///
/// The shuffle order of each epoch depends only on `cfg.seed` and the epoch
/// number, so training is reproducible bit for bit. Parameters are rounded
/// to `f32` after the last step so a saved checkpoint reproduces the trained
/// model exactly.
pub fn train(
    model: &mut ScorerModel,
    examples: &[(PairInput, usize)],
    cfg: &TrainConfig,
) -> Result<LossCurve, EncoderError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(EncoderError::NoTrainingData);
    }
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<&PairInput> = chunk.iter().map(|&i| &examples[i].0).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| examples[i].1).collect();
            let (loss, grad) = model.loss_and_grad(&inputs, &labels);
            if !loss.is_finite() {
                return Err(EncoderError::NonFiniteLoss { epoch });
            }
            total += loss * chunk.len() as f64;
            for (p, g) in model.params.data.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
        if !model.params.all_finite() {
            return Err(EncoderError::NonFiniteLoss { epoch });
        }
        let mean = total / examples.len() as f64;
        log::info!("{} epoch {}: mean loss {:.5}", model.kind.name(), epoch + 1, mean);
        curve.push(mean);
    }
    model.params.round_to_f32();
    Ok(curve)
}

/// Mean loss over a set of examples without updating anything.
pub fn evaluate_loss(model: &ScorerModel, examples: &[(PairInput, usize)]) -> f64 {
    let mut total = 0.0;
    for chunk in examples.chunks(512) {
        let inputs: Vec<&PairInput> = chunk.iter().map(|e| &e.0).collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.1).collect();
        total += model.loss(&inputs, &labels) * chunk.len() as f64;
    }
    total / examples.len().max(1) as f64
}

/// Compares the analytic loss gradient with central finite differences on up
/// to `samples` parameters the batch actually touches, and returns the
/// largest relative error.
pub fn grad_check(
    model: &ScorerModel,
    batch: &[(PairInput, usize)],
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    grad_check_with(model, batch, epsilon, samples, seed, |_| {})
}

/// [`grad_check`] with a hook that may tamper with the analytic gradient
/// before comparison.
pub fn grad_check_with(
    model: &ScorerModel,
    batch: &[(PairInput, usize)],
    epsilon: f64,
    samples: usize,
    seed: u64,
    corrupt: impl FnOnce(&mut [f64]),
) -> f64 {
    assert!((1e-6..=1e-3).contains(&epsilon), "epsilon must be in [1e-6, 1e-3]");
    let inputs: Vec<&PairInput> = batch.iter().map(|e| &e.0).collect();
    let labels: Vec<usize> = batch.iter().map(|e| e.1).collect();
    let (_, mut analytic) = model.loss_and_grad(&inputs, &labels);
    corrupt(&mut analytic);
    let active = model.active_parameters(&inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = active
        .choose_multiple(&mut rng, samples.min(active.len()))
        .copied()
        .collect();
    let mut probe = model.clone();
    let mut data = std::mem::take(&mut probe.params.data);
    let numeric = numeric_gradient(&mut data, &chosen, epsilon, |p| {
        probe.params.data.clear();
        probe.params.data.extend_from_slice(p);
        probe.loss(&inputs, &labels)
    });
    let picked: Vec<f64> = chosen.iter().map(|&i| analytic[i]).collect();
    max_relative_error(&picked, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PixelRect, Screen};

    fn toy() -> (ScorerModel, Vec<(PairInput, usize)>) {
        let screen = Screen::from_pixels(
            "s",
            1000,
            1000,
            vec![
                ("a".to_string(), "cancel".to_string(), PixelRect::new(10, 200, 10, 100)),
                ("b".to_string(), "ok".to_string(), PixelRect::new(600, 900, 700, 800)),
                ("c".to_string(), "menu".to_string(), PixelRect::new(100, 300, 400, 500)),
            ],
        )
        .unwrap();
        let phrases = ["click on the cancel button", "tap the topmost item", "tap ok"];
        let vocab = Vocab::build(phrases.iter().copied().chain(["cancel", "ok", "menu"]));
        let model = ScorerModel::new(ModelKind::LayoutAware, vocab, 12, 10, 5);
        let mut batch = Vec::new();
        for (pi, ph) in phrases.iter().enumerate() {
            for (ei, e) in screen.elements.iter().enumerate() {
                batch.push((model.prepare(ph, e).unwrap(), (pi == ei) as usize));
            }
        }
        (model, batch)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut model, batch) = toy();
        // Non-trivial head so every path carries gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        model.params.fill_normal(3, 0.5, &mut rng);
        model.params.fill_normal(2, 0.1, &mut rng);
        let err = grad_check(&model, &batch, 1e-6, 200, 1);
        assert!(err < 1e-4, "{err}");
        let mut text = ScorerModel::new(ModelKind::TextOnly, model.vocab.clone(), 12, 10, 5);
        text.params.fill_normal(3, 0.5, &mut rng);
        assert!(grad_check(&text, &batch, 1e-6, 200, 2) < 1e-4);
    }

    #[test]
    fn zero_model_has_zero_gradients() {
        let (mut model, batch) = toy();
        model.params.data.iter_mut().for_each(|v| *v = 0.0);
        let inputs: Vec<&PairInput> = batch.iter().map(|e| &e.0).collect();
        let labels: Vec<usize> = batch.iter().map(|e| e.1).collect();
        let (_, grad) = model.loss_and_grad(&inputs, &labels);
        let bias = model.params.range(4);
        for (i, g) in grad.iter().enumerate() {
            if !bias.contains(&i) {
                assert_eq!(*g, 0.0, "parameter {i}");
            }
        }
        assert!(grad_check(&model, &batch, 1e-5, 100, 3) < 1e-8);
    }

    #[test]
    fn sign_flip_is_detected() {
        let (mut model, batch) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        model.params.fill_normal(3, 0.5, &mut rng);
        let err = grad_check_with(&model, &batch, 1e-6, 100, 1, |g| g.iter_mut().for_each(|v| *v = -*v));
        assert!((err - 1.0).abs() < 1e-3, "{err}");
    }

    #[test]
    fn initial_loss_is_near_ln2() {
        let (model, batch) = toy();
        let balanced: Vec<_> = batch
            .iter()
            .filter(|e| e.1 == 1)
            .chain(batch.iter().filter(|e| e.1 == 0).take(3))
            .cloned()
            .collect();
        let loss = evaluate_loss(&model, &balanced);
        assert!((loss - std::f64::consts::LN_2).abs() < 0.05, "{loss}");
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let (mut model, _) = toy();
        assert!(matches!(
            train(&mut model, &[], &TrainConfig::default()),
            Err(EncoderError::NoTrainingData)
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let (mut model, batch) = toy();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut model, &batch, &cfg), Err(EncoderError::NonFiniteLoss { .. })));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (model, batch) = toy();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            batch_size: 4,
            epochs: 30,
            seed: 1,
        };
        let mut a = model.clone();
        let mut b = model.clone();
        let ca = train(&mut a, &batch, &cfg).unwrap();
        let cb = train(&mut b, &batch, &cfg).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.params.data, b.params.data);
        assert!(ca.last().unwrap() < &ca[0]);
    }
}
