use super::vocab::{Vocab, SEP};
use super::EncoderError;
use crate::geometry::{BoundingBox, Screen, UIElement, GRID_MAX};
use crate::nn::{argmax, cross_entropy, FlatParams};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_BUCKETS: usize = 50;

const TOKENS: usize = 0;
const W1: usize = 1;
const B1: usize = 2;
const W2: usize = 3;
const B2: usize = 4;
/// First of the four coordinate tables (x0, x1, y0, y1), layout-aware only.
const COORD: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    TextOnly,
    LayoutAware,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TextOnly => "text",
            ModelKind::LayoutAware => "layout",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "textonly" | "text-only" => Ok(ModelKind::TextOnly),
            "layout" | "layoutaware" | "layout-aware" => Ok(ModelKind::LayoutAware),
            other => Err(format!("unknown model kind {other:?} (expected text or layout)")),
        }
    }
}

/// Pooled joint encoding of one (command, element) pair, read off just before
/// the classification layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation(pub Vec<f64>);

impl Representation {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    /// `[irrelevant, relevant]`
    pub logits: [f64; 2],
    /// Softmax probability of the relevant class.
    pub probability: f64,
    /// `logit(relevant) - logit(irrelevant)`.
    pub relevance: f64,
}

impl Score {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let relevance = logits[1] - logits[0];
        // sigmoid of the logit gap is the two-way softmax
        let probability = if relevance >= 0.0 {
            1.0 / (1.0 + (-relevance).exp())
        } else {
            let e = relevance.exp();
            e / (1.0 + e)
        };
        Score {
            logits,
            probability,
            relevance,
        }
    }
}

/// A tokenized pair ready for the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairInput {
    /// `[command tokens, SEP, element tokens]`
    pub tokens: Vec<usize>,
    /// Index of the first element token.
    pub element_start: usize,
    /// Coordinate buckets of the element box (x0, x1, y0, y1).
    pub buckets: [usize; 4],
}

/// Mean-pooled bag-of-tokens scorer with a two-layer pair head.
///
/// The layout-aware variant adds four coordinate embeddings to every element
/// token; command tokens and the separator get a reserved neutral bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub buckets: usize,
    pub seed: u64,
    pub vocab: Vocab,
    pub params: FlatParams,
}

/// Intermediate values of a batched forward pass.
pub struct ForwardTrace {
    pub pooled: Array2<f64>,
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
}

impl ScorerModel {
    pub fn new(kind: ModelKind, vocab: Vocab, dim: usize, buckets: usize, seed: u64) -> Self {
        assert!(dim > 0 && buckets > 0, "dim and buckets must be positive");
        let v = vocab.len();
        let mut shapes = vec![
            ("tokens", v, dim),
            ("w1", dim, dim),
            ("b1", 1, dim),
            ("w2", dim, 2),
            ("b2", 1, 2),
        ];
        if kind == ModelKind::LayoutAware {
            // one extra row per table: the neutral bucket
            for name in ["x0", "x1", "y0", "y1"] {
                shapes.push((name, buckets + 1, dim));
            }
        }
        let mut params = FlatParams::new(&shapes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params.fill_normal(TOKENS, 1.0, &mut rng);
        params.fill_normal(W1, (2.0 / dim as f64).sqrt(), &mut rng);
        params.fill_normal(W2, 0.01, &mut rng);
        if kind == ModelKind::LayoutAware {
            for k in 0..4 {
                params.fill_normal(COORD + k, 0.5, &mut rng);
            }
        }
        params.round_to_f32();
        ScorerModel {
            kind,
            dim,
            buckets,
            seed,
            vocab,
            params,
        }
    }

    pub fn bucket(&self, coord: u32) -> usize {
        ((coord.min(GRID_MAX) as usize * self.buckets) / GRID_MAX as usize).min(self.buckets - 1)
    }

    fn buckets_of(&self, b: &BoundingBox) -> [usize; 4] {
        b.coords().map(|c| self.bucket(c))
    }

    pub fn prepare(&self, phrase: &str, element: &UIElement) -> Result<PairInput, EncoderError> {
        self.prepare_parts(phrase, &element.text, &element.bbox)
    }

    pub fn prepare_parts(
        &self,
        phrase: &str,
        text: &str,
        bbox: &BoundingBox,
    ) -> Result<PairInput, EncoderError> {
        let mut tokens = self.vocab.tokenize(phrase);
        if tokens.is_empty() {
            return Err(EncoderError::EmptyCommand);
        }
        tokens.push(SEP);
        let element_start = tokens.len();
        tokens.extend(self.vocab.tokenize(text));
        Ok(PairInput {
            tokens,
            element_start,
            buckets: self.buckets_of(bbox),
        })
    }

    fn pool_into(&self, input: &PairInput, out: &mut ndarray::ArrayViewMut1<'_, f64>) {
        let emb = self.params.mat(TOKENS);
        out.fill(0.0);
        // fixed summation order, so permuted token bags pool to the same bits
        let mut sorted = input.tokens.clone();
        sorted.sort_unstable();
        for t in sorted {
            *out += &emb.row(t);
        }
        if self.kind == ModelKind::LayoutAware {
            let n_elem = (input.tokens.len() - input.element_start) as f64;
            let n_neutral = input.element_start as f64;
            for k in 0..4 {
                let table = self.params.mat(COORD + k);
                out.scaled_add(n_neutral, &table.row(self.buckets));
                out.scaled_add(n_elem, &table.row(input.buckets[k]));
            }
        }
        *out /= input.tokens.len() as f64;
    }

    pub fn forward(&self, inputs: &[&PairInput]) -> ForwardTrace {
        let mut pooled = Array2::zeros((inputs.len(), self.dim));
        for (i, inp) in inputs.iter().enumerate() {
            self.pool_into(inp, &mut pooled.row_mut(i));
        }
        let mut hidden = pooled.dot(&self.params.mat(W1));
        hidden += &self.params.vec(B1);
        hidden.mapv_inplace(|v| v.max(0.0));
        let mut logits = hidden.dot(&self.params.mat(W2));
        logits += &self.params.vec(B2);
        ForwardTrace {
            pooled,
            hidden,
            logits,
        }
    }

    /// Mean cross-entropy over the batch and its gradient in flat layout.
    pub fn loss_and_grad(&self, inputs: &[&PairInput], labels: &[usize]) -> (f64, Vec<f64>) {
        let trace = self.forward(inputs);
        let (loss, dlogits) = cross_entropy(&trace.logits, labels);
        let mut grad = self.params.zeros_like();
        grad.mat_mut(W2).assign(&trace.hidden.t().dot(&dlogits));
        grad.vec_mut(B2).assign(&dlogits.sum_axis(Axis(0)));
        let mut dhidden = dlogits.dot(&self.params.mat(W2).t());
        dhidden.zip_mut_with(&trace.hidden, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        grad.mat_mut(W1).assign(&trace.pooled.t().dot(&dhidden));
        grad.vec_mut(B1).assign(&dhidden.sum_axis(Axis(0)));
        let dpooled = dhidden.dot(&self.params.mat(W1).t());
        for (i, inp) in inputs.iter().enumerate() {
            let n = inp.tokens.len() as f64;
            let row = dpooled.row(i);
            {
                let mut demb = grad.mat_mut(TOKENS);
                for &t in &inp.tokens {
                    demb.row_mut(t).scaled_add(1.0 / n, &row);
                }
            }
            if self.kind == ModelKind::LayoutAware {
                let n_elem = (inp.tokens.len() - inp.element_start) as f64;
                let n_neutral = inp.element_start as f64;
                for k in 0..4 {
                    let mut table = grad.mat_mut(COORD + k);
                    table.row_mut(self.buckets).scaled_add(n_neutral / n, &row);
                    table.row_mut(inp.buckets[k]).scaled_add(n_elem / n, &row);
                }
            }
        }
        (loss, grad.data)
    }

    pub fn loss(&self, inputs: &[&PairInput], labels: &[usize]) -> f64 {
        let trace = self.forward(inputs);
        cross_entropy(&trace.logits, labels).0
    }

    /// Flat indices of every parameter a batch can influence.
    pub fn active_parameters(&self, inputs: &[&PairInput]) -> Vec<usize> {
        let mut idx = Vec::new();
        let mut rows = std::collections::BTreeSet::new();
        for inp in inputs {
            rows.extend(inp.tokens.iter().copied());
        }
        let tok = self.params.range(TOKENS);
        for r in rows {
            idx.extend(tok.start + r * self.dim..tok.start + (r + 1) * self.dim);
        }
        for seg in [W1, B1, W2, B2] {
            idx.extend(self.params.range(seg));
        }
        if self.kind == ModelKind::LayoutAware {
            for k in 0..4 {
                let range = self.params.range(COORD + k);
                let mut used = std::collections::BTreeSet::new();
                used.insert(self.buckets);
                for inp in inputs {
                    used.insert(inp.buckets[k]);
                }
                for r in used {
                    idx.extend(range.start + r * self.dim..range.start + (r + 1) * self.dim);
                }
            }
        }
        idx
    }

    pub fn encode_input(&self, input: &PairInput) -> Representation {
        let trace = self.forward(&[input]);
        Representation(trace.hidden.row(0).to_vec())
    }

    pub fn encode_pair(&self, phrase: &str, element: &UIElement) -> Result<Representation, EncoderError> {
        Ok(self.encode_input(&self.prepare(phrase, element)?))
    }

    pub fn score(&self, repr: &Representation) -> Result<Score, EncoderError> {
        if repr.dim() != self.dim {
            return Err(EncoderError::DimensionMismatch {
                expected: self.dim,
                got: repr.dim(),
            });
        }
        let h = Array1::from(repr.0.clone());
        let mut logits = h.dot(&self.params.mat(W2));
        logits += &self.params.vec(B2);
        Ok(Score::from_logits([logits[0], logits[1]]))
    }

    /// Scores for every element of the screen, in element order.
    pub fn screen_scores(&self, screen: &Screen, phrase: &str) -> Result<Vec<Score>, EncoderError> {
        if screen.elements.is_empty() {
            return Err(EncoderError::EmptyScreen(screen.id.clone()));
        }
        let inputs = screen
            .elements
            .iter()
            .map(|e| self.prepare(phrase, e))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&PairInput> = inputs.iter().collect();
        let trace = self.forward(&refs);
        Ok(trace
            .logits
            .rows()
            .into_iter()
            .map(|r| Score::from_logits([r[0], r[1]]))
            .collect())
    }

    /// The element with the highest relevance score; ties go to the element
    /// listed first.
    pub fn ground<'s>(&self, screen: &'s Screen, phrase: &str) -> Result<&'s UIElement, EncoderError> {
        let scores = self.screen_scores(screen, phrase)?;
        let best = argmax(scores.iter().map(|s| s.relevance));
        Ok(&screen.elements[best])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }
}
