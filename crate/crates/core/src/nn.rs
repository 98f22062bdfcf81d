//! Small from-scratch building blocks: a flat parameter store with named
//! matrix views, a ReLU feed-forward classifier, the Adam update and a
//! central-difference gradient check.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable values in one contiguous buffer, addressed as named
/// row-major matrices. Vectors are stored as `1 x n` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatParams {
    pub segments: Vec<Segment>,
    pub data: Vec<f64>,
}

impl FlatParams {
    pub fn new(shapes: &[(&str, usize, usize)]) -> Self {
        let mut segments = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for &(name, rows, cols) in shapes {
            segments.push(Segment {
                name: name.to_string(),
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        FlatParams {
            segments,
            data: vec![0.0; offset],
        }
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        FlatParams {
            segments: self.segments.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        let s = &self.segments[i];
        s.offset..s.offset + s.len()
    }

    pub fn mat(&self, i: usize) -> ArrayView2<'_, f64> {
        let s = &self.segments[i];
        ArrayView2::from_shape((s.rows, s.cols), &self.data[self.range(i)]).expect("segment shape")
    }

    pub fn mat_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let s = self.segments[i].clone();
        let r = self.range(i);
        ArrayViewMut2::from_shape((s.rows, s.cols), &mut self.data[r]).expect("segment shape")
    }

    pub fn vec(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[self.range(i)])
    }

    pub fn vec_mut(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        let r = self.range(i);
        ArrayViewMut1::from(&mut self.data[r])
    }

    pub fn fill_normal(&mut self, i: usize, std: f64, rng: &mut impl Rng) {
        let r = self.range(i);
        if std == 0.0 {
            self.data[r].iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut self.data[r] {
            *v = normal.sample(rng);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

/// Numerically stable log-softmax of each row.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = labels.len();
    let logp = log_softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = logp.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        loss -= logp[[i, y]];
        grad[[i, y]] -= 1.0;
    }
    grad /= n as f64;
    (loss / n as f64, grad)
}

pub fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// Feed-forward classifier: `in -> [hidden ReLU]* -> classes`.
///
/// Segments alternate weight (`in x out`) and bias (`1 x out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: FlatParams,
}

/// Cached activations from [`Mlp::forward`]; `acts[0]` is the input.
pub struct MlpTrace {
    pub acts: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl Mlp {
    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let names: Vec<(String, usize, usize)> = sizes
            .windows(2)
            .enumerate()
            .flat_map(|(l, w)| [(format!("w{l}"), w[0], w[1]), (format!("b{l}"), 1, w[1])])
            .collect();
        let shapes: Vec<(&str, usize, usize)> =
            names.iter().map(|(n, r, c)| (n.as_str(), *r, *c)).collect();
        let mut params = FlatParams::new(&shapes);
        for l in 0..sizes.len() - 1 {
            // He init for ReLU layers, Xavier-like for the output layer.
            let fan_in = sizes[l] as f64;
            let std = if l + 2 < sizes.len() {
                (2.0 / fan_in).sqrt()
            } else {
                (1.0 / fan_in).sqrt()
            };
            params.fill_normal(2 * l, std, rng);
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> MlpTrace {
        let mut acts = vec![x.to_owned()];
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let mut z = acts[l].dot(&self.params.mat(2 * l));
            z += &self.params.vec(2 * l + 1);
            if l == last {
                return MlpTrace { acts, logits: z };
            }
            relu_inplace(&mut z);
            acts.push(z);
        }
        unreachable!()
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(x).logits
    }

    /// Mean cross-entropy over the batch and its gradient (flat layout).
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> (f64, Vec<f64>) {
        let trace = self.forward(x);
        let (loss, mut delta) = cross_entropy(&trace.logits, labels);
        let mut grad = self.params.zeros_like();
        for l in (0..self.layers()).rev() {
            let a = &trace.acts[l];
            grad.mat_mut(2 * l).assign(&a.t().dot(&delta));
            grad.vec_mut(2 * l + 1).assign(&delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.params.mat(2 * l).t());
                back.zip_mut_with(a, |d, &act| {
                    if act <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        (loss, grad.data)
    }

    pub fn loss(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        let logits = self.logits(x);
        let logp = log_softmax_rows(&logits);
        -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| logp[[i, y]])
            .sum::<f64>()
            / labels.len() as f64
    }

    /// Mean cross-entropy and accuracy, evaluated in chunks.
    pub fn evaluate(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> (f64, f64) {
        let mut ce = 0.0;
        let mut correct = 0usize;
        let n = labels.len();
        for start in (0..n).step_by(1024) {
            let end = (start + 1024).min(n);
            let logits = self.logits(x.slice(s![start..end, ..]));
            let logp = log_softmax_rows(&logits);
            for (r, &y) in labels[start..end].iter().enumerate() {
                ce -= logp[[r, y]];
                let row = logp.row(r);
                let pred = argmax(row.iter().copied());
                correct += (pred == y) as usize;
            }
        }
        (ce / n as f64, correct as f64 / n as f64)
    }
}

/// Index of the first maximum.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// `max |a - f| / max(1e-8, |a| + |f|)` over the compared entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / (a.abs() + f.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central differences of `loss` at the chosen flat indices of `params`.
pub fn numeric_gradient(
    params: &mut [f64],
    indices: &[usize],
    epsilon: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let orig = params[i];
            params[i] = orig + epsilon;
            let up = loss(params);
            params[i] = orig - epsilon;
            let down = loss(params);
            params[i] = orig;
            (up - down) / (2.0 * epsilon)
        })
        .collect()
}

/// Converts a list of row vectors into a matrix.
pub fn stack_rows(rows: &[&[f64]]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&ArrayView1::from(*r));
    }
    out
}

pub fn row_vector(v: &[f64]) -> Array1<f64> {
    Array1::from(v.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_param_counts() {
        assert_eq!(Mlp::param_count_for(&[64, 2]), 130);
        assert_eq!(Mlp::param_count_for(&[64, 10, 2]), 64 * 10 + 10 + 22);
        let m = Mlp::new(&[5, 3, 4, 2], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(m.params.len(), Mlp::param_count_for(&[5, 3, 4, 2]));
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sizes in [vec![6, 2], vec![6, 5, 2], vec![6, 4, 3, 2]] {
            let mut mlp = Mlp::new(&sizes, &mut rng);
            for b in mlp.params.segments.clone().iter().enumerate().filter(|(i, _)| i % 2 == 1) {
                mlp.params.fill_normal(b.0, 0.3, &mut rng);
            }
            let x = Array2::from_shape_fn((9, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
            let labels: Vec<usize> = (0..9).map(|i| i % 2).collect();
            let (_, analytic) = mlp.loss_and_grad(x.view(), &labels);
            let idx: Vec<usize> = (0..mlp.params.len()).collect();
            let mut data = mlp.params.data.clone();
            let segs = mlp.params.segments.clone();
            let numeric = numeric_gradient(&mut data, &idx, 1e-6, |p| {
                let m = Mlp {
                    sizes: sizes.clone(),
                    params: FlatParams {
                        segments: segs.clone(),
                        data: p.to_vec(),
                    },
                };
                m.loss(x.view(), &labels)
            });
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-5, "{sizes:?}: {err}");
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let logits = Array2::zeros((4, 2));
        let (loss, grad) = cross_entropy(&logits, &[0, 1, 1, 0]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad.sum()).abs() < 1e-12);
    }

    #[test]
    fn relative_error_metric() {
        assert_eq!(max_relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(max_relative_error(&[1.0], &[-1.0]), 1.0);
        assert_eq!(max_relative_error(&[2.0], &[1.0]), 1.0 / 3.0);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax([1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax([5.0]), 0);
    }
}
