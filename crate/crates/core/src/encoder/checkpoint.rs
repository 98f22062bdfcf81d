//! JSON checkpoints: model kind, shapes, seed, vocabulary and every
//! parameter tensor as row-major `f32`.

use super::model::{ModelKind, ScorerModel};
use super::vocab::Vocab;
use crate::io::{read_to_string, write_atomic, IoError};
use crate::nn::{FlatParams, Segment};
use serde::{Deserialize, Serialize};
use std::path::Path;

const FORMAT: &str = "uiground-scorer";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    kind: ModelKind,
    dim: usize,
    buckets: usize,
    seed: u64,
    vocab: Vocab,
    tensors: Vec<Tensor>,
}

impl ScorerModel {
    /// Parameters are written as `f32`. Models produced by `new` and `train`
    /// are already `f32`-exact, so loading them back gives identical scores.
    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let ckpt = Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.kind,
            dim: self.dim,
            buckets: self.buckets,
            seed: self.seed,
            vocab: self.vocab.clone(),
            tensors: self
                .params
                .segments
                .iter()
                .enumerate()
                .map(|(i, s)| Tensor {
                    name: s.name.clone(),
                    shape: [s.rows, s.cols],
                    data: self.params.data[self.params.range(i)].iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        };
        write_atomic(path, |w| {
            serde_json::to_writer(&mut *w, &ckpt)?;
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| IoError::schema(path, e.to_string()))?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(IoError::schema(
                path,
                format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version),
            ));
        }
        // Rebuild the expected layout and check the file against it.
        let expected = ScorerModel::new(ckpt.kind, ckpt.vocab.clone(), ckpt.dim, ckpt.buckets, 0);
        let layout: Vec<&Segment> = expected.params.segments.iter().collect();
        if layout.len() != ckpt.tensors.len() {
            return Err(IoError::schema(path, "tensor count does not match model kind"));
        }
        let mut data = Vec::with_capacity(expected.params.len());
        for (seg, t) in layout.iter().zip(&ckpt.tensors) {
            if seg.name != t.name || [seg.rows, seg.cols] != t.shape || t.data.len() != seg.len() {
                return Err(IoError::schema(
                    path,
                    format!("tensor {:?} has shape {:?}, expected {:?} {:?}", t.name, t.shape, seg.name, [seg.rows, seg.cols]),
                ));
            }
            data.extend(t.data.iter().map(|&v| v as f64));
        }
        let params = FlatParams {
            segments: expected.params.segments.clone(),
            data,
        };
        if !params.all_finite() {
            return Err(IoError::schema(path, "non-finite parameter"));
        }
        Ok(ScorerModel {
            kind: ckpt.kind,
            dim: ckpt.dim,
            buckets: ckpt.buckets,
            seed: ckpt.seed,
            vocab: ckpt.vocab,
            params,
        })
    }
}
