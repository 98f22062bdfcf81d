//! Representation files: one CSV row per (command, element) pair with the
//! geometry needed to derive spatial labels.
//!
//! Header: `command_id,element_id,target_id,x0,x1,y0,y1,tx0,tx1,ty0,ty1,v0,...`
//! where `x*`/`y*` is the element box, `t*` the command target's box (both on
//! the normalized grid) and `v*` the vector. Floats are written in shortest
//! round-trip form, so reading a file back reproduces the vectors exactly.

use super::model::ScorerModel;
use super::EncoderError;
use crate::corpus::Corpus;
use crate::datagen::Split;
use crate::geometry::BoundingBox;
use crate::io::{fmt_f64, write_atomic, IoError};
use std::path::Path;

pub const GEOMETRY_COLUMNS: [&str; 11] = [
    "command_id", "element_id", "target_id", "x0", "x1", "y0", "y1", "tx0", "tx1", "ty0", "ty1",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationRecord {
    pub command_id: String,
    pub element_id: String,
    pub target_id: String,
    pub bbox: BoundingBox,
    pub target_bbox: BoundingBox,
    pub vector: Vec<f64>,
}

impl RepresentationRecord {
    pub fn is_target(&self) -> bool {
        self.element_id == self.target_id
    }
}

/// Encodes every pair of the chosen splits (all splits when `splits` is
/// empty), in corpus pair order.
pub fn representations(
    model: &ScorerModel,
    corpus: &Corpus,
    splits: &[Split],
) -> Result<Vec<RepresentationRecord>, EncoderError> {
    let mut out = Vec::new();
    let chosen: Vec<_> = corpus
        .pairs
        .iter()
        .filter(|p| splits.is_empty() || splits.contains(&p.split))
        .collect();
    for chunk in chosen.chunks(512) {
        let mut inputs = Vec::with_capacity(chunk.len());
        let mut meta = Vec::with_capacity(chunk.len());
        for p in chunk {
            let cmd = corpus
                .command(&p.command_id)
                .ok_or_else(|| EncoderError::Unresolved(format!("command {}", p.command_id)))?;
            let screen = corpus.screen_of(cmd);
            let el = screen
                .element(&p.element_id)
                .ok_or_else(|| EncoderError::Unresolved(format!("element {}", p.element_id)))?;
            let target = screen.element(&cmd.target_id).expect("validated corpus");
            inputs.push(model.prepare(&cmd.phrase, el)?);
            meta.push((cmd, el, target));
        }
        let refs: Vec<_> = inputs.iter().collect();
        let trace = model.forward(&refs);
        for ((cmd, el, target), row) in meta.into_iter().zip(trace.hidden.rows()) {
            out.push(RepresentationRecord {
                command_id: cmd.id.clone(),
                element_id: el.id.clone(),
                target_id: target.id.clone(),
                bbox: el.bbox,
                target_bbox: target.bbox,
                vector: row.to_vec(),
            });
        }
    }
    Ok(out)
}

pub fn write_representations(path: &Path, records: &[RepresentationRecord]) -> Result<(), IoError> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let header: Vec<String> = GEOMETRY_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain((0..dim).map(|i| format!("v{i}")))
            .collect();
        wtr.write_record(&header)?;
        for r in records {
            let mut row: Vec<String> = vec![r.command_id.clone(), r.element_id.clone(), r.target_id.clone()];
            row.extend(r.bbox.coords().iter().map(|c| c.to_string()));
            row.extend(r.target_bbox.coords().iter().map(|c| c.to_string()));
            row.extend(r.vector.iter().map(|v| fmt_f64(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()
    })
}

/// Encodes a corpus and writes the representation file.
pub fn export_representations(
    model: &ScorerModel,
    corpus: &Corpus,
    splits: &[Split],
    path: &Path,
) -> Result<usize, EncoderError> {
    let records = representations(model, corpus, splits)?;
    write_representations(path, &records)?;
    Ok(records.len())
}
