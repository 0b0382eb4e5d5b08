//! Embedding files: JSON arrays of `{id, label, vector}`.

use std::path::Path;

use anyhow::Result;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::exit::precondition;
use crate::provenance::{read_json, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub label: Option<String>,
    pub vector: Vec<f64>,
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    write_json(path, records)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let records: Vec<EmbeddingRecord> = read_json(path)?;
    if records.is_empty() {
        return precondition(format!("{} holds no embeddings", path.display()));
    }
    let d = records[0].vector.len();
    if d == 0 || records.iter().any(|r| r.vector.len() != d) {
        return precondition(format!("{}: embeddings must share one non-zero width", path.display()));
    }
    if records.iter().flat_map(|r| &r.vector).any(|v| !v.is_finite()) {
        return precondition(format!("{}: non-finite embedding values", path.display()));
    }
    Ok(records)
}

/// Stacks vectors into `[N, D]`.
pub fn matrix(records: &[&EmbeddingRecord]) -> Array2<f64> {
    let d = records.first().map_or(0, |r| r.vector.len());
    Array2::from_shape_fn((records.len(), d), |(i, j)| records[i].vector[j])
}

/// Class index of every record's label; unlabeled or unknown labels fail.
pub fn label_indices(records: &[&EmbeddingRecord], classes: &[String]) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            let Some(label) = &r.label else {
                return precondition(format!("embedding `{}` has no label", r.id));
            };
            match classes.iter().position(|c| c == label) {
                Some(i) => Ok(i),
                None => precondition(format!("embedding `{}` has unknown label `{label}`", r.id)),
            }
        })
        .collect()
}
