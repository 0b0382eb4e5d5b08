//! Weight archives: one little-endian `f32` blob per tensor plus a JSON
//! manifest.
//!
//! ```text
//! weights/
//!   manifest.json          {"seed": 7, "config": {...}, "tensors": [{"name", "dtype": "f32", "shape"}]}
//!   hsfe.branch0.mask.bin
//!   star.stem.conv0.w.bin
//!   ...
//! ```
//!
//! Tensors are held as `f64` in memory. Generated weights are rounded to
//! `f32` at creation so that saving and reloading is lossless.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    config: Option<serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

/// Named tensors with optional provenance (generation seed, model config).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    tensors: BTreeMap<String, ArrayD<f64>>,
}

impl WeightArchive {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            seed,
            config: None,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f64>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Fetches `name`, checking its shape.
    pub fn get(&self, name: &str, shape: &[usize]) -> Result<ArrayD<f64>> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        if t.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "weight `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t.clone())
    }

    pub fn get1(&self, name: &str, n: usize) -> Result<Array1<f64>> {
        Ok(self.get(name, &[n])?.into_dimensionality().expect("checked shape"))
    }

    pub fn get2(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        Ok(self
            .get(name, &[rows, cols])?
            .into_dimensionality()
            .expect("checked shape"))
    }

    pub fn get4(&self, name: &str, shape: [usize; 4]) -> Result<Array4<f64>> {
        Ok(self.get(name, &shape)?.into_dimensionality().expect("checked shape"))
    }

    /// Merges `other` into `self`; entries in `other` win.
    pub fn extend(&mut self, other: WeightArchive) {
        self.tensors.extend(other.tensors);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let mut blob = Vec::with_capacity(t.len() * 4);
            for &v in t.iter() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
            let path = dir.join(format!("{name}.bin"));
            fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
            });
        }
        let manifest = Manifest {
            seed: self.seed,
            config: self.config.clone(),
            tensors: entries,
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut archive = WeightArchive {
            seed: manifest.seed,
            config: manifest.config,
            tensors: BTreeMap::new(),
        };
        for entry in manifest.tensors {
            if entry.dtype != "f32" {
                return Err(Error::InvalidArgument(format!(
                    "weight `{}` has unsupported dtype {}",
                    entry.name, entry.dtype
                )));
            }
            let path = dir.join(format!("{}.bin", entry.name));
            let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let n: usize = entry.shape.iter().product();
            if blob.len() != n * 4 {
                return Err(Error::LengthMismatch {
                    expected: n * 4,
                    found: blob.len(),
                });
            }
            let values: Vec<f64> = blob
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            archive.tensors.insert(entry.name, t);
        }
        Ok(archive)
    }
}

/// Seeded initializer producing `f32`-representable values.
pub struct WeightInit {
    rng: ChaCha8Rng,
}

impl WeightInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| {
            (self.rng.random_range(-bound..=bound) as f32) as f64
        })
    }

    /// Uniform with bound `sqrt(6 / fan_in)` (He-uniform).
    pub fn he(&mut self, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
        self.uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt())
    }

    /// He-uniform shifted onto `[0, 2 * sqrt(6 / fan_in)]`, so each filter
    /// accumulates its inputs instead of differencing them.
    pub fn he_nonnegative(&mut self, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        self.uniform(shape, bound).mapv(|w| ((w + bound) as f32) as f64)
    }

    /// Uniform with bound `1 / sqrt(fan_in)`.
    pub fn lecun(&mut self, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
        self.uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt())
    }
}
