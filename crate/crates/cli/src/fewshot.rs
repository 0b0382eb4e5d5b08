//! Few-shot head training and evaluation on embedding files.

use std::collections::BTreeMap;

use anyhow::Result;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spikekit::align::{evaluate_topk, finetune_head, AlignmentHead, FinetuneConfig, TextEmbedder};

use crate::embeddings::{label_indices, matrix, EmbeddingRecord};
use crate::exit::precondition;
use crate::synth::ClassEntry;

/// Everything needed to reuse a trained head: the head, the text embedder
/// settings and the class prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFile {
    pub classes: Vec<ClassEntry>,
    pub text_seed: u64,
    pub shots: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub support_ids: Vec<String>,
    pub loss_trace: Vec<f64>,
    pub head: AlignmentHead,
}

impl HeadFile {
    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Projected text embeddings of the class prompts, `[C, D]`.
    pub fn class_text(&self) -> Result<Array2<f64>> {
        let embedder = TextEmbedder::new(self.head.in_dim(), self.text_seed)?;
        let prompts: Vec<String> = self.classes.iter().map(|c| c.prompt.clone()).collect();
        Ok(self.head.project(embedder.bags(&prompts)?.view())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub shots: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub text_seed: u64,
}

/// Picks `shots` records per class: records of each class in file order,
/// shuffled by a generator seeded with `seed`, first `shots` kept.
pub fn select_support<'a>(
    pool: &'a [EmbeddingRecord],
    classes: &[String],
    shots: usize,
    seed: u64,
) -> Result<Vec<&'a EmbeddingRecord>> {
    if shots == 0 {
        return precondition("shots must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in classes {
        let mut members: Vec<&EmbeddingRecord> = pool.iter().filter(|r| r.label.as_deref() == Some(c)).collect();
        if members.len() < shots {
            return precondition(format!(
                "class `{c}` has {} support embeddings, {shots} shots requested",
                members.len()
            ));
        }
        members.shuffle(&mut rng);
        out.extend(members.into_iter().take(shots));
    }
    Ok(out)
}

pub fn train_head(pool: &[EmbeddingRecord], classes: &[ClassEntry], s: &TrainSettings) -> Result<HeadFile> {
    let names: Vec<String> = classes.iter().map(|c| c.name.clone()).collect();
    let support = select_support(pool, &names, s.shots, s.seed)?;
    let labels = label_indices(&support, &names)?;
    let x = matrix(&support);
    let dim = x.ncols();
    let embedder = TextEmbedder::new(dim, s.text_seed)?;
    let prompts: Vec<String> = classes.iter().map(|c| c.prompt.clone()).collect();
    let text = embedder.bags(&prompts)?;
    let cfg = FinetuneConfig {
        epochs: s.epochs,
        lr: s.lr,
        seed: s.seed,
    };
    let r = finetune_head(x.view(), &labels, text.view(), AlignmentHead::identity(dim), &cfg)?;
    Ok(HeadFile {
        classes: classes.to_vec(),
        text_seed: s.text_seed,
        shots: s.shots,
        seed: s.seed,
        epochs: s.epochs,
        lr: s.lr,
        support_ids: support.iter().map(|r| r.id.clone()).collect(),
        loss_trace: r.loss_trace,
        head: r.head,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub classes: usize,
    /// Accuracy keyed `top1`, `top5`, ...
    pub accuracy: BTreeMap<String, f64>,
}

pub fn evaluate(head: &HeadFile, records: &[EmbeddingRecord], ks: &[usize]) -> Result<EvalMetrics> {
    let classes = head.classes.len();
    if ks.is_empty() {
        return precondition("no k values requested");
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > classes) {
        return precondition(format!("top-{k} requested but there are {classes} classes"));
    }
    let refs: Vec<&EmbeddingRecord> = records.iter().collect();
    let labels = label_indices(&refs, &head.class_names())?;
    let v = head.head.project(matrix(&refs).view())?;
    let t = head.class_text()?;
    let mut accuracy = BTreeMap::new();
    for &k in ks {
        accuracy.insert(format!("top{k}"), evaluate_topk(v.view(), t.view(), &labels, k)?);
    }
    Ok(EvalMetrics {
        n: records.len(),
        classes,
        accuracy,
    })
}
