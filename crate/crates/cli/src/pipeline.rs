//! Stage functions shared by the individual commands and `run`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spikekit::camera::{encode_video, upsample_temporal};
use spikekit::energy::{energy_report, EnergyLedger, EnergyReport};
use spikekit::snn::{fsve_forward_traced, is_binary};
use spikekit::stream::{meta_sidecar_path, read_dat, read_meta, write_dat_with_meta};
use spikekit::{SpikeStream, StreamMeta};

use crate::config::{EncodeConfig, PipelineConfig};
use crate::embeddings::{write_embeddings, EmbeddingRecord};
use crate::exit::precondition;
use crate::fewshot::{evaluate, train_head, EvalMetrics, TrainSettings};
use crate::frames::read_video;
use crate::model::{FeatureModel, FeatureModelConfig, SpikingModel};
use crate::provenance::{read_json, write_json, Provenance};
use crate::synth::{clip_dir, synth_dataset, DatasetIndex, SyntheticDatasetSpec};

/// Reads a frame directory, upsamples it in time and encodes it.
pub fn encode_clip(dir: &Path, enc: &EncodeConfig, seed: u64) -> Result<(SpikeStream, StreamMeta)> {
    let mut video = read_video(dir)?;
    if enc.upsample > 1 {
        video = upsample_temporal(&video, enc.upsample)?;
    }
    let stream = encode_video(&video, &enc.encoder(), seed)?;
    let meta = stream.meta(enc.theta);
    Ok((stream, meta))
}

/// Reads a `.dat` file using `meta`, or the sidecar beside it.
pub fn load_stream(dat: &Path, meta: Option<&Path>) -> Result<SpikeStream> {
    let meta_path = meta.map(Path::to_path_buf).unwrap_or_else(|| meta_sidecar_path(dat));
    if !meta_path.exists() {
        return precondition(format!(
            "no metadata for {}: expected {} (or pass --meta)",
            dat.display(),
            meta_path.display()
        ));
    }
    let m = read_meta(&meta_path)?;
    Ok(read_dat(dat, &m)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Support,
    Test,
}

/// One line of `streams.json`, the index written by the encode stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub id: String,
    pub label: String,
    pub split: Split,
    /// `.dat` file name, relative to the index.
    pub file: String,
}

pub const STREAM_INDEX: &str = "streams.json";

/// A stream to embed: id, optional label and `.dat` path.
#[derive(Debug, Clone)]
pub struct StreamInput {
    pub id: String,
    pub label: Option<String>,
    pub path: PathBuf,
}

/// Embeds every input, in input order.
pub fn featurize(model: &FeatureModel, inputs: &[StreamInput], meta: Option<&Path>) -> Result<Vec<EmbeddingRecord>> {
    inputs
        .par_iter()
        .map(|inp| {
            let stream = load_stream(&inp.path, meta)?;
            let vector = model
                .embed(&stream)
                .with_context(|| format!("embedding {}", inp.path.display()))?;
            Ok(EmbeddingRecord {
                id: inp.id.clone(),
                label: inp.label.clone(),
                vector,
            })
        })
        .collect()
}

/// Runs the spiking encoder over every input and returns the merged
/// ledger. Fails with an invariant error if any spike tensor is not binary.
pub fn snn_forward(model: &SpikingModel, inputs: &[StreamInput], meta: Option<&Path>) -> Result<EnergyLedger> {
    let ledgers: Vec<EnergyLedger> = inputs
        .par_iter()
        .map(|inp| {
            let stream = load_stream(&inp.path, meta)?;
            let mut ledger = EnergyLedger::new();
            let mut bad: Option<String> = None;
            fsve_forward_traced(&stream, &model.config, &model.weights, &mut ledger, &mut |name, t| {
                if bad.is_none() && !is_binary(t.iter()) {
                    bad = Some(name.to_string());
                }
            })?;
            if let Some(name) = bad {
                return Err(spikekit::Error::Invariant(format!(
                    "tensor `{name}` of {} is not binary",
                    inp.id
                ))
                .into());
            }
            Ok(ledger)
        })
        .collect::<Result<_>>()?;
    Ok(ledgers.iter().fold(EnergyLedger::new(), |acc, l| acc.merge(l)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub shots: usize,
    pub seed: u64,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    pub shots: usize,
    /// Accuracy averaged over seeds, keyed like [`EvalMetrics::accuracy`].
    pub mean: std::collections::BTreeMap<String, f64>,
}

/// `metrics.json` of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub classes: usize,
    pub support_per_class: usize,
    pub test_per_class: usize,
    pub runs: Vec<RunMetrics>,
    pub summary: Vec<ShotSummary>,
}

impl PipelineMetrics {
    pub fn mean(&self, shots: usize, key: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.shots == shots)
            .and_then(|s| s.mean.get(key).copied())
    }
}

pub struct PipelineOutput {
    pub metrics: PipelineMetrics,
    pub energy: EnergyReport,
}

fn summarize(runs: &[RunMetrics], shots: &[usize]) -> Vec<ShotSummary> {
    shots
        .iter()
        .map(|&s| {
            let group: Vec<&RunMetrics> = runs.iter().filter(|r| r.shots == s).collect();
            let mut mean = std::collections::BTreeMap::new();
            for key in group[0].metrics.accuracy.keys() {
                let total: f64 = group.iter().map(|r| r.metrics.accuracy[key]).sum();
                mean.insert(key.clone(), total / group.len() as f64);
            }
            ShotSummary { shots: s, mean }
        })
        .collect()
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Synthesizes a dataset, encodes it, embeds every clip, trains and
/// evaluates few-shot heads, and measures the spiking encoder's energy.
/// Every artifact under `out` gets a provenance sidecar.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    let Some(seed) = cfg.seed else {
        return precondition("the pipeline needs a seed: pass --seed or set `seed` in the config");
    };
    let d = &cfg.dataset;

    eprintln!("[1/5] synthesizing dataset");
    let data_root = out.join("dataset");
    let spec = SyntheticDatasetSpec {
        classes: d.classes.clone(),
        clips_per_class: d.support_per_class + d.test_per_class,
        frames: d.frames,
        size: d.size,
        seed,
    };
    let index: DatasetIndex = synth_dataset(&spec, &data_root)?;
    Provenance::new("synth", Some(seed), to_value(&spec)?).write_for(&data_root.join(crate::synth::INDEX_FILE))?;

    eprintln!("[2/5] encoding {} clips", index.clips.len());
    let stream_root = out.join("streams");
    std::fs::create_dir_all(&stream_root).with_context(|| format!("creating {}", stream_root.display()))?;
    let per_class = spec.clips_per_class;
    let entries: Vec<StreamEntry> = index
        .clips
        .par_iter()
        .enumerate()
        .map(|(i, clip)| {
            let dir = clip_dir(&data_root, clip);
            let clip_seed = seed.wrapping_add(i as u64);
            let (stream, meta) = encode_clip(&dir, &cfg.encode, clip_seed)?;
            let file = format!("{}.dat", clip.id);
            let dat = stream_root.join(&file);
            write_dat_with_meta(&stream, &meta, &dat)?;
            Provenance::new("encode", Some(clip_seed), to_value(&cfg.encode)?)
                .input(&dir)?
                .write_for(&dat)?;
            let split = if i % per_class < d.support_per_class {
                Split::Support
            } else {
                Split::Test
            };
            Ok(StreamEntry {
                id: clip.id.clone(),
                label: clip.label.clone(),
                split,
                file,
            })
        })
        .collect::<Result<_>>()?;
    write_json(&stream_root.join(STREAM_INDEX), &entries)?;

    eprintln!("[3/5] embedding clips");
    let weights_dir = out.join("weights");
    let model_cfg = FeatureModelConfig::for_input(cfg.hsfe, &cfg.star, d.size, d.size);
    let model = FeatureModel::load_or_init(&weights_dir, model_cfg, Some(cfg.weights_seed))?;
    Provenance::new("init-weights", Some(cfg.weights_seed), to_value(&model.config)?).write_for(&weights_dir)?;
    let inputs_of = |split: Split| -> Vec<StreamInput> {
        entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| StreamInput {
                id: e.id.clone(),
                label: Some(e.label.clone()),
                path: stream_root.join(&e.file),
            })
            .collect()
    };
    let (support_in, test_in) = (inputs_of(Split::Support), inputs_of(Split::Test));
    let support = featurize(&model, &support_in, None)?;
    let test = featurize(&model, &test_in, None)?;
    for (name, records, inputs) in [
        ("embeddings_support.json", &support, &support_in),
        ("embeddings_test.json", &test, &test_in),
    ] {
        let path = out.join(name);
        write_embeddings(&path, records)?;
        Provenance::new("featurize", Some(cfg.weights_seed), to_value(&model.config)?)
            .input(&weights_dir)?
            .inputs(inputs.iter().map(|i| i.path.as_path()))?
            .write_for(&path)?;
    }

    eprintln!("[4/5] few-shot training and evaluation");
    let fs = &cfg.fewshot;
    let heads_dir = out.join("heads");
    let mut runs = Vec::new();
    for &shots in &fs.shots {
        for &s in &fs.seeds {
            let settings = TrainSettings {
                shots,
                seed: s,
                epochs: fs.epochs,
                lr: fs.lr,
                text_seed: fs.text_seed,
            };
            let head = train_head(&support, &index.classes, &settings)?;
            let head_path = heads_dir.join(format!("head_{shots}shot_seed{s}.json"));
            write_json(&head_path, &head)?;
            Provenance::new("train-head", Some(s), to_value(&settings)?)
                .input(&out.join("embeddings_support.json"))?
                .input(&data_root.join(crate::synth::PROMPTS_FILE))?
                .write_for(&head_path)?;
            let metrics = evaluate(&head, &test, &fs.topk)?;
            runs.push(RunMetrics { shots, seed: s, metrics });
        }
    }
    let metrics = PipelineMetrics {
        classes: d.classes.len(),
        support_per_class: d.support_per_class,
        test_per_class: d.test_per_class,
        summary: summarize(&runs, &fs.shots),
        runs,
    };
    let metrics_path = out.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    Provenance::new("eval", Some(seed), to_value(fs)?)
        .input(&heads_dir)?
        .input(&out.join("embeddings_test.json"))?
        .write_for(&metrics_path)?;

    eprintln!("[5/5] spiking encoder energy");
    let snn_dir = out.join("snn_weights");
    let snn = SpikingModel::load_or_init(&snn_dir, cfg.snn.fsve.clone(), Some(cfg.snn_weights_seed))?;
    Provenance::new("init-weights", Some(cfg.snn_weights_seed), to_value(&snn.config)?).write_for(&snn_dir)?;
    let snn_inputs: Vec<StreamInput> = entries
        .iter()
        .take(cfg.snn.clips)
        .map(|e| StreamInput {
            id: e.id.clone(),
            label: None,
            path: stream_root.join(&e.file),
        })
        .collect();
    let ledger = snn_forward(&snn, &snn_inputs, None)?;
    let ledger_path = out.join("ledger.json");
    write_json(&ledger_path, &ledger)?;
    Provenance::new("snn-forward", Some(cfg.snn_weights_seed), to_value(&snn.config)?)
        .input(&snn_dir)?
        .inputs(snn_inputs.iter().map(|i| i.path.as_path()))?
        .write_for(&ledger_path)?;
    let energy = energy_report(&ledger, &ledger)?;
    let energy_path = out.join("energy.json");
    write_json(&energy_path, &energy)?;
    Provenance::new("energy", None, serde_json::Value::Null)
        .input(&ledger_path)?
        .write_for(&energy_path)?;

    Ok(PipelineOutput { metrics, energy })
}

/// Reads `streams.json` and resolves each entry's path.
pub fn read_stream_index(path: &Path) -> Result<Vec<(StreamEntry, PathBuf)>> {
    let entries: Vec<StreamEntry> = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(entries
        .into_iter()
        .map(|e| {
            let p = base.join(&e.file);
            (e, p)
        })
        .collect())
}
