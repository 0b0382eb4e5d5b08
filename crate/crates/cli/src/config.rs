//! Pipeline configuration, read from JSON.

use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use spikekit::camera::EncoderConfig;
use spikekit::hsfe::HsfeConfig;
use spikekit::snn::FsveConfig;
use spikekit::star_net::MiniMapResNetConfig;

use crate::exit::precondition;
use crate::provenance::read_json;
use crate::synth::Archetype;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: Vec<Archetype>,
    /// Clips per class available as few-shot support.
    pub support_per_class: usize,
    /// Held-out clips per class.
    pub test_per_class: usize,
    /// Rendered keyframes per clip, before temporal upsampling.
    pub frames: usize,
    pub size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: Archetype::ALL.to_vec(),
            support_per_class: 12,
            test_per_class: 12,
            frames: 26,
            size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeConfig {
    pub theta: f64,
    pub noise: f64,
    /// Temporal upsampling factor applied before encoding.
    pub upsample: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            theta: 5.0,
            noise: 0.0,
            upsample: 10,
        }
    }
}

impl EncodeConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            theta: self.theta,
            noise_amplitude: self.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub lr: f64,
    pub text_seed: u64,
    pub topk: Vec<usize>,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            shots: vec![2, 4, 6, 8],
            seeds: (0..5).collect(),
            epochs: 200,
            lr: 0.05,
            text_seed: 7,
            topk: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnnStageConfig {
    /// Streams (in index order) passed through the spiking encoder.
    pub clips: usize,
    pub fsve: FsveConfig,
}

impl Default for SnnStageConfig {
    fn default() -> Self {
        Self {
            clips: 4,
            fsve: FsveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset and encoder-noise seed. `--seed` overrides it; one of the
    /// two must be given.
    pub seed: Option<u64>,
    /// Output directory; `--out` overrides it.
    pub out: Option<String>,
    pub weights_seed: u64,
    pub snn_weights_seed: u64,
    pub dataset: DatasetConfig,
    pub encode: EncodeConfig,
    pub hsfe: HsfeConfig,
    pub star: MiniMapResNetConfig,
    pub fewshot: FewShotConfig,
    pub snn: SnnStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            weights_seed: 1,
            snn_weights_seed: 2,
            dataset: DatasetConfig::default(),
            encode: EncodeConfig::default(),
            hsfe: HsfeConfig::default(),
            star: MiniMapResNetConfig::default(),
            fewshot: FewShotConfig::default(),
            snn: SnnStageConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.support_per_class == 0 || d.test_per_class == 0 {
            return precondition("support_per_class and test_per_class must be positive");
        }
        if self.encode.upsample == 0 {
            return precondition("upsample must be at least 1");
        }
        let f = &self.fewshot;
        if f.shots.is_empty() || f.seeds.is_empty() {
            return precondition("fewshot.shots and fewshot.seeds must be non-empty");
        }
        if let Some(&s) = f.shots.iter().find(|&&s| s == 0 || s > d.support_per_class) {
            return precondition(format!(
                "{s} shots requested with {} support clips per class",
                d.support_per_class
            ));
        }
        if let Some(&k) = f.topk.iter().find(|&&k| k == 0 || k > d.classes.len()) {
            return precondition(format!("top-{k} requested but there are {} classes", d.classes.len()));
        }
        let t_len = (d.frames.saturating_sub(1)) * self.encode.upsample + 1;
        let need = self.hsfe.blocks.required_len();
        if t_len < need {
            return precondition(format!(
                "clips span {t_len} steps after upsampling; the extractor needs {need}"
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 3, "fewshot": {"epochs": 5}}"#).unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.fewshot.epochs, 5);
        assert_eq!(c.fewshot.shots, vec![2, 4, 6, 8]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn too_many_shots_rejected() {
        let mut c = PipelineConfig::default();
        c.fewshot.shots = vec![13];
        assert!(c.validate().is_err());
    }
}
