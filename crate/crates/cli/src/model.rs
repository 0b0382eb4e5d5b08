//! Feature and spiking models backed by weight archives on disk.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use spikekit::hsfe::{hsfe_forward, HsfeConfig, HsfeWeights};
use spikekit::snn::{FsveConfig, FsveWeights};
use spikekit::star_net::{star_net_forward, MiniMapResNetConfig, StarNetWeights};
use spikekit::weights::{WeightArchive, MANIFEST_FILE};
use spikekit::SpikeStream;

use crate::exit::precondition;

/// Architecture of the clip embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModelConfig {
    pub hsfe: HsfeConfig,
    /// `in_channels` and `input_hw` are overwritten from the extractor and
    /// the stream size.
    pub star: MiniMapResNetConfig,
}

impl FeatureModelConfig {
    pub fn for_input(hsfe: HsfeConfig, star: &MiniMapResNetConfig, height: usize, width: usize) -> Self {
        let star = MiniMapResNetConfig {
            in_channels: hsfe.out_channels(),
            input_hw: (height, width),
            ..star.clone()
        };
        Self { hsfe, star }
    }
}

pub struct FeatureModel {
    pub config: FeatureModelConfig,
    pub seed: Option<u64>,
    hsfe: HsfeWeights,
    star: StarNetWeights,
}

impl FeatureModel {
    pub fn init(config: FeatureModelConfig, seed: u64) -> Result<Self> {
        config.star.validate()?;
        Ok(Self {
            hsfe: HsfeWeights::init(&config.hsfe, seed)?,
            star: StarNetWeights::init(&config.star, seed.wrapping_add(1))?,
            config,
            seed: Some(seed),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut a = WeightArchive::new(self.seed);
        a.config = Some(serde_json::to_value(&self.config)?);
        self.hsfe.to_archive(&mut a);
        self.star.to_archive(&mut a);
        a.save(dir).with_context(|| format!("saving weights to {}", dir.display()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let a = WeightArchive::load(dir).with_context(|| format!("loading weights from {}", dir.display()))?;
        let Some(cfg) = a.config.clone() else {
            return precondition(format!("{} records no model config", dir.display()));
        };
        let config: FeatureModelConfig =
            serde_json::from_value(cfg).with_context(|| format!("model config in {}", dir.display()))?;
        Ok(Self {
            hsfe: HsfeWeights::from_archive(&config.hsfe, &a)?,
            star: StarNetWeights::from_archive(&config.star, &a)?,
            seed: a.seed,
            config,
        })
    }

    /// Loads `dir` when it holds an archive, otherwise generates weights
    /// from `seed` and saves them there.
    pub fn load_or_init(dir: &Path, config: FeatureModelConfig, seed: Option<u64>) -> Result<Self> {
        if dir.join(MANIFEST_FILE).exists() {
            return Self::load(dir);
        }
        let Some(seed) = seed else {
            return precondition(format!(
                "{} holds no weights; pass --seed to generate them",
                dir.display()
            ));
        };
        let m = Self::init(config, seed)?;
        m.save(dir)?;
        Ok(m)
    }

    /// One embedding per clip stream.
    pub fn embed(&self, stream: &SpikeStream) -> Result<Vec<f64>> {
        let (h, w) = self.config.star.input_hw;
        if (stream.height(), stream.width()) != (h, w) {
            return precondition(format!(
                "stream is {}x{}, model expects {h}x{w}",
                stream.height(),
                stream.width()
            ));
        }
        let est = hsfe_forward(stream, &self.config.hsfe, &self.hsfe)?;
        Ok(star_net_forward(&est, &self.config.star, &self.star)?.to_vec())
    }
}

pub struct SpikingModel {
    pub config: FsveConfig,
    pub weights: FsveWeights,
}

impl SpikingModel {
    pub fn load_or_init(dir: &Path, config: FsveConfig, seed: Option<u64>) -> Result<Self> {
        if dir.join(MANIFEST_FILE).exists() {
            let a = WeightArchive::load(dir).with_context(|| format!("loading weights from {}", dir.display()))?;
            let stored: FsveConfig = match a.config.clone() {
                Some(v) => serde_json::from_value(v)?,
                None => config.clone(),
            };
            let config = FsveConfig { timesteps: config.timesteps, ..stored };
            let weights = FsveWeights::from_archive(&config, &a)?;
            return Ok(Self { config, weights });
        }
        let Some(seed) = seed else {
            return precondition(format!(
                "{} holds no weights; pass --seed to generate them",
                dir.display()
            ));
        };
        let weights = FsveWeights::init(&config, seed)?;
        let mut a = WeightArchive::new(Some(seed));
        a.config = Some(serde_json::to_value(&config)?);
        weights.to_archive(&mut a);
        a.save(dir).with_context(|| format!("saving weights to {}", dir.display()))?;
        Ok(Self { config, weights })
    }
}
