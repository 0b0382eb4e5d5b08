//! Synthetic action clips: bright moving shapes over a dim figure.
//!
//! Four motion archetypes:
//!
//! * `clap`: two blobs converge and part horizontally, repeatedly.
//! * `wave`: one raised blob swings left and right.
//! * `punch`: one blob thrusts sideways from the body and retracts,
//!   swelling as it extends.
//! * `throw`: one blob travels along a parabolic arc.
//!
//! Every clip draws its own amplitudes, phases, sizes and offsets from a
//! ChaCha8 stream keyed by `(seed, class, clip)`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exit::precondition;
use crate::frames::{to_u8, write_frames};
use crate::provenance::write_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Clap,
    Wave,
    Punch,
    Throw,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [Archetype::Clap, Archetype::Wave, Archetype::Punch, Archetype::Throw];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Clap => "clap",
            Archetype::Wave => "wave",
            Archetype::Punch => "punch",
            Archetype::Throw => "throw",
        }
    }

    pub fn prompt(self) -> &'static str {
        match self {
            Archetype::Clap => "a person clapping both hands together",
            Archetype::Wave => "a person waving one hand overhead",
            Archetype::Punch => "a person throwing a fast punch forward",
            Archetype::Throw => "a person tossing a ball in an arc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub classes: Vec<Archetype>,
    pub clips_per_class: usize,
    /// Rendered frames per clip.
    pub frames: usize,
    /// Square resolution in pixels.
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            classes: Archetype::ALL.to_vec(),
            clips_per_class: 12,
            frames: 26,
            size: 64,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return precondition("a contrastive dataset needs at least two classes");
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return precondition(format!("class `{}` listed twice", c.name()));
            }
        }
        if self.size < 64 {
            return precondition(format!("resolution {} is below 64x64", self.size));
        }
        if self.clips_per_class == 0 || self.frames < 2 {
            return precondition("need at least one clip per class and two frames per clip");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub label: String,
    /// Frame directory, relative to the dataset root.
    pub dir: String,
}

/// `dataset.json` at the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub spec: SyntheticDatasetSpec,
    pub classes: Vec<ClassEntry>,
    pub clips: Vec<ClipEntry>,
}

pub const INDEX_FILE: &str = "dataset.json";
pub const PROMPTS_FILE: &str = "prompts.txt";

struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amp: f64,
}

fn render(size: usize, background: f64, blobs: &[Blob]) -> Array2<f64> {
    Array2::from_shape_fn((size, size), |(y, x)| {
        let mut v = background;
        for b in blobs {
            let d2 = (x as f64 - b.x).powi(2) + (y as f64 - b.y).powi(2);
            v += b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        v.clamp(0.0, 1.0)
    })
}

/// Renders one clip of `archetype` as intensity frames.
pub fn render_clip(archetype: Archetype, size: usize, frames: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    let s = size as f64 / 64.0;
    let cx = size as f64 / 2.0 + rng.random_range(-4.0..4.0) * s;
    let cy = size as f64 / 2.0 + rng.random_range(-3.0..3.0) * s;
    let background = rng.random_range(0.04..0.10);
    let amp = rng.random_range(0.75..0.9);
    let sigma = rng.random_range(3.5..5.0) * s;
    let freq = rng.random_range(1.5..2.5);
    let phase = rng.random_range(0.0..2.0 * PI);
    let torso = Blob {
        x: cx,
        y: cy + 6.0 * s,
        sigma: 7.0 * s,
        amp: 0.2,
    };
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let reach = rng.random_range(10.0..16.0) * s;
    let lift = rng.random_range(-3.0..3.0) * s;

    (0..frames)
        .map(|k| {
            let t = k as f64 / (frames - 1) as f64;
            let w = 2.0 * PI * freq * t + phase;
            let mut blobs = vec![Blob { ..torso }];
            match archetype {
                Archetype::Clap => {
                    let gap = 3.0 * s + reach * (0.5 + 0.5 * w.cos());
                    for dir in [-1.0, 1.0] {
                        blobs.push(Blob { x: cx + dir * gap, y: cy + lift, sigma, amp });
                    }
                }
                Archetype::Wave => {
                    blobs.push(Blob {
                        x: cx + reach * w.sin(),
                        y: cy - 16.0 * s + lift,
                        sigma,
                        amp,
                    });
                }
                Archetype::Punch => {
                    let p = w.sin().max(0.0).powi(2);
                    blobs.push(Blob {
                        x: cx + side * (4.0 * s + 1.2 * reach * p),
                        y: cy + lift,
                        sigma: sigma * (1.0 + 0.5 * p),
                        amp,
                    });
                }
                Archetype::Throw => {
                    let u = (t * 1.1 + phase / (2.0 * PI) * 0.2).fract();
                    blobs.push(Blob {
                        x: cx + side * (2.0 * u - 1.0) * 1.4 * reach,
                        y: cy + 10.0 * s - 4.0 * u * (1.0 - u) * 28.0 * s + lift,
                        sigma,
                        amp,
                    });
                }
            }
            render(size, background, &blobs)
        })
        .collect()
}

fn clip_rng(seed: u64, class: usize, clip: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | clip as u64);
    rng
}

/// Renders every clip as PGM frames under `root/<class>_<nn>/` and writes
/// `dataset.json` plus `prompts.txt` (`class<TAB>prompt` per line).
pub fn synth_dataset(spec: &SyntheticDatasetSpec, root: &Path) -> Result<DatasetIndex> {
    spec.validate()?;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let mut clips = Vec::new();
    for (ci, &class) in spec.classes.iter().enumerate() {
        for k in 0..spec.clips_per_class {
            let id = format!("{}_{k:03}", class.name());
            let mut rng = clip_rng(spec.seed, ci, k);
            let frames: Vec<_> = render_clip(class, spec.size, spec.frames, &mut rng).iter().map(to_u8).collect();
            write_frames(&root.join(&id), &frames)?;
            clips.push(ClipEntry {
                id: id.clone(),
                label: class.name().into(),
                dir: id,
            });
        }
    }
    let classes: Vec<ClassEntry> = spec
        .classes
        .iter()
        .map(|c| ClassEntry {
            name: c.name().into(),
            prompt: c.prompt().into(),
        })
        .collect();
    write_prompts(&root.join(PROMPTS_FILE), &classes)?;
    let index = DatasetIndex {
        spec: spec.clone(),
        classes,
        clips,
    };
    write_json(&root.join(INDEX_FILE), &index)?;
    Ok(index)
}

pub fn clip_dir(root: &Path, clip: &ClipEntry) -> PathBuf {
    root.join(&clip.dir)
}

pub fn write_prompts(path: &Path, classes: &[ClassEntry]) -> Result<()> {
    let text: String = classes.iter().map(|c| format!("{}\t{}\n", c.name, c.prompt)).collect();
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reads `class<TAB>prompt` lines; blank lines are skipped.
pub fn read_prompts(path: &Path) -> Result<Vec<ClassEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: Vec<ClassEntry> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((name, prompt)) = line.split_once('\t') else {
            return precondition(format!("{}:{}: expected `class<TAB>prompt`", path.display(), n + 1));
        };
        let (name, prompt) = (name.trim(), prompt.trim());
        if name.is_empty() || prompt.is_empty() {
            return precondition(format!("{}:{}: empty class or prompt", path.display(), n + 1));
        }
        if out.iter().any(|c| c.name == name || c.prompt == prompt) {
            return precondition(format!("{}:{}: duplicate class or prompt", path.display(), n + 1));
        }
        out.push(ClassEntry {
            name: name.into(),
            prompt: prompt.into(),
        });
    }
    if out.is_empty() {
        return precondition(format!("{} lists no classes", path.display()));
    }
    Ok(out)
}
