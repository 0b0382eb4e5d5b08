//! Hierarchical spike feature extraction.
//!
//! The stream is cut into overlapping time blocks. Each block feeds `m`
//! parallel branches; branch `i` looks at the central `k_i` frames of the
//! block, weights them with a temporal mask, smooths them with a moving
//! average of width `w_i` and convolves the result (`k_i` input channels,
//! `c_out` output channels, 3x3). Fewer channels pair with a wider average
//! so that `k_i * w_i` stays roughly constant across branches. A spatial
//! attention head then gates each branch per pixel and the gated maps are
//! stacked into one coarse intensity estimate per block.

use ndarray::{s, Array1, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::stream::SpikeStream;
use crate::tensor::{conv2d, sigmoid};
use crate::weights::{WeightArchive, WeightInit};

/// Temporal block layout: centers at `r_win + i * step` for `i < n_blocks`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub r_win: usize,
    pub step: usize,
    pub n_blocks: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        Self {
            r_win: 30,
            step: 45,
            n_blocks: 5,
        }
    }
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.step >= 1, "block step must be at least 1");
        ensure!(self.n_blocks >= 1, "need at least one block");
        Ok(())
    }

    pub fn block_len(&self) -> usize {
        2 * self.r_win + 1
    }

    pub fn centers(&self) -> Vec<usize> {
        (0..self.n_blocks).map(|i| self.r_win + i * self.step).collect()
    }

    /// Minimum stream length holding every block.
    pub fn required_len(&self) -> usize {
        (self.n_blocks - 1) * self.step + self.block_len()
    }
}

/// Frames `[center - r_win, center + r_win]` of a stream as 0.0/1.0 values.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBlock {
    pub center: usize,
    /// `[2 * r_win + 1, H, W]`
    pub frames: Array3<f64>,
}

pub fn slice_blocks(stream: &SpikeStream, spec: &BlockSpec) -> Result<Vec<TimeBlock>> {
    spec.validate()?;
    let required = spec.required_len();
    if stream.t_len() < required {
        return Err(Error::StreamTooShort {
            required,
            actual: stream.t_len(),
        });
    }
    Ok(spec
        .centers()
        .into_iter()
        .map(|c| TimeBlock {
            center: c,
            frames: stream.dense_range(c - spec.r_win, c + spec.r_win + 1),
        })
        .collect())
}

/// Input channel count and averaging window of one branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchAlloc {
    pub k: usize,
    pub window: usize,
}

/// Splits a block of `total_channels` frames over `m` branches.
///
/// Branch `i` gets `k_i = total - i * channel_step` channels and a moving
/// average of width `w_i = round(k_0 / k_i)`, so `k_i * w_i` stays within
/// half a branch width of `k_0`.
pub fn allocate_channels(total_channels: usize, m: usize, channel_step: usize) -> Result<Vec<BranchAlloc>> {
    ensure!(m >= 1, "need at least one branch");
    ensure!(
        total_channels >= m,
        "{total_channels} channels cannot feed {m} branches"
    );
    let smallest = total_channels as i64 - (m as i64 - 1) * channel_step as i64;
    ensure!(
        smallest >= 1,
        "channel_step {channel_step} leaves branch {} with {smallest} channels",
        m - 1
    );
    let k0 = total_channels as f64;
    Ok((0..m)
        .map(|i| {
            let k = total_channels - i * channel_step;
            BranchAlloc {
                k,
                window: (k0 / k as f64).round().max(1.0) as usize,
            }
        })
        .collect())
}

/// Branch structure of the multi-scale temporal filter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub m: usize,
    pub channel_step: usize,
    pub branches: Vec<BranchAlloc>,
}

impl BranchSpec {
    pub fn new(block_len: usize, m: usize, channel_step: usize) -> Result<Self> {
        Ok(Self {
            m,
            channel_step,
            branches: allocate_channels(block_len, m, channel_step)?,
        })
    }
}

/// Full extractor configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HsfeConfig {
    pub blocks: BlockSpec,
    /// Branch count.
    pub m: usize,
    /// Channel decrement between consecutive branches; 0 gives every branch
    /// the full block.
    pub channel_step: usize,
    /// Output channels per branch.
    pub c_out: usize,
}

impl Default for HsfeConfig {
    fn default() -> Self {
        Self {
            blocks: BlockSpec::default(),
            m: 3,
            channel_step: 20,
            c_out: 16,
        }
    }
}

impl HsfeConfig {
    pub fn branch_spec(&self) -> Result<BranchSpec> {
        self.blocks.validate()?;
        ensure!(self.c_out >= 1, "c_out must be at least 1");
        BranchSpec::new(self.blocks.block_len(), self.m, self.channel_step)
    }

    /// Channel count of each coarse estimate.
    pub fn out_channels(&self) -> usize {
        self.m * self.c_out
    }
}

/// Learnable parameters: per-branch masks and convolutions plus the
/// attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HsfeWeights {
    /// `masks[i]` has `k_i` entries.
    pub masks: Vec<Array1<f64>>,
    /// `convs[i]` is `[c_out, k_i, 3, 3]`.
    pub convs: Vec<ndarray::Array4<f64>>,
    /// `[m, m * c_out, 3, 3]`
    pub sa_w: ndarray::Array4<f64>,
    /// `[m]`
    pub sa_b: Array1<f64>,
}

impl HsfeWeights {
    /// All-ones masks, non-negative He-uniform convolutions (every filter
    /// integrates spike counts over its exposure window), zero attention bias.
    pub fn init(cfg: &HsfeConfig, seed: u64) -> Result<Self> {
        let spec = cfg.branch_spec()?;
        let mut init = WeightInit::new(seed);
        let mut masks = Vec::new();
        let mut convs = Vec::new();
        for b in &spec.branches {
            masks.push(Array1::ones(b.k));
            convs.push(
                init.he_nonnegative(&[cfg.c_out, b.k, 3, 3], b.k * 9)
                    .into_dimensionality()
                    .expect("4-d"),
            );
        }
        let sa_in = cfg.out_channels();
        let sa_w = init
            .lecun(&[cfg.m, sa_in, 3, 3], sa_in * 9)
            .into_dimensionality()
            .expect("4-d");
        Ok(Self {
            masks,
            convs,
            sa_w,
            sa_b: Array1::zeros(cfg.m),
        })
    }

    pub fn to_archive(&self, archive: &mut WeightArchive) {
        for (i, (mask, conv)) in self.masks.iter().zip(&self.convs).enumerate() {
            archive.insert(format!("hsfe.branch{i}.mask"), mask.clone().into_dyn());
            archive.insert(format!("hsfe.branch{i}.conv.w"), conv.clone().into_dyn());
        }
        archive.insert("hsfe.sa.conv.w", self.sa_w.clone().into_dyn());
        archive.insert("hsfe.sa.conv.b", self.sa_b.clone().into_dyn());
    }

    pub fn from_archive(cfg: &HsfeConfig, archive: &WeightArchive) -> Result<Self> {
        let spec = cfg.branch_spec()?;
        let mut masks = Vec::new();
        let mut convs = Vec::new();
        for (i, b) in spec.branches.iter().enumerate() {
            masks.push(archive.get1(&format!("hsfe.branch{i}.mask"), b.k)?);
            convs.push(archive.get4(&format!("hsfe.branch{i}.conv.w"), [cfg.c_out, b.k, 3, 3])?);
        }
        let sa_in = cfg.out_channels();
        Ok(Self {
            masks,
            convs,
            sa_w: archive.get4("hsfe.sa.conv.w", [cfg.m, sa_in, 3, 3])?,
            sa_b: archive.get1("hsfe.sa.conv.b", cfg.m)?,
        })
    }

    fn check(&self, spec: &BranchSpec) -> Result<()> {
        if self.masks.len() != spec.m || self.convs.len() != spec.m {
            return Err(Error::ShapeMismatch(format!(
                "weights hold {} branches, spec has {}",
                self.masks.len(),
                spec.m
            )));
        }
        for (i, b) in spec.branches.iter().enumerate() {
            if self.masks[i].len() != b.k || self.convs[i].dim().1 != b.k {
                return Err(Error::ShapeMismatch(format!(
                    "branch {i} weights do not match k = {}",
                    b.k
                )));
            }
        }
        Ok(())
    }
}

/// Centered moving average of width `window` along the channel axis,
/// truncated at both ends. Width 1 is the identity.
pub fn temporal_average(x: ArrayView3<'_, f64>, window: usize) -> Array3<f64> {
    if window <= 1 {
        return x.to_owned();
    }
    let k = x.dim().0;
    let before = (window - 1) / 2;
    let mut out = Array3::zeros(x.raw_dim());
    for j in 0..k {
        let lo = j.saturating_sub(before);
        let hi = (j + window - before).min(k);
        let mut acc = out.index_axis_mut(Axis(0), j);
        for s in lo..hi {
            acc += &x.index_axis(Axis(0), s);
        }
        acc /= (hi - lo) as f64;
    }
    out
}

/// Multi-scale temporal filtering of one block: one `[c_out, H, W]` map per
/// branch.
pub fn mtf_forward(block: &TimeBlock, branches: &BranchSpec, weights: &HsfeWeights) -> Result<Vec<Array3<f64>>> {
    weights.check(branches)?;
    let len = block.frames.dim().0;
    branches
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if b.k > len {
                return Err(Error::ShapeMismatch(format!(
                    "branch {i} wants {} channels from a {len}-frame block",
                    b.k
                )));
            }
            let start = (len - b.k) / 2;
            let mut masked = block.frames.slice(s![start..start + b.k, .., ..]).to_owned();
            for (mut frame, &m) in masked.axis_iter_mut(Axis(0)).zip(weights.masks[i].iter()) {
                frame *= m;
            }
            let smoothed = temporal_average(masked.view(), b.window);
            conv2d(smoothed.view(), weights.convs[i].view(), None, 1, 1)
        })
        .collect()
}

/// Spatial attention over branch outputs.
///
/// Returns the stacked gated maps `[m * c_out, H, W]` together with the
/// per-branch, per-pixel gates `[m, H, W]`, each in `(0, 1)`.
pub fn spatial_attention_with_gates(
    features: &[Array3<f64>],
    weights: &HsfeWeights,
) -> Result<(Array3<f64>, Array3<f64>)> {
    ensure!(!features.is_empty(), "spatial attention needs at least one branch");
    let dim = features[0].dim();
    if features.iter().any(|f| f.dim() != dim) {
        return Err(Error::ShapeMismatch("branch feature maps differ in shape".into()));
    }
    let m = features.len();
    let (c, h, w) = dim;
    let mut stacked = Array3::zeros((m * c, h, w));
    for (i, f) in features.iter().enumerate() {
        stacked.slice_mut(s![i * c..(i + 1) * c, .., ..]).assign(f);
    }
    if weights.sa_w.dim().0 != m {
        return Err(Error::ShapeMismatch(format!(
            "attention head produces {} gates for {m} branches",
            weights.sa_w.dim().0
        )));
    }
    let gates = conv2d(stacked.view(), weights.sa_w.view(), Some(weights.sa_b.view()), 1, 1)?
        .mapv(sigmoid);
    for i in 0..m {
        let gate = gates.index_axis(Axis(0), i);
        for mut ch in stacked.slice_mut(s![i * c..(i + 1) * c, .., ..]).axis_iter_mut(Axis(0)) {
            ch *= &gate;
        }
    }
    Ok((stacked, gates))
}

pub fn spatial_attention(features: &[Array3<f64>], weights: &HsfeWeights) -> Result<Array3<f64>> {
    Ok(spatial_attention_with_gates(features, weights)?.0)
}

/// One coarse estimate `[m * c_out, H, W]` per block, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEstimates {
    pub estimates: Vec<Array3<f64>>,
}

pub fn hsfe_forward(stream: &SpikeStream, cfg: &HsfeConfig, weights: &HsfeWeights) -> Result<CoarseEstimates> {
    let spec = cfg.branch_spec()?;
    let estimates = slice_blocks(stream, &cfg.blocks)?
        .iter()
        .map(|block| {
            let feats = mtf_forward(block, &spec, weights)?;
            spatial_attention(&feats, weights)
        })
        .collect::<Result<Vec<_>>>()?;
    if estimates.len() != cfg.blocks.n_blocks {
        return Err(Error::Invariant(format!(
            "{} estimates for {} blocks",
            estimates.len(),
            cfg.blocks.n_blocks
        )));
    }
    Ok(CoarseEstimates { estimates })
}
