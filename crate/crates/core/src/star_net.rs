//! Miniature attention-pooling ResNet with temporal self-attention fusion.
//!
//! Each coarse estimate passes through a stem of three stride-2 3x3
//! convolutions (÷8), four residual groups (groups 2 and 3 open with a
//! stride-2 block, ÷32 overall) and an attention-pooling layer whose query
//! is the mean spatial token. The per-block vectors form a `[T, B, D]`
//! sequence that goes through one self-attention encoder layer (attention
//! plus feed-forward, both residual) and is averaged over time.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::hsfe::CoarseEstimates;
use crate::tensor::{conv2d, linear, mean_axis0, relu, softmax_in_place, FeatureTensor};
use crate::weights::{WeightArchive, WeightInit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockStyle {
    /// 1x1 reduce, 3x3, 1x1 expand with a quarter-width middle.
    Bottleneck,
    /// Two 3x3 convolutions.
    Basic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniMapResNetConfig {
    /// Channels of each incoming coarse estimate.
    pub in_channels: usize,
    /// Spatial size `(H, W)` of the incoming estimates.
    pub input_hw: (usize, usize),
    pub stem_channels: usize,
    pub group_widths: Vec<usize>,
    pub blocks_per_group: Vec<usize>,
    pub heads: usize,
    pub embed_dim: usize,
    /// Hidden width of the temporal feed-forward layer.
    pub ff_dim: usize,
    pub block_style: BlockStyle,
}

impl Default for MiniMapResNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 48,
            input_hw: (64, 64),
            stem_channels: 16,
            group_widths: vec![16, 32, 64, 128],
            blocks_per_group: vec![2, 2, 2, 2],
            heads: 8,
            embed_dim: 64,
            ff_dim: 128,
            block_style: BlockStyle::Bottleneck,
        }
    }
}

/// Stride of the first block of each group.
const GROUP_STRIDES: [usize; 4] = [1, 2, 2, 1];

impl MiniMapResNetConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.in_channels >= 1, "in_channels must be positive");
        ensure!(self.stem_channels >= 1, "stem_channels must be positive");
        ensure!(
            self.group_widths.len() == 4 && self.blocks_per_group.len() == 4,
            "expected four residual groups"
        );
        ensure!(
            self.group_widths.iter().all(|&w| w >= 1)
                && self.group_widths.windows(2).all(|p| p[0] <= p[1]),
            "group widths must be positive and non-decreasing: {:?}",
            self.group_widths
        );
        ensure!(
            self.blocks_per_group.iter().all(|&b| b >= 1),
            "every group needs at least one block"
        );
        ensure!(self.heads >= 1, "need at least one attention head");
        ensure!(
            self.embed_dim >= 1 && self.embed_dim % self.heads == 0,
            "embed_dim {} must be a positive multiple of heads {}",
            self.embed_dim,
            self.heads
        );
        ensure!(self.ff_dim >= 1, "ff_dim must be positive");
        check_spatial(self.input_hw)?;
        Ok(())
    }

    /// Spatial token grid after the ÷32 reduction.
    pub fn token_grid(&self) -> (usize, usize) {
        let reduce = |mut n: usize| {
            for _ in 0..5 {
                n = n.div_ceil(2);
            }
            n
        };
        (reduce(self.input_hw.0), reduce(self.input_hw.1))
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.token_grid();
        h * w
    }

    fn final_width(&self) -> usize {
        self.group_widths[3]
    }
}

fn check_spatial((h, w): (usize, usize)) -> Result<()> {
    if h < 32 || w < 32 {
        return Err(Error::InvalidArgument(format!(
            "spatial size {h}x{w} is below the 32x32 minimum"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Conv {
    w: Array4<f64>,
    b: Array1<f64>,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn init(init: &mut WeightInit, c_in: usize, c_out: usize, k: usize, stride: usize, gain: f64) -> Self {
        let fan_in = c_in * k * k;
        let w = init.he(&[c_out, c_in, k, k], fan_in).mapv(|v| ((v * gain) as f32) as f64);
        Self {
            w: w.into_dimensionality().expect("4-d"),
            b: Array1::zeros(c_out),
            stride,
            pad: k / 2,
        }
    }

    fn forward(&self, x: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
        conv2d(x, self.w.view(), Some(self.b.view()), self.stride, self.pad)
    }

    fn save(&self, a: &mut WeightArchive, name: &str) {
        a.insert(format!("{name}.w"), self.w.clone().into_dyn());
        a.insert(format!("{name}.b"), self.b.clone().into_dyn());
    }

    fn load(a: &WeightArchive, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            w: a.get4(&format!("{name}.w"), [c_out, c_in, k, k])?,
            b: a.get1(&format!("{name}.b"), c_out)?,
            stride,
            pad: k / 2,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ResBlock {
    convs: Vec<Conv>,
    proj: Option<Conv>,
}

/// Layer shapes `(c_in, c_out, kernel, stride)` of one residual block.
fn block_layout(style: BlockStyle, c_in: usize, c_out: usize, stride: usize) -> Vec<(usize, usize, usize, usize)> {
    match style {
        BlockStyle::Bottleneck => {
            let mid = (c_out / 4).max(1);
            vec![(c_in, mid, 1, 1), (mid, mid, 3, stride), (mid, c_out, 1, 1)]
        }
        BlockStyle::Basic => vec![(c_in, c_out, 3, stride), (c_out, c_out, 3, 1)],
    }
}

impl ResBlock {
    fn forward(&self, x: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
        let mut h = x.to_owned();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(h.view())?;
            if i != last {
                h.mapv_inplace(relu);
            }
        }
        let shortcut = match &self.proj {
            Some(p) => p.forward(x)?,
            None => x.to_owned(),
        };
        h += &shortcut;
        h.mapv_inplace(relu);
        Ok(h)
    }
}

/// Multi-head attention projections: `q, k, v: [D, C_in]`, `o: [D, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
}

impl AttentionWeights {
    fn init(init: &mut WeightInit, c_in: usize, d: usize) -> Self {
        let mat = |init: &mut WeightInit, rows: usize, cols: usize| -> Array2<f64> {
            init.lecun(&[rows, cols], cols).into_dimensionality().expect("2-d")
        };
        Self {
            wq: mat(init, d, c_in),
            bq: Array1::zeros(d),
            wk: mat(init, d, c_in),
            bk: Array1::zeros(d),
            wv: mat(init, d, c_in),
            bv: Array1::zeros(d),
            wo: mat(init, d, d),
            bo: Array1::zeros(d),
        }
    }

    fn save(&self, a: &mut WeightArchive, name: &str) {
        for (tag, w, b) in [
            ("q", &self.wq, &self.bq),
            ("k", &self.wk, &self.bk),
            ("v", &self.wv, &self.bv),
            ("o", &self.wo, &self.bo),
        ] {
            a.insert(format!("{name}.{tag}.w"), w.clone().into_dyn());
            a.insert(format!("{name}.{tag}.b"), b.clone().into_dyn());
        }
    }

    fn load(a: &WeightArchive, name: &str, c_in: usize, d: usize) -> Result<Self> {
        Ok(Self {
            wq: a.get2(&format!("{name}.q.w"), d, c_in)?,
            bq: a.get1(&format!("{name}.q.b"), d)?,
            wk: a.get2(&format!("{name}.k.w"), d, c_in)?,
            bk: a.get1(&format!("{name}.k.b"), d)?,
            wv: a.get2(&format!("{name}.v.w"), d, c_in)?,
            bv: a.get1(&format!("{name}.v.b"), d)?,
            wo: a.get2(&format!("{name}.o.w"), d, d)?,
            bo: a.get1(&format!("{name}.o.b"), d)?,
        })
    }

    pub fn zero_biases(&mut self) {
        for b in [&mut self.bq, &mut self.bk, &mut self.bv, &mut self.bo] {
            b.fill(0.0);
        }
    }
}

/// Scaled dot-product multi-head attention of `queries` over `keys_values`.
///
/// Returns the output projection `[Nq, D]` and one `[Nq, Nk]` softmax
/// matrix per head.
pub fn multi_head_attention(
    queries: ArrayView2<'_, f64>,
    keys_values: ArrayView2<'_, f64>,
    w: &AttentionWeights,
    heads: usize,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let q = linear(queries, w.wq.view(), Some(w.bq.view()))?;
    let k = linear(keys_values, w.wk.view(), Some(w.bk.view()))?;
    let v = linear(keys_values, w.wv.view(), Some(w.bv.view()))?;
    let d = q.ncols();
    ensure!(heads >= 1 && d % heads == 0, "width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (nq, nk) = (q.nrows(), k.nrows());
    let mut concat = Array2::zeros((nq, d));
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let mut p = Array2::zeros((nq, nk));
        for i in 0..nq {
            let row = p.row_mut(i).into_slice().expect("contiguous row");
            for (j, r) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..dh {
                    acc += qh[[i, c]] * kh[[j, c]];
                }
                *r = acc * scale;
            }
            softmax_in_place(row);
        }
        for i in 0..nq {
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..nk {
                    acc += p[[i, j]] * vh[[j, c]];
                }
                concat[[i, h * dh + c]] = acc;
            }
        }
        weights.push(p);
    }
    let out = linear(concat.view(), w.wo.view(), Some(w.bo.view()))?;
    Ok((out, weights))
}

/// Encoder-layer feed-forward: `[ff, D]` then `[D, ff]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl FeedForward {
    fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let h = linear(x, self.w1.view(), Some(self.b1.view()))?.mapv(relu);
        linear(h.view(), self.w2.view(), Some(self.b2.view()))
    }
}

/// Every learnable tensor of the fusion network.
#[derive(Debug, Clone, PartialEq)]
pub struct StarNetWeights {
    stem: Vec<Conv>,
    groups: Vec<Vec<ResBlock>>,
    /// `[tokens + 1, C_final]`, row 0 belongs to the mean token.
    pub pool_pos: Array2<f64>,
    pub pool_attn: AttentionWeights,
    pub temporal_attn: AttentionWeights,
    pub temporal_ff: FeedForward,
}

/// Shapes of every convolution: stem then groups.
struct Layout {
    stem: Vec<(usize, usize, usize, usize)>,
    groups: Vec<Vec<(Vec<(usize, usize, usize, usize)>, Option<(usize, usize, usize)>)>>,
}

fn layout(cfg: &MiniMapResNetConfig) -> Layout {
    let sc = cfg.stem_channels;
    let stem = vec![(cfg.in_channels, sc, 3, 2), (sc, sc, 3, 2), (sc, sc, 3, 2)];
    let mut c_in = sc;
    let mut groups = Vec::new();
    for g in 0..4 {
        let width = cfg.group_widths[g];
        let mut blocks = Vec::new();
        for b in 0..cfg.blocks_per_group[g] {
            let stride = if b == 0 { GROUP_STRIDES[g] } else { 1 };
            let convs = block_layout(cfg.block_style, c_in, width, stride);
            let proj = (c_in != width || stride != 1).then_some((c_in, width, stride));
            blocks.push((convs, proj));
            c_in = width;
        }
        groups.push(blocks);
    }
    Layout { stem, groups }
}

impl StarNetWeights {
    /// He-uniform convolutions (residual branch outputs scaled down),
    /// LeCun-uniform projections, zero biases.
    pub fn init(cfg: &MiniMapResNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = WeightInit::new(seed);
        let lay = layout(cfg);
        let stem = lay
            .stem
            .iter()
            .map(|&(i, o, k, s)| Conv::init(&mut init, i, o, k, s, 1.0))
            .collect();
        let groups = lay
            .groups
            .iter()
            .map(|blocks| {
                blocks
                    .iter()
                    .map(|(convs, proj)| {
                        let last = convs.len() - 1;
                        ResBlock {
                            convs: convs
                                .iter()
                                .enumerate()
                                .map(|(j, &(i, o, k, s))| {
                                    let gain = if j == last { 0.5 } else { 1.0 };
                                    Conv::init(&mut init, i, o, k, s, gain)
                                })
                                .collect(),
                            proj: proj.map(|(i, o, s)| Conv::init(&mut init, i, o, 1, s, 1.0)),
                        }
                    })
                    .collect()
            })
            .collect();
        let c = cfg.final_width();
        let d = cfg.embed_dim;
        let pool_pos = init
            .lecun(&[cfg.tokens() + 1, c], c)
            .into_dimensionality()
            .expect("2-d");
        let pool_attn = AttentionWeights::init(&mut init, c, d);
        let temporal_attn = AttentionWeights::init(&mut init, d, d);
        let temporal_ff = FeedForward {
            w1: init.lecun(&[cfg.ff_dim, d], d).into_dimensionality().expect("2-d"),
            b1: Array1::zeros(cfg.ff_dim),
            w2: init.lecun(&[d, cfg.ff_dim], cfg.ff_dim).into_dimensionality().expect("2-d"),
            b2: Array1::zeros(d),
        };
        Ok(Self {
            stem,
            groups,
            pool_pos,
            pool_attn,
            temporal_attn,
            temporal_ff,
        })
    }

    /// Sets every bias and the positional codes to zero.
    pub fn zero_biases(&mut self) {
        for c in self.stem.iter_mut() {
            c.b.fill(0.0);
        }
        for block in self.groups.iter_mut().flatten() {
            for c in block.convs.iter_mut().chain(block.proj.iter_mut()) {
                c.b.fill(0.0);
            }
        }
        self.pool_pos.fill(0.0);
        self.pool_attn.zero_biases();
        self.temporal_attn.zero_biases();
        self.temporal_ff.b1.fill(0.0);
        self.temporal_ff.b2.fill(0.0);
    }

    pub fn to_archive(&self, a: &mut WeightArchive) {
        for (j, c) in self.stem.iter().enumerate() {
            c.save(a, &format!("star.stem.conv{j}"));
        }
        for (g, blocks) in self.groups.iter().enumerate() {
            for (b, block) in blocks.iter().enumerate() {
                for (j, c) in block.convs.iter().enumerate() {
                    c.save(a, &format!("star.group{g}.block{b}.conv{j}"));
                }
                if let Some(p) = &block.proj {
                    p.save(a, &format!("star.group{g}.block{b}.proj"));
                }
            }
        }
        a.insert("star.pool.pos", self.pool_pos.clone().into_dyn());
        self.pool_attn.save(a, "star.pool");
        self.temporal_attn.save(a, "star.temporal");
        a.insert("star.temporal.ff1.w", self.temporal_ff.w1.clone().into_dyn());
        a.insert("star.temporal.ff1.b", self.temporal_ff.b1.clone().into_dyn());
        a.insert("star.temporal.ff2.w", self.temporal_ff.w2.clone().into_dyn());
        a.insert("star.temporal.ff2.b", self.temporal_ff.b2.clone().into_dyn());
    }

    pub fn from_archive(cfg: &MiniMapResNetConfig, a: &WeightArchive) -> Result<Self> {
        cfg.validate()?;
        let lay = layout(cfg);
        let stem = lay
            .stem
            .iter()
            .enumerate()
            .map(|(j, &(i, o, k, s))| Conv::load(a, &format!("star.stem.conv{j}"), i, o, k, s))
            .collect::<Result<Vec<_>>>()?;
        let mut groups = Vec::new();
        for (g, blocks) in lay.groups.iter().enumerate() {
            let mut loaded = Vec::new();
            for (b, (convs, proj)) in blocks.iter().enumerate() {
                let convs = convs
                    .iter()
                    .enumerate()
                    .map(|(j, &(i, o, k, s))| {
                        Conv::load(a, &format!("star.group{g}.block{b}.conv{j}"), i, o, k, s)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let proj = proj
                    .map(|(i, o, s)| Conv::load(a, &format!("star.group{g}.block{b}.proj"), i, o, 1, s))
                    .transpose()?;
                loaded.push(ResBlock { convs, proj });
            }
            groups.push(loaded);
        }
        let c = cfg.final_width();
        let d = cfg.embed_dim;
        Ok(Self {
            stem,
            groups,
            pool_pos: a.get2("star.pool.pos", cfg.tokens() + 1, c)?,
            pool_attn: AttentionWeights::load(a, "star.pool", c, d)?,
            temporal_attn: AttentionWeights::load(a, "star.temporal", d, d)?,
            temporal_ff: FeedForward {
                w1: a.get2("star.temporal.ff1.w", cfg.ff_dim, d)?,
                b1: a.get1("star.temporal.ff1.b", cfg.ff_dim)?,
                w2: a.get2("star.temporal.ff2.w", d, cfg.ff_dim)?,
                b2: a.get1("star.temporal.ff2.b", d)?,
            },
        })
    }
}

/// Convolutional trunk: stem and residual groups, `[C_in, H, W]` to
/// `[C_final, H/32, W/32]`.
pub fn backbone_forward(estimate: ArrayView3<'_, f64>, weights: &StarNetWeights) -> Result<Array3<f64>> {
    let (_, h, w) = estimate.dim();
    check_spatial((h, w))?;
    let mut x = estimate.to_owned();
    for conv in &weights.stem {
        x = conv.forward(x.view())?;
        x.mapv_inplace(relu);
    }
    for block in weights.groups.iter().flatten() {
        x = block.forward(x.view())?;
    }
    Ok(x)
}

/// Flattens `[C, gh, gw]` into row-major tokens `[gh * gw, C]`.
pub fn flatten_tokens(fmap: ArrayView3<'_, f64>) -> Array2<f64> {
    let (c, gh, gw) = fmap.dim();
    Array2::from_shape_fn((gh * gw, c), |(n, ch)| fmap[[ch, n / gw, n % gw]])
}

/// Attention pooling over spatial tokens `[N, C]`.
///
/// The mean token is prepended, positional codes are added to all `N + 1`
/// tokens and the mean token alone queries the whole set. Returns the
/// pooled `[D]` vector and the per-head `[1, N + 1]` attention rows.
pub fn attention_pool(
    tokens: ArrayView2<'_, f64>,
    weights: &StarNetWeights,
    heads: usize,
) -> Result<(Array1<f64>, Vec<Array2<f64>>)> {
    let (n, c) = tokens.dim();
    if weights.pool_pos.dim() != (n + 1, c) {
        return Err(Error::ShapeMismatch(format!(
            "positional codes are {:?}, tokens need {:?}",
            weights.pool_pos.dim(),
            (n + 1, c)
        )));
    }
    let mut seq = Array2::zeros((n + 1, c));
    seq.row_mut(0).assign(&mean_axis0(tokens));
    seq.slice_mut(s![1.., ..]).assign(&tokens);
    seq += &weights.pool_pos;
    let (out, attn) = multi_head_attention(seq.slice(s![0..1, ..]), seq.view(), &weights.pool_attn, heads)?;
    Ok((out.row(0).to_owned(), attn))
}

/// One coarse estimate to one `[D]` vector.
pub fn mini_mapresnet_forward(
    estimate: ArrayView3<'_, f64>,
    cfg: &MiniMapResNetConfig,
    weights: &StarNetWeights,
) -> Result<Array1<f64>> {
    Ok(mini_mapresnet_forward_with_attention(estimate, cfg, weights)?.0)
}

pub fn mini_mapresnet_forward_with_attention(
    estimate: ArrayView3<'_, f64>,
    cfg: &MiniMapResNetConfig,
    weights: &StarNetWeights,
) -> Result<(Array1<f64>, Vec<Array2<f64>>)> {
    if estimate.dim().0 != cfg.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} channels, network expects {}",
            estimate.dim().0,
            cfg.in_channels
        )));
    }
    let fmap = backbone_forward(estimate, weights)?;
    let tokens = flatten_tokens(fmap.view());
    let (v, attn) = attention_pool(tokens.view(), weights, cfg.heads)?;
    if v.len() != cfg.embed_dim {
        return Err(Error::Invariant(format!(
            "pooled width {} differs from embed_dim {}",
            v.len(),
            cfg.embed_dim
        )));
    }
    Ok((v, attn))
}

/// Self-attention encoder layer over time, applied per batch element.
///
/// Also returns the attention matrices, indexed `[batch][head]`, each
/// `[T, T]`.
pub fn temporal_attention_with_weights(
    seq: &FeatureTensor,
    weights: &StarNetWeights,
    heads: usize,
) -> Result<(FeatureTensor, Vec<Vec<Array2<f64>>>)> {
    let x = seq.as_sequence()?;
    let (t, b, d) = x.dim();
    ensure!(t >= 1 && b >= 1, "sequence must have at least one step and one batch entry");
    if d != weights.temporal_attn.wq.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "sequence width {d}, temporal layer expects {}",
            weights.temporal_attn.wq.ncols()
        )));
    }
    let mut out = Array3::zeros((t, b, d));
    let mut all = Vec::with_capacity(b);
    for bi in 0..b {
        let xb = x.index_axis(NdAxis(1), bi);
        let (att, w) = multi_head_attention(xb, xb, &weights.temporal_attn, heads)?;
        let y = &xb + &att;
        let z = &y + &weights.temporal_ff.forward(y.view())?;
        out.index_axis_mut(NdAxis(1), bi).assign(&z);
        all.push(w);
    }
    Ok((FeatureTensor::sequence(out)?, all))
}

pub fn temporal_attention(seq: &FeatureTensor, weights: &StarNetWeights, heads: usize) -> Result<FeatureTensor> {
    Ok(temporal_attention_with_weights(seq, weights, heads)?.0)
}

/// Mean over the time axis of a `[T, B, D]` sequence, summed first to last.
pub fn temporal_pool(seq: &FeatureTensor) -> Result<Array2<f64>> {
    let x = seq.as_sequence()?;
    let (t, b, d) = x.dim();
    if t == 0 {
        return Err(Error::InvalidArgument("cannot pool an empty time axis".into()));
    }
    let mut acc = Array2::zeros((b, d));
    for step in x.axis_iter(NdAxis(0)) {
        acc += &step;
    }
    Ok(acc / t as f64)
}

/// Embeds a batch of clips, one row of `[B, D]` per clip.
pub fn star_net_forward_batch(
    clips: &[CoarseEstimates],
    cfg: &MiniMapResNetConfig,
    weights: &StarNetWeights,
) -> Result<Array2<f64>> {
    ensure!(!clips.is_empty(), "empty batch");
    let t = clips[0].estimates.len();
    ensure!(t >= 1, "clip has no estimates");
    if clips.iter().any(|c| c.estimates.len() != t) {
        return Err(Error::ShapeMismatch("clips carry different numbers of estimates".into()));
    }
    let mut seq = Array3::zeros((t, clips.len(), cfg.embed_dim));
    for (bi, clip) in clips.iter().enumerate() {
        for (ti, est) in clip.estimates.iter().enumerate() {
            let v = mini_mapresnet_forward(est.view(), cfg, weights)?;
            seq.slice_mut(s![ti, bi, ..]).assign(&v);
        }
    }
    let fused = temporal_attention(&FeatureTensor::sequence(seq)?, weights, cfg.heads)?;
    temporal_pool(&fused)
}

/// Embeds one clip.
pub fn star_net_forward(
    estimates: &CoarseEstimates,
    cfg: &MiniMapResNetConfig,
    weights: &StarNetWeights,
) -> Result<Array1<f64>> {
    let out = star_net_forward_batch(std::slice::from_ref(estimates), cfg, weights)?;
    Ok(out.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> MiniMapResNetConfig {
        MiniMapResNetConfig {
            in_channels: 4,
            input_hw: (64, 64),
            stem_channels: 8,
            group_widths: vec![8, 8, 16, 16],
            blocks_per_group: vec![1, 1, 1, 1],
            heads: 4,
            embed_dim: 16,
            ff_dim: 32,
            block_style: BlockStyle::Bottleneck,
        }
    }

    #[test]
    fn token_grid_is_input_over_32() {
        let cfg = MiniMapResNetConfig::default();
        assert_eq!(cfg.token_grid(), (2, 2));
        let w = StarNetWeights::init(&small_cfg(), 1).unwrap();
        let x = Array3::from_elem((4, 64, 64), 0.5);
        let fmap = backbone_forward(x.view(), &w).unwrap();
        assert_eq!(fmap.dim(), (16, 2, 2));
    }

    #[test]
    fn rejects_small_inputs() {
        let cfg = small_cfg();
        let w = StarNetWeights::init(&cfg, 1).unwrap();
        let x = Array3::zeros((4, 16, 64));
        assert!(mini_mapresnet_forward(x.view(), &cfg, &w).is_err());
        let bad = MiniMapResNetConfig { input_hw: (31, 64), ..small_cfg() };
        assert!(bad.validate().is_err());
        let bad = MiniMapResNetConfig { embed_dim: 18, ..small_cfg() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_input_with_zero_biases_gives_zero() {
        let cfg = small_cfg();
        let mut w = StarNetWeights::init(&cfg, 2).unwrap();
        w.zero_biases();
        let x = Array3::zeros((4, 64, 64));
        let v = mini_mapresnet_forward(x.view(), &cfg, &w).unwrap();
        assert!(v.iter().all(|&a| a == 0.0));
        let est = CoarseEstimates { estimates: vec![x; 5] };
        assert!(star_net_forward(&est, &cfg, &w).unwrap().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn basic_blocks_build_and_run() {
        let cfg = MiniMapResNetConfig { block_style: BlockStyle::Basic, ..small_cfg() };
        let w = StarNetWeights::init(&cfg, 3).unwrap();
        let x = Array3::from_shape_fn((4, 64, 64), |(c, y, x)| ((c + y + x) % 5) as f64 * 0.1);
        assert_eq!(mini_mapresnet_forward(x.view(), &cfg, &w).unwrap().len(), 16);
    }

    #[test]
    fn singleton_sequence_attends_to_itself() {
        let cfg = small_cfg();
        let w = StarNetWeights::init(&cfg, 4).unwrap();
        let seq = FeatureTensor::sequence(Array3::from_shape_fn((1, 2, 16), |(_, b, d)| (b * 16 + d) as f64 * 0.05)).unwrap();
        let (_, attn) = temporal_attention_with_weights(&seq, &w, cfg.heads).unwrap();
        for per_batch in &attn {
            for head in per_batch {
                assert_eq!(head[[0, 0]], 1.0);
            }
        }
    }

    #[test]
    fn temporal_pool_symmetric_frames_cancel() {
        let v = Array3::from_shape_fn((2, 1, 3), |(t, _, d)| if t == 0 { d as f64 + 1.0 } else { -(d as f64) - 1.0 });
        let pooled = temporal_pool(&FeatureTensor::sequence(v).unwrap()).unwrap();
        assert!(pooled.iter().all(|&a| a == 0.0));
        let one = Array3::from_shape_fn((1, 2, 3), |(_, b, d)| (b * 3 + d) as f64);
        let pooled = temporal_pool(&FeatureTensor::sequence(one.clone()).unwrap()).unwrap();
        assert_eq!(pooled, one.index_axis(NdAxis(0), 0));
    }

    #[test]
    fn archive_round_trip() {
        let cfg = small_cfg();
        let w = StarNetWeights::init(&cfg, 5).unwrap();
        let mut a = WeightArchive::new(Some(5));
        w.to_archive(&mut a);
        assert!(a.contains("star.group1.block0.proj.w"));
        assert_eq!(StarNetWeights::from_archive(&cfg, &a).unwrap(), w);
    }
}
