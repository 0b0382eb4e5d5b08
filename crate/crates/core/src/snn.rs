//! Spiking runtime: LIF neurons, temporal batch normalization, spiking
//! residual blocks, spike normalization and spike-driven self-attention,
//! plus a small spiking video encoder that records an [`EnergyLedger`].
//!
//! Spike tensors are `f64` arrays holding only `0.0` and `1.0`. A neuron
//! fires when its potential is greater than or equal to its threshold, so a
//! zero threshold fires everywhere.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayD, ArrayView2, ArrayView3, ArrayViewD, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use crate::energy::{conv_fan_out, conv_max_sops, count_conv_sops_exact, EnergyLedger, LayerRecord};
use crate::error::{ensure, Error, Result};
use crate::tensor::{conv2d, conv_out_len, linear, Axis, FeatureTensor};
use crate::weights::{WeightArchive, WeightInit};
use crate::SpikeStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// Fired neurons return to zero.
    #[default]
    Hard,
    /// Fired neurons lose `thresh`.
    Subtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub thresh: f64,
    /// Leak factor applied to the carried potential each step.
    pub decay: f64,
    /// Half-width of the rectangular surrogate gradient.
    pub lens: f64,
    #[serde(default)]
    pub reset: ResetMode,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            thresh: 0.5,
            decay: 0.5,
            lens: 0.5,
            reset: ResetMode::Hard,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.thresh > 0.0, "thresh must be positive, got {}", self.thresh);
        ensure!(
            self.decay > 0.0 && self.decay <= 1.0,
            "decay must lie in (0, 1], got {}",
            self.decay
        );
        ensure!(self.lens > 0.0, "lens must be positive, got {}", self.lens);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembraneState {
    pub u: ArrayD<f64>,
    pub step_index: usize,
}

impl MembraneState {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            u: ArrayD::zeros(shape),
            step_index: 0,
        }
    }
}

/// One LIF update: `u ← decay·u + input`, fire where `u ≥ thresh`, reset.
pub fn lif_step(
    mut state: MembraneState,
    input: ArrayViewD<'_, f64>,
    p: &LifParams,
) -> Result<(ArrayD<f64>, MembraneState)> {
    p.validate()?;
    if state.u.shape() != input.shape() {
        return Err(Error::ShapeMismatch(format!(
            "membrane {:?} vs input {:?}",
            state.u.shape(),
            input.shape()
        )));
    }
    let mut spikes = ArrayD::zeros(input.raw_dim());
    ndarray::Zip::from(&mut state.u)
        .and(&input)
        .and(&mut spikes)
        .for_each(|u, &i, s| {
            *u = p.decay * *u + i;
            if *u >= p.thresh {
                *s = 1.0;
                *u = match p.reset {
                    ResetMode::Hard => 0.0,
                    ResetMode::Subtract => *u - p.thresh,
                };
            }
        });
    if state.u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant("membrane potential became non-finite".into()));
    }
    state.step_index += 1;
    Ok((spikes, state))
}

/// Runs LIF neurons over the leading (time) axis of `x`.
pub fn lif_over_time(x: ArrayViewD<'_, f64>, p: &LifParams) -> Result<ArrayD<f64>> {
    ensure!(x.ndim() >= 1 && x.shape()[0] >= 1, "need a non-empty time axis");
    let mut state = MembraneState::zeros(&x.shape()[1..]);
    let mut out = ArrayD::zeros(x.raw_dim());
    for t in 0..x.shape()[0] {
        let (spk, next) = lif_step(state, x.index_axis(NdAxis(0), t), p)?;
        out.index_axis_mut(NdAxis(0), t).assign(&spk);
        state = next;
    }
    Ok(out)
}

/// Rectangular surrogate for the spike derivative: `1/(2·lens)` where
/// `|u − thresh| ≤ lens`, else 0.
pub fn surrogate_grad(u: f64, p: &LifParams) -> f64 {
    if (u - p.thresh).abs() <= p.lens {
        1.0 / (2.0 * p.lens)
    } else {
        0.0
    }
}

/// Temporal batch normalization: per channel, statistics pooled over every
/// other axis (time, batch, space), population variance, then `gamma·x̂ + beta`.
pub fn tdbn(x: &FeatureTensor, gamma: &[f64], beta: &[f64], eps: f64) -> Result<FeatureTensor> {
    let c_axis = x
        .axis_index(Axis::Channel)
        .ok_or_else(|| Error::InvalidArgument("tensor has no channel axis".into()))?;
    let data = x.data();
    let c = data.shape()[c_axis];
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{c} channels but gamma/beta have {}/{}",
            gamma.len(),
            beta.len()
        )));
    }
    ensure!(eps > 0.0, "eps must be positive");
    let per_channel = data.len() / c.max(1);
    ensure!(per_channel >= 2, "need at least two elements per channel, have {per_channel}");
    let mut out = data.clone();
    for (ch, mut lane) in out.axis_iter_mut(NdAxis(c_axis)).enumerate() {
        let n = lane.len() as f64;
        let mean = lane.iter().sum::<f64>() / n;
        let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        lane.mapv_inplace(|v| gamma[ch] * (v - mean) * inv + beta[ch]);
    }
    FeatureTensor::new(out, x.axes().to_vec())
}

/// True when every value is exactly 0 or 1.
pub fn is_binary<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|&v| v == 0.0 || v == 1.0)
}

fn nnz<'a>(values: impl IntoIterator<Item = &'a f64>) -> u64 {
    values.into_iter().filter(|&&v| v != 0.0).count() as u64
}

/// Weights of one spiking residual block: a 3x3 same-width convolution and
/// its normalization affine.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualWeights {
    pub conv: Array4<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub const TDBN_EPS: f64 = 1e-5;

fn conv_over_time(s: ArrayView4Ref<'_>, w: &Array4<f64>, stride: usize, pad: usize) -> Result<Array4<f64>> {
    let t = s.dim().0;
    let mut steps = Vec::with_capacity(t);
    for ti in 0..t {
        steps.push(conv2d(s.index_axis(NdAxis(0), ti), w.view(), None, stride, pad)?);
    }
    let (c, h, wd) = steps[0].dim();
    let mut out = Array4::zeros((t, c, h, wd));
    for (ti, step) in steps.into_iter().enumerate() {
        out.index_axis_mut(NdAxis(0), ti).assign(&step);
    }
    Ok(out)
}

type ArrayView4Ref<'a> = ndarray::ArrayView4<'a, f64>;

fn tcwh(x: Array4<f64>) -> Result<FeatureTensor> {
    FeatureTensor::new(x.into_dyn(), vec![Axis::Time, Axis::Channel, Axis::Height, Axis::Width])
}

fn conv_record(name: &str, s: ArrayView4Ref<'_>, k: usize, stride: usize, pad: usize, out_channels: usize, out_neurons: usize) -> Result<LayerRecord> {
    let (t, c, h, w) = s.dim();
    let mut actual = 0;
    for ti in 0..t {
        actual += count_conv_sops_exact(s.index_axis(NdAxis(0), ti), k, stride, pad, out_channels)?;
    }
    Ok(LayerRecord {
        layer_name: name.to_string(),
        spike_count: nnz(s.iter()),
        element_count: s.len() as u64,
        fan_out: conv_fan_out(k, out_channels),
        actual_sops: actual,
        neuron_ops: (t * out_neurons) as u64,
        max_sops: Some(t as u64 * conv_max_sops(c, h, w, k, stride, pad, out_channels)),
    })
}

/// `S_{l+1} = LIF(TDBN(conv(S_l)) + S_l)` over a binary `[T, C, H, W]` input.
pub fn spiking_residual_block(s: ArrayView4Ref<'_>, w: &ResidualWeights, p: &LifParams) -> Result<Array4<f64>> {
    spiking_residual_block_recorded(s, w, p, None)
}

fn spiking_residual_block_recorded(
    s: ArrayView4Ref<'_>,
    w: &ResidualWeights,
    p: &LifParams,
    ledger: Option<(&mut EnergyLedger, &str)>,
) -> Result<Array4<f64>> {
    ensure!(is_binary(s.iter()), "residual block input must be binary");
    let (_, c, h, wd) = s.dim();
    if w.conv.dim() != (c, c, 3, 3) {
        return Err(Error::ShapeMismatch(format!(
            "residual conv is {:?}, expected {:?}",
            w.conv.dim(),
            (c, c, 3, 3)
        )));
    }
    let x = conv_over_time(s, &w.conv, 1, 1)?;
    let normed = tdbn(&tcwh(x)?, &w.gamma, &w.beta, TDBN_EPS)?.into_data();
    let pre = normed + &s.into_dyn();
    let out = lif_over_time(pre.view(), p)?;
    if let Some((ledger, name)) = ledger {
        ledger.record(conv_record(name, s, 3, 1, 1, c, c * h * wd)?);
    }
    Ok(out.into_dimensionality().expect("4-d"))
}

/// Spike normalization: `V_th = alpha·mean|x|`, fire where `x ≥ V_th`
/// and `x > 0`.
pub fn sn_threshold(x: ArrayViewD<'_, f64>, alpha_sn: f64) -> Result<(ArrayD<f64>, f64)> {
    ensure!(!x.is_empty(), "cannot threshold an empty array");
    ensure!(alpha_sn > 0.0, "alpha_sn must be positive");
    let v_th = alpha_sn * mean_abs(x.iter());
    Ok((fire_at(x, v_th), v_th))
}

fn mean_abs<'a>(values: impl ExactSizeIterator<Item = &'a f64>) -> f64 {
    let n = values.len() as f64;
    values.map(|v| v.abs()).sum::<f64>() / n
}

/// Heaviside at a fixed threshold, `x ≥ v_th` fires. Zero or negative
/// drive never fires, so an all-zero input (where `V_th = 0`) stays silent.
pub fn fire_at(x: ArrayViewD<'_, f64>, v_th: f64) -> ArrayD<f64> {
    x.mapv(|v| if v >= v_th && v > 0.0 { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdsaParams {
    pub alpha_sn: f64,
    /// Multiplier applied to the correlation map before normalization.
    pub scale: f64,
    /// Head dimension.
    pub dim: usize,
}

impl SdsaParams {
    pub fn new(dim: usize) -> Self {
        Self {
            alpha_sn: 1.0,
            scale: 1.0 / (dim.max(1) as f64).sqrt(),
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha_sn > 0.0, "alpha_sn must be positive");
        ensure!(self.scale > 0.0, "scale must be positive");
        ensure!(self.dim >= 1, "dim must be at least 1");
        Ok(())
    }
}

/// Q/K/V projections `[d, d_model]` and output projection `[d_model, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdsaWeights {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
}

impl SdsaWeights {
    pub fn init(init: &mut WeightInit, d_model: usize, d: usize) -> Self {
        let mut mat = |r: usize, c: usize| -> Array2<f64> { init.lecun(&[r, c], c).into_dimensionality().expect("2-d") };
        Self {
            wq: mat(d, d_model),
            bq: Array1::zeros(d),
            wk: mat(d, d_model),
            bk: Array1::zeros(d),
            wv: mat(d, d_model),
            bv: Array1::zeros(d),
            wo: mat(d_model, d),
            bo: Array1::zeros(d_model),
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

    fn load(a: &WeightArchive, name: &str, d_model: usize, d: usize) -> Result<Self> {
        Ok(Self {
            wq: a.get2(&format!("{name}.q.w"), d, d_model)?,
            bq: a.get1(&format!("{name}.q.b"), d)?,
            wk: a.get2(&format!("{name}.k.w"), d, d_model)?,
            bk: a.get1(&format!("{name}.k.b"), d)?,
            wv: a.get2(&format!("{name}.v.w"), d, d_model)?,
            bv: a.get1(&format!("{name}.v.b"), d)?,
            wo: a.get2(&format!("{name}.o.w"), d_model, d)?,
            bo: a.get1(&format!("{name}.o.b"), d_model)?,
        })
    }
}

/// Every intermediate of one attention call.
#[derive(Debug, Clone, PartialEq)]
pub struct SdsaOutput {
    pub out: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Binary attention map `[N, N]`.
    pub attn: Array2<f64>,
    /// Threshold applied to the unscaled correlation map.
    pub v_th_unscaled: f64,
}

/// Spike-driven self-attention over tokens `U: [N, d_model]`.
///
/// `Q, K, V = SN(linear(U))`; `C = Q Kᵀ / √d`. Thresholding `C ⊙ scale` at
/// `V_th = α·mean|C ⊙ scale|` equals thresholding `C` at `V_th / scale =
/// α·mean|C|`, which is what is evaluated, so the result does not depend on
/// rounding of the scaled map. Output is `linear(SN(C) · V)`.
pub fn esdsa_forward(
    u: ArrayView2<'_, f64>,
    params: &SdsaParams,
    w: &SdsaWeights,
    ledger: &mut EnergyLedger,
    prefix: &str,
) -> Result<SdsaOutput> {
    params.validate()?;
    let (n, d_model) = u.dim();
    ensure!(n >= 1, "need at least one token");
    if w.wq.dim() != (params.dim, d_model) {
        return Err(Error::ShapeMismatch(format!(
            "query projection is {:?}, tokens need {:?}",
            w.wq.dim(),
            (params.dim, d_model)
        )));
    }
    let d = params.dim;
    let project = |wm: &Array2<f64>, b: &Array1<f64>| -> Result<Array2<f64>> {
        let x = linear(u, wm.view(), Some(b.view()))?;
        let (s, _) = sn_threshold(x.view().into_dyn(), params.alpha_sn)?;
        Ok(s.into_dimensionality().expect("2-d"))
    };
    let q = project(&w.wq, &w.bq)?;
    let k = project(&w.wk, &w.bk)?;
    let v = project(&w.wv, &w.bv)?;

    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let corr = q.dot(&k.t()) * inv_sqrt_d;
    let v_th_unscaled = params.alpha_sn * mean_abs(corr.iter());
    let attn: Array2<f64> = fire_at(corr.view().into_dyn(), v_th_unscaled)
        .into_dimensionality()
        .expect("2-d");
    let av = attn.dot(&v);
    let out = linear(av.view(), w.wo.view(), Some(w.bo.view()))?;

    let input_events = nnz(u.iter());
    let (nu, d_model_u, du) = (n as u64, d_model as u64, d as u64);
    for tag in ["q", "k", "v"] {
        ledger.record(LayerRecord {
            layer_name: format!("{prefix}.{tag}"),
            spike_count: input_events,
            element_count: nu * d_model_u,
            fan_out: du,
            actual_sops: input_events * du,
            neuron_ops: nu * du,
            max_sops: Some(nu * d_model_u * du),
        });
    }
    let col_nnz = |m: &Array2<f64>, c: usize| nnz(m.column(c));
    let qk_sops: u64 = (0..d).map(|c| col_nnz(&q, c) * col_nnz(&k, c)).sum();
    ledger.record(LayerRecord {
        layer_name: format!("{prefix}.attn"),
        spike_count: nnz(q.iter()),
        element_count: nu * du,
        fan_out: nu,
        actual_sops: qk_sops,
        neuron_ops: nu * nu,
        max_sops: Some(nu * nu * du),
    });
    let av_sops: u64 = (0..n).map(|j| col_nnz(&attn, j) * nnz(v.row(j))).sum();
    ledger.record(LayerRecord {
        layer_name: format!("{prefix}.av"),
        spike_count: nnz(attn.iter()),
        element_count: nu * nu,
        fan_out: du,
        actual_sops: av_sops,
        neuron_ops: 0,
        max_sops: Some(nu * nu * du),
    });
    let av_events = nnz(av.iter());
    ledger.record(LayerRecord {
        layer_name: format!("{prefix}.out"),
        spike_count: av_events,
        element_count: nu * du,
        fan_out: d_model_u,
        actual_sops: av_events * d_model_u,
        neuron_ops: 0,
        max_sops: Some(nu * du * d_model_u),
    });

    Ok(SdsaOutput {
        out,
        q,
        k,
        v,
        attn,
        v_th_unscaled,
    })
}

/// Spiking video encoder: stream segments, a stride-2 spiking stem,
/// residual blocks, OR-pooling into tokens and one E-SDSA layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsveConfig {
    pub timesteps: usize,
    pub channels: usize,
    pub blocks: usize,
    /// OR-pooling window that turns feature maps into tokens.
    pub pool: usize,
    pub attn_dim: usize,
    pub alpha_sn: f64,
    pub lif: LifParams,
}

impl Default for FsveConfig {
    fn default() -> Self {
        Self {
            timesteps: 2,
            channels: 16,
            blocks: 2,
            pool: 4,
            attn_dim: 16,
            alpha_sn: 1.0,
            lif: LifParams::default(),
        }
    }
}

impl FsveConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.timesteps >= 1, "timesteps must be at least 1");
        ensure!(self.channels >= 1 && self.attn_dim >= 1, "widths must be positive");
        ensure!(self.pool >= 1, "pool window must be at least 1");
        ensure!(self.alpha_sn > 0.0, "alpha_sn must be positive");
        self.lif.validate()
    }

    fn sdsa(&self) -> SdsaParams {
        SdsaParams {
            alpha_sn: self.alpha_sn,
            ..SdsaParams::new(self.attn_dim)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsveWeights {
    pub stem: Array4<f64>,
    pub stem_gamma: Vec<f64>,
    pub stem_beta: Vec<f64>,
    pub blocks: Vec<ResidualWeights>,
    pub sdsa: SdsaWeights,
}

impl FsveWeights {
    pub fn init(cfg: &FsveConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = WeightInit::new(seed);
        let c = cfg.channels;
        let stem = init.he(&[c, 1, 3, 3], 9).into_dimensionality().expect("4-d");
        let blocks = (0..cfg.blocks)
            .map(|_| ResidualWeights {
                conv: init.he(&[c, c, 3, 3], 9 * c).into_dimensionality().expect("4-d"),
                gamma: vec![1.0; c],
                beta: vec![0.0; c],
            })
            .collect();
        Ok(Self {
            stem,
            stem_gamma: vec![1.0; c],
            stem_beta: vec![0.0; c],
            blocks,
            sdsa: SdsaWeights::init(&mut init, c, cfg.attn_dim),
        })
    }

    pub fn to_archive(&self, a: &mut WeightArchive) {
        let vec1 = |v: &[f64]| Array1::from(v.to_vec()).into_dyn();
        a.insert("fsve.stem.w", self.stem.clone().into_dyn());
        a.insert("fsve.stem.gamma", vec1(&self.stem_gamma));
        a.insert("fsve.stem.beta", vec1(&self.stem_beta));
        for (i, b) in self.blocks.iter().enumerate() {
            a.insert(format!("fsve.block{i}.w"), b.conv.clone().into_dyn());
            a.insert(format!("fsve.block{i}.gamma"), vec1(&b.gamma));
            a.insert(format!("fsve.block{i}.beta"), vec1(&b.beta));
        }
        self.sdsa.save(a, "fsve.sdsa");
    }

    pub fn from_archive(cfg: &FsveConfig, a: &WeightArchive) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let vec1 = |name: &str| -> Result<Vec<f64>> { Ok(a.get1(name, c)?.to_vec()) };
        let blocks = (0..cfg.blocks)
            .map(|i| {
                Ok(ResidualWeights {
                    conv: a.get4(&format!("fsve.block{i}.w"), [c, c, 3, 3])?,
                    gamma: vec1(&format!("fsve.block{i}.gamma"))?,
                    beta: vec1(&format!("fsve.block{i}.beta"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stem: a.get4("fsve.stem.w", [c, 1, 3, 3])?,
            stem_gamma: vec1("fsve.stem.gamma")?,
            stem_beta: vec1("fsve.stem.beta")?,
            blocks,
            sdsa: SdsaWeights::load(a, "fsve.sdsa", c, cfg.attn_dim)?,
        })
    }
}

/// Splits the stream into `timesteps` equal segments (trailing remainder
/// dropped) and ORs each segment into one binary frame: `[T, 1, H, W]`.
pub fn segment_frames(stream: &SpikeStream, timesteps: usize) -> Result<Array4<f64>> {
    ensure!(timesteps >= 1, "timesteps must be at least 1");
    if stream.t_len() < timesteps {
        return Err(Error::StreamTooShort {
            required: timesteps,
            actual: stream.t_len(),
        });
    }
    let seg = stream.t_len() / timesteps;
    let (h, w) = (stream.height(), stream.width());
    let mut out = Array4::zeros((timesteps, 1, h, w));
    for ti in 0..timesteps {
        for t in ti * seg..(ti + 1) * seg {
            for y in 0..h {
                for x in 0..w {
                    if stream.get(t, y, x) {
                        out[[ti, 0, y, x]] = 1.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// OR over non-overlapping `k × k` windows of a binary `[C, H, W]` map,
/// flattened row-major into tokens `[N, C]`.
pub fn or_pool_tokens(s: ArrayView3<'_, f64>, k: usize) -> Array2<f64> {
    let (c, h, w) = s.dim();
    let (gh, gw) = (h.div_ceil(k), w.div_ceil(k));
    let mut out = Array2::zeros((gh * gw, c));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if s[[ch, y, x]] != 0.0 {
                    out[[(y / k) * gw + x / k, ch]] = 1.0;
                }
            }
        }
    }
    out
}

/// Output of [`fsve_forward`]: attention output tokens per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FsveOutput {
    /// `[T, N, C]`.
    pub tokens: Array3<f64>,
    pub total_spikes: u64,
}

/// Runs the spiking encoder, recording every synaptic layer into `ledger`.
pub fn fsve_forward(
    stream: &SpikeStream,
    cfg: &FsveConfig,
    weights: &FsveWeights,
    ledger: &mut EnergyLedger,
) -> Result<FsveOutput> {
    fsve_forward_traced(stream, cfg, weights, ledger, &mut |_, _| {})
}

/// As [`fsve_forward`], handing every spike tensor to `observe` by name.
pub fn fsve_forward_traced(
    stream: &SpikeStream,
    cfg: &FsveConfig,
    weights: &FsveWeights,
    ledger: &mut EnergyLedger,
    observe: &mut dyn FnMut(&str, ArrayViewD<'_, f64>),
) -> Result<FsveOutput> {
    cfg.validate()?;
    let c = cfg.channels;
    let frames = segment_frames(stream, cfg.timesteps)?;
    observe("fsve.input", frames.view().into_dyn());
    let mut total_spikes = nnz(frames.iter());

    let (h, w) = (stream.height(), stream.width());
    let (h2, w2) = (conv_out_len(h, 3, 2, 1), conv_out_len(w, 3, 2, 1));
    let x = conv_over_time(frames.view(), &weights.stem, 2, 1)?;
    let normed = tdbn(&tcwh(x)?, &weights.stem_gamma, &weights.stem_beta, TDBN_EPS)?.into_data();
    let mut s: Array4<f64> = lif_over_time(normed.view(), &cfg.lif)?
        .into_dimensionality()
        .expect("4-d");
    ledger.record(conv_record("fsve.stem", frames.view(), 3, 2, 1, c, c * h2 * w2)?);
    observe("fsve.stem", s.view().into_dyn());
    total_spikes += nnz(s.iter());

    for (i, bw) in weights.blocks.iter().enumerate() {
        let name = format!("fsve.block{i}");
        s = spiking_residual_block_recorded(s.view(), bw, &cfg.lif, Some((ledger, &name)))?;
        observe(&name, s.view().into_dyn());
        total_spikes += nnz(s.iter());
    }

    let params = cfg.sdsa();
    let mut tokens = Vec::with_capacity(cfg.timesteps);
    for ti in 0..cfg.timesteps {
        let u = or_pool_tokens(s.index_axis(NdAxis(0), ti), cfg.pool);
        observe("fsve.tokens", u.view().into_dyn());
        let o = esdsa_forward(u.view(), &params, &weights.sdsa, ledger, "fsve.sdsa")?;
        for (tag, m) in [("fsve.sdsa.q", &o.q), ("fsve.sdsa.k", &o.k), ("fsve.sdsa.v", &o.v), ("fsve.sdsa.attn", &o.attn)] {
            observe(tag, m.view().into_dyn());
            total_spikes += nnz(m.iter());
        }
        tokens.push(o.out);
    }
    let (n, dm) = tokens[0].dim();
    let mut out = Array3::zeros((cfg.timesteps, n, dm));
    for (ti, t) in tokens.iter().enumerate() {
        out.slice_mut(s![ti, .., ..]).assign(t);
    }
    ledger.validate()?;
    Ok(FsveOutput {
        tokens: out,
        total_spikes,
    })
}
