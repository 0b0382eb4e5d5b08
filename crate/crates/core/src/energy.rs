//! Synaptic-operation accounting and energy estimates.
//!
//! One SOP is one accumulation caused by one input event reaching one
//! output. Neuron ops are one membrane update per neuron per time step.
//! Spiking execution costs `SOPs × 4.6 pJ + neuron ops × 0.9 pJ`; the dense
//! baseline costs `max SOPs × 4.6 pJ`.
//!
//! Energies are computed from integer counts in tenths of a picojoule and
//! converted with a single division, so results are correctly rounded.

use std::fmt;

use ndarray::{Array2, ArrayView3, ArrayViewD};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::conv_out_len;

/// Energy per synaptic operation, joules.
pub const E_SOP: f64 = 4.6e-12;
/// Energy per neuron update, joules.
pub const E_NEURON: f64 = 0.9e-12;

const SOP_DECI_PJ: u128 = 46;
const NEURON_DECI_PJ: u128 = 9;
const DECI_PJ_PER_JOULE: f64 = 1e13;

/// Counts for one layer. `max_sops` is the dense multiply-accumulate count
/// of the same layer shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer_name: String,
    /// Non-zero input events seen by the layer.
    pub spike_count: u64,
    /// Input elements, zero or not.
    pub element_count: u64,
    /// Outputs reached per input event (interior value for convolutions).
    pub fan_out: u64,
    pub actual_sops: u64,
    pub neuron_ops: u64,
    #[serde(default)]
    pub max_sops: Option<u64>,
}

impl LayerRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(max) = self.max_sops {
            if self.actual_sops > max {
                return Err(Error::Invariant(format!(
                    "layer `{}`: actual SOPs {} exceed max SOPs {max}",
                    self.layer_name, self.actual_sops
                )));
            }
        }
        if self.spike_count > self.element_count {
            return Err(Error::Invariant(format!(
                "layer `{}`: {} spikes among {} elements",
                self.layer_name, self.spike_count, self.element_count
            )));
        }
        Ok(())
    }

    /// `1 - spike_count / element_count`; 1 for a layer with no inputs.
    pub fn sparsity(&self) -> f64 {
        if self.element_count == 0 {
            1.0
        } else {
            1.0 - self.spike_count as f64 / self.element_count as f64
        }
    }

    fn absorb(&mut self, other: &LayerRecord) {
        self.spike_count += other.spike_count;
        self.element_count += other.element_count;
        self.fan_out = self.fan_out.max(other.fan_out);
        self.actual_sops += other.actual_sops;
        self.neuron_ops += other.neuron_ops;
        self.max_sops = match (self.max_sops, other.max_sops) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
    }
}

/// Per-run list of layer records, serialized as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnergyLedger {
    records: Vec<LayerRecord>,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record, summing into an existing record of the same name.
    pub fn record(&mut self, rec: LayerRecord) {
        match self.records.iter_mut().find(|r| r.layer_name == rec.layer_name) {
            Some(existing) => existing.absorb(&rec),
            None => self.records.push(rec),
        }
    }

    /// Sums `other` into `self` layer by layer. Associative; layers keep
    /// their first-appearance order.
    pub fn merge(mut self, other: &EnergyLedger) -> Self {
        for r in &other.records {
            self.record(r.clone());
        }
        self
    }

    /// A single aggregate record, for working from published totals.
    pub fn from_totals(actual_sops: u64, neuron_ops: u64, max_sops: Option<u64>) -> Self {
        let mut l = Self::new();
        l.record(LayerRecord {
            layer_name: "total".into(),
            spike_count: 0,
            element_count: 0,
            fan_out: 0,
            actual_sops,
            neuron_ops,
            max_sops,
        });
        l
    }

    pub fn records(&self) -> &[LayerRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.records.iter().try_for_each(LayerRecord::validate)
    }

    pub fn total_actual_sops(&self) -> u64 {
        self.records.iter().map(|r| r.actual_sops).sum()
    }

    pub fn total_neuron_ops(&self) -> u64 {
        self.records.iter().map(|r| r.neuron_ops).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let l: Self = serde_json::from_str(text)?;
        l.validate()?;
        Ok(l)
    }
}

fn deci_pj_to_joules(deci_pj: u128) -> f64 {
    deci_pj as f64 / DECI_PJ_PER_JOULE
}

/// `Σ actual_sops × 4.6 pJ + neuron_ops × 0.9 pJ`.
pub fn estimate_snn_energy(ledger: &EnergyLedger) -> f64 {
    let total: u128 = ledger
        .records
        .iter()
        .map(|r| r.actual_sops as u128 * SOP_DECI_PJ + r.neuron_ops as u128 * NEURON_DECI_PJ)
        .sum();
    deci_pj_to_joules(total)
}

/// Energy of neuron updates alone: the spiking cost when no spike occurs.
pub fn neuron_floor_energy(ledger: &EnergyLedger) -> f64 {
    let total: u128 = ledger
        .records
        .iter()
        .map(|r| r.neuron_ops as u128 * NEURON_DECI_PJ)
        .sum();
    deci_pj_to_joules(total)
}

/// `Σ max_sops × 4.6 pJ`. Fails when any layer lacks `max_sops`.
pub fn estimate_ann_energy(ledger: &EnergyLedger) -> Result<f64> {
    let mut total: u128 = 0;
    for r in &ledger.records {
        let max = r.max_sops.ok_or_else(|| {
            Error::InvalidArgument(format!("layer `{}` has no max_sops", r.layer_name))
        })?;
        total += max as u128 * SOP_DECI_PJ;
    }
    Ok(deci_pj_to_joules(total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer_name: String,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_snn: f64,
    pub e_ann: f64,
    pub reduction_pct: f64,
    pub layers: Vec<LayerSparsity>,
}

/// `100 · (1 − e_snn / e_ann)`.
pub fn reduction_pct(e_snn: f64, e_ann: f64) -> Result<f64> {
    ensure!(e_ann > 0.0, "dense baseline energy must be positive, got {e_ann}");
    ensure!(e_snn >= 0.0, "spiking energy must be non-negative, got {e_snn}");
    Ok(100.0 * (1.0 - e_snn / e_ann))
}

/// Compares two ledgers covering the same layers (in the same order).
pub fn energy_report(snn: &EnergyLedger, ann: &EnergyLedger) -> Result<EnergyReport> {
    snn.validate()?;
    ann.validate()?;
    let names = |l: &EnergyLedger| l.records.iter().map(|r| r.layer_name.clone()).collect::<Vec<_>>();
    if names(snn) != names(ann) {
        return Err(Error::InvalidArgument(format!(
            "ledgers cover different layers: {:?} vs {:?}",
            names(snn),
            names(ann)
        )));
    }
    let e_snn = estimate_snn_energy(snn);
    let e_ann = estimate_ann_energy(ann)?;
    Ok(EnergyReport {
        e_snn,
        e_ann,
        reduction_pct: reduction_pct(e_snn, e_ann)?,
        layers: snn
            .records
            .iter()
            .map(|r| LayerSparsity {
                layer_name: r.layer_name.clone(),
                sparsity: r.sparsity(),
            })
            .collect(),
    })
}

/// Report built from published joule totals, without per-layer detail.
pub fn report_from_totals(e_snn: f64, e_ann: f64) -> Result<EnergyReport> {
    Ok(EnergyReport {
        e_snn,
        e_ann,
        reduction_pct: reduction_pct(e_snn, e_ann)?,
        layers: Vec::new(),
    })
}

/// Formats `x` with three significant digits.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.2e}");
    }
    let decimals = (2 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

impl fmt::Display for EnergyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>12}", "model", "energy (J)")?;
        writeln!(f, "{:<24} {:>12}", "dense baseline", sig3(self.e_ann))?;
        writeln!(
            f,
            "{:<24} {:>12} ({}%)",
            "spiking",
            sig3(self.e_snn),
            sig3(-self.reduction_pct)
        )?;
        if !self.layers.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<24} {:>12}", "layer", "sparsity")?;
            for l in &self.layers {
                writeln!(f, "{:<24} {:>12.4}", l.layer_name, l.sparsity)?;
            }
        }
        Ok(())
    }
}

fn check_binary(spikes: impl IntoIterator<Item = f64>) -> Result<u64> {
    let mut n = 0u64;
    for v in spikes {
        if v == 1.0 {
            n += 1;
        } else if v != 0.0 {
            return Err(Error::InvalidArgument(format!("non-binary spike value {v}")));
        }
    }
    Ok(n)
}

/// `(number of ones) × fan_out`. Rejects non-binary input.
pub fn count_sops(spikes: ArrayViewD<'_, f64>, fan_out: u64) -> Result<u64> {
    Ok(check_binary(spikes.iter().copied())? * fan_out)
}

/// Interior fan-out of a convolution: kernel area times output channels.
pub fn conv_fan_out(kernel: usize, out_channels: usize) -> u64 {
    (kernel * kernel * out_channels) as u64
}

/// For each input position, how many (output position, kernel tap) pairs
/// read it. Interior positions of a stride-1 convolution reach `k²`.
pub fn conv_reach_map(height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Array2<u64> {
    let axis = |len: usize| -> Vec<u64> {
        let out = conv_out_len(len, kernel, stride, pad);
        let mut reach = vec![0u64; len];
        for o in 0..out {
            for k in 0..kernel {
                let i = (o * stride + k) as isize - pad as isize;
                if i >= 0 && (i as usize) < len {
                    reach[i as usize] += 1;
                }
            }
        }
        reach
    };
    let ry = axis(height);
    let rx = axis(width);
    Array2::from_shape_fn((height, width), |(y, x)| ry[y] * rx[x])
}

/// Exact SOPs of a convolution over binary `[C, H, W]` input, counting
/// border positions with their true reach.
pub fn count_conv_sops_exact(
    spikes: ArrayView3<'_, f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_channels: usize,
) -> Result<u64> {
    let (_, h, w) = spikes.dim();
    let reach = conv_reach_map(h, w, kernel, stride, pad);
    let mut total = 0u64;
    for ch in spikes.outer_iter() {
        for ((y, x), &v) in ch.indexed_iter() {
            if v == 1.0 {
                total += reach[[y, x]];
            } else if v != 0.0 {
                return Err(Error::InvalidArgument(format!("non-binary spike value {v}")));
            }
        }
    }
    Ok(total * out_channels as u64)
}

/// Dense MAC count of the same convolution: every input element counted.
pub fn conv_max_sops(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize, out_channels: usize) -> u64 {
    conv_reach_map(height, width, kernel, stride, pad).sum() * (channels * out_channels) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(name: &str, sops: u64, neurons: u64, max: Option<u64>) -> LayerRecord {
        LayerRecord {
            layer_name: name.into(),
            spike_count: 0,
            element_count: 0,
            fan_out: 0,
            actual_sops: sops,
            neuron_ops: neurons,
            max_sops: max,
        }
    }

    #[test]
    fn snn_energy_of_round_totals() {
        let l = EnergyLedger::from_totals(1_000_000_000, 100_000_000, None);
        assert_eq!(estimate_snn_energy(&l), 4.69e-3);
        assert_eq!(estimate_snn_energy(&EnergyLedger::new()), 0.0);
        assert_eq!(estimate_ann_energy(&EnergyLedger::new()).unwrap(), 0.0);
    }

    #[test]
    fn ann_energy_of_dense_layer() {
        let max = 64 * 64 * 100;
        assert_eq!(max, 409_600);
        let l = EnergyLedger::from_totals(0, 0, Some(max));
        let e = estimate_ann_energy(&l).unwrap();
        assert!((e - 1.884e-6).abs() < 1e-9);
        assert!(estimate_ann_energy(&EnergyLedger::from_totals(0, 0, None)).is_err());
        let implied = 1.469 / E_SOP;
        assert!((implied - 3.193e11).abs() / 3.193e11 < 1e-3);
    }

    #[test]
    fn report_on_published_totals() {
        let r = report_from_totals(0.356, 1.469).unwrap();
        assert!((r.reduction_pct - 75.77).abs() < 0.01);
        assert_eq!(report_from_totals(1.0, 1.0).unwrap().reduction_pct, 0.0);
        assert!(report_from_totals(1.0, 0.0).is_err());
    }

    #[test]
    fn two_layer_sum_matches_hand_total() {
        let mut l = EnergyLedger::new();
        l.record(rec("a", 1200, 300, Some(5000)));
        l.record(rec("b", 40, 7, Some(90)));
        let hand = 1200.0 * 4.6e-12 + 300.0 * 0.9e-12 + 40.0 * 4.6e-12 + 7.0 * 0.9e-12;
        assert!((estimate_snn_energy(&l) - hand).abs() <= 1e-12 * hand);
        let e_ann = estimate_ann_energy(&l).unwrap();
        assert!(estimate_snn_energy(&l) <= e_ann + neuron_floor_energy(&l));
    }

    #[test]
    fn zero_spikes_leave_neuron_floor() {
        let mut l = EnergyLedger::new();
        l.record(rec("a", 0, 12345, Some(10)));
        l.record(rec("b", 0, 678, Some(10)));
        assert_eq!(estimate_snn_energy(&l), neuron_floor_energy(&l));
    }

    #[test]
    fn merge_is_associative_and_sums_by_name() {
        let mk = |s: u64| {
            let mut l = EnergyLedger::new();
            l.record(rec("x", s, 1, Some(100)));
            l.record(rec(&format!("y{}", s % 2), 2 * s, 3, Some(100)));
            l
        };
        let (a, b, c) = (mk(1), mk(2), mk(3));
        let left = a.clone().merge(&b).merge(&c);
        let right = a.merge(&b.merge(&c));
        assert_eq!(left, right);
        assert_eq!(left.records()[0].actual_sops, 6);
        assert_eq!(left.records()[0].max_sops, Some(300));
    }

    #[test]
    fn mismatched_layers_rejected() {
        let mut a = EnergyLedger::new();
        a.record(rec("a", 0, 0, Some(1)));
        let mut b = EnergyLedger::new();
        b.record(rec("b", 0, 0, Some(1)));
        assert!(energy_report(&a, &b).is_err());
        let bad = EnergyLedger::from_totals(5, 0, Some(4));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn count_sops_basics() {
        let zeros = ArrayD::<f64>::zeros(IxDyn(&[3, 4]));
        assert_eq!(count_sops(zeros.view(), 9).unwrap(), 0);
        let mut ten = ArrayD::<f64>::zeros(IxDyn(&[20]));
        ten.slice_mut(ndarray::s![..10]).fill(1.0);
        assert_eq!(count_sops(ten.view(), 9).unwrap(), 90);
        ten[[0]] = 0.5;
        assert!(count_sops(ten.view(), 9).is_err());
    }

    #[test]
    fn exact_conv_count_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(k, stride, pad) in &[(3usize, 1usize, 1usize), (3, 2, 1), (1, 1, 0), (5, 2, 2)] {
            let (c, h, w, oc) = (2, 9, 7, 3);
            let x = Array3::from_shape_fn((c, h, w), |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
            let (oh, ow) = (conv_out_len(h, k, stride, pad), conv_out_len(w, k, stride, pad));
            let mut brute = 0u64;
            for _o in 0..oc {
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let y = (oy * stride + ky) as isize - pad as isize;
                                    let xx = (ox * stride + kx) as isize - pad as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w && x[[ch, y as usize, xx as usize]] == 1.0 {
                                        brute += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            assert_eq!(count_conv_sops_exact(x.view(), k, stride, pad, oc).unwrap(), brute);
            let dense = Array3::from_elem((c, h, w), 1.0);
            assert_eq!(
                count_conv_sops_exact(dense.view(), k, stride, pad, oc).unwrap(),
                conv_max_sops(c, h, w, k, stride, pad, oc)
            );
        }
        assert_eq!(conv_reach_map(5, 5, 3, 1, 1)[[2, 2]], conv_fan_out(3, 1));
    }

    #[test]
    fn sig3_formats() {
        assert_eq!(sig3(0.356), "0.356");
        assert_eq!(sig3(1.469), "1.47");
        assert_eq!(sig3(75.766), "75.8");
        assert_eq!(sig3(4.69e-3), "0.00469");
    }

    #[test]
    fn ledger_json_is_array() {
        let l = EnergyLedger::from_totals(3, 4, Some(5));
        let text = l.to_json().unwrap();
        assert!(text.trim_start().starts_with('['));
        assert_eq!(EnergyLedger::from_json(&text).unwrap(), l);
    }
}
