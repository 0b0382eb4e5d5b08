//! Dense tensor helpers shared by the network modules.
//!
//! All arithmetic is `f64` and every reduction runs in a fixed order, so a
//! forward pass is bit-reproducible for a given input and weight set.

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2, ArrayView3, ArrayView4, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of one tensor axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Time,
    Batch,
    Channel,
    Height,
    Width,
}

/// A dense tensor whose axes carry explicit roles.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: ArrayD<f64>,
    axes: Vec<Axis>,
}

impl FeatureTensor {
    pub fn new(data: ArrayD<f64>, axes: Vec<Axis>) -> Result<Self> {
        if data.ndim() != axes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} axis roles for a {}-d array",
                axes.len(),
                data.ndim()
            )));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("axis role {a:?} repeated")));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("tensor holds non-finite values".into()));
        }
        Ok(Self { data, axes })
    }

    /// `[T, B, D]` sequence tensor.
    pub fn sequence(data: Array3<f64>) -> Result<Self> {
        Self::new(data.into_dyn(), vec![Axis::Time, Axis::Batch, Axis::Channel])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn axis_index(&self, role: Axis) -> Option<usize> {
        self.axes.iter().position(|&a| a == role)
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn into_data(self) -> ArrayD<f64> {
        self.data
    }

    /// Views the tensor as `[T, B, D]`, failing unless the axes are exactly
    /// time, batch, channel in that order.
    pub fn as_sequence(&self) -> Result<ArrayView3<'_, f64>> {
        if self.axes != [Axis::Time, Axis::Batch, Axis::Channel] {
            return Err(Error::ShapeMismatch(format!(
                "expected [time, batch, channel] axes, got {:?}",
                self.axes
            )));
        }
        self.data
            .view()
            .into_dimensionality()
            .map_err(|e| Error::ShapeMismatch(e.to_string()))
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax over one slice, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let slice = row.as_slice_mut().expect("standard layout");
        softmax_in_place(slice);
    }
    m
}

/// `x W^T + b` for `x: [N, in]`, `w: [out, in]`, `b: [out]`.
pub fn linear(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, b: Option<ArrayView1<'_, f64>>) -> Result<Array2<f64>> {
    if x.ncols() != w.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "linear layer expects {} inputs, got {}",
            w.ncols(),
            x.ncols()
        )));
    }
    let (n, out_dim) = (x.nrows(), w.nrows());
    let mut y = Array2::zeros((n, out_dim));
    for i in 0..n {
        let xi = x.row(i);
        for o in 0..out_dim {
            let wo = w.row(o);
            let mut acc = 0.0;
            for k in 0..xi.len() {
                acc += xi[k] * wo[k];
            }
            y[[i, o]] = acc;
        }
    }
    if let Some(b) = b {
        if b.len() != out_dim {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} entries for {out_dim} outputs",
                b.len()
            )));
        }
        y += &b;
    }
    Ok(y)
}

/// Output size of a convolution along one spatial axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

/// 2-D cross-correlation of `input: [C, H, W]` with `weight: [O, C, k, k]`.
///
/// Sparse inputs (spike frames) take a scatter path that only visits
/// non-zero activations; dense inputs use the gather loop. Both accumulate
/// into zero-initialised outputs and add the bias last.
pub fn conv2d(
    input: ArrayView3<'_, f64>,
    weight: ArrayView4<'_, f64>,
    bias: Option<ArrayView1<'_, f64>>,
    stride: usize,
    pad: usize,
) -> Result<Array3<f64>> {
    let (c_in, h, w) = input.dim();
    let (c_out, wc, kh, kw) = weight.dim();
    if wc != c_in {
        return Err(Error::ShapeMismatch(format!(
            "convolution expects {wc} input channels, got {c_in}"
        )));
    }
    if kh != kw {
        return Err(Error::ShapeMismatch("only square kernels are supported".into()));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("convolution stride must be positive".into()));
    }
    let k = kh;
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::ShapeMismatch(format!(
            "{h}x{w} input too small for a {k}x{k} kernel"
        )));
    }
    let oh = conv_out_len(h, k, stride, pad);
    let ow = conv_out_len(w, k, stride, pad);

    let input = input.as_standard_layout();
    let weight = weight.as_standard_layout();
    let inp = input.as_slice().expect("standard layout");
    let wts = weight.as_slice().expect("standard layout");
    let mut out = vec![0.0f64; c_out * oh * ow];

    let nnz = inp.iter().filter(|&&v| v != 0.0).count();
    if nnz * 4 < inp.len() {
        let kk = k * k;
        for c in 0..c_in {
            for iy in 0..h {
                for ix in 0..w {
                    let v = inp[(c * h + iy) * w + ix];
                    if v == 0.0 {
                        continue;
                    }
                    for ky in 0..k {
                        let ny = iy + pad;
                        if ny < ky || (ny - ky) % stride != 0 {
                            continue;
                        }
                        let oy = (ny - ky) / stride;
                        if oy >= oh {
                            continue;
                        }
                        for kx in 0..k {
                            let nx = ix + pad;
                            if nx < kx || (nx - kx) % stride != 0 {
                                continue;
                            }
                            let ox = (nx - kx) / stride;
                            if ox >= ow {
                                continue;
                            }
                            let base = (c * k + ky) * k + kx;
                            for o in 0..c_out {
                                out[(o * oh + oy) * ow + ox] += v * wts[o * c_in * kk + base];
                            }
                        }
                    }
                }
            }
        }
    } else {
        for o in 0..c_out {
            let out_o = &mut out[o * oh * ow..(o + 1) * oh * ow];
            for c in 0..c_in {
                let in_c = &inp[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wts[((o * c_in + c) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &in_c[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut out_o[oy * ow..(oy + 1) * ow];
                            for (ox, o_v) in orow.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    *o_v += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let mut out = Array3::from_shape_vec((c_out, oh, ow), out).expect("shape");
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} entries for {c_out} channels",
                b.len()
            )));
        }
        for (mut ch, &bv) in out.axis_iter_mut(NdAxis(0)).zip(b.iter()) {
            ch += bv;
        }
    }
    Ok(out)
}

/// Arithmetic mean over the leading axis, summed strictly first to last.
pub fn mean_axis0(x: ArrayView2<'_, f64>) -> Array1<f64> {
    let n = x.nrows();
    let mut acc = Array1::zeros(x.ncols());
    for row in x.rows() {
        acc += &row;
    }
    acc / n as f64
}
