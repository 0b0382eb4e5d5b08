//! Spike streams and the headerless `.dat` codec.
//!
//! A stream is a binary tensor `S(t, y, x)`. On disk it is a continuous
//! bitstream in `(t, y, x)` order with `x` fastest, eight spikes per byte,
//! most significant bit first, and a single zero-padded tail byte. The file
//! carries no header; dimensions travel in a [`StreamMeta`] sidecar.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Number of bytes needed to hold `elements` packed spikes.
pub fn packed_len(elements: usize) -> usize {
    elements.div_ceil(8)
}

/// Binary spatiotemporal event tensor, stored bit-packed.
///
/// Padding bits past the last element are always zero, so two streams with
/// equal dimensions compare equal exactly when their spikes agree.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SpikeStream {
    t_len: usize,
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl fmt::Debug for SpikeStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpikeStream")
            .field("t_len", &self.t_len)
            .field("height", &self.height)
            .field("width", &self.width)
            .field("spikes", &self.count_spikes())
            .finish()
    }
}

fn check_dims(t_len: usize, height: usize, width: usize) -> Result<usize> {
    ensure!(
        t_len >= 1 && height >= 1 && width >= 1,
        "stream dimensions must be positive, got {t_len}x{height}x{width}"
    );
    t_len
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::InvalidArgument("stream dimensions overflow".into()))
}

impl SpikeStream {
    pub fn zeros(t_len: usize, height: usize, width: usize) -> Result<Self> {
        let n = check_dims(t_len, height, width)?;
        Ok(Self {
            t_len,
            height,
            width,
            bits: vec![0; packed_len(n)],
        })
    }

    /// Builds a stream by evaluating `f(t, y, x)` for every element.
    pub fn from_fn(
        t_len: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let mut s = Self::zeros(t_len, height, width)?;
        let mut i = 0;
        for t in 0..t_len {
            for y in 0..height {
                for x in 0..width {
                    if f(t, y, x) {
                        s.bits[i >> 3] |= 0x80 >> (i & 7);
                    }
                    i += 1;
                }
            }
        }
        Ok(s)
    }

    /// Builds a stream from a dense `(t, y, x)`-ordered slice of 0/1 values.
    pub fn from_dense(t_len: usize, height: usize, width: usize, values: &[u8]) -> Result<Self> {
        let n = check_dims(t_len, height, width)?;
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "dense buffer has {} elements, dimensions need {n}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("non-binary spike value {v}")));
        }
        let mut s = Self::zeros(t_len, height, width)?;
        for (i, &v) in values.iter().enumerate() {
            if v == 1 {
                s.bits[i >> 3] |= 0x80 >> (i & 7);
            }
        }
        Ok(s)
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.t_len * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    fn index(&self, t: usize, y: usize, x: usize) -> usize {
        debug_assert!(t < self.t_len && y < self.height && x < self.width);
        (t * self.height + y) * self.width + x
    }

    #[inline]
    fn bit(&self, i: usize) -> bool {
        self.bits[i >> 3] & (0x80 >> (i & 7)) != 0
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.bit(self.index(t, y, x))
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, value: bool) {
        let i = self.index(t, y, x);
        if value {
            self.bits[i >> 3] |= 0x80 >> (i & 7);
        } else {
            self.bits[i >> 3] &= !(0x80 >> (i & 7));
        }
    }

    pub fn count_spikes(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// One `H x W` frame as 0/1 bytes.
    pub fn frame(&self, t: usize) -> Array2<u8> {
        let base = t * self.frame_len();
        Array2::from_shape_fn((self.height, self.width), |(y, x)| {
            self.bit(base + y * self.width + x) as u8
        })
    }

    /// Time steps `[start, end)` as a dense `[T, H, W]` array of 0.0/1.0.
    pub fn dense_range(&self, start: usize, end: usize) -> Array3<f64> {
        assert!(start <= end && end <= self.t_len, "time range out of bounds");
        let fl = self.frame_len();
        Array3::from_shape_fn((end - start, self.height, self.width), |(t, y, x)| {
            if self.bit((start + t) * fl + y * self.width + x) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Spike times (ascending) of the pixel at `(y, x)`.
    pub fn pixel_spike_times(&self, y: usize, x: usize) -> Vec<usize> {
        (0..self.t_len).filter(|&t| self.get(t, y, x)).collect()
    }

    /// Copies the frames at `indices` (in the given order) into a new stream.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let fl = self.frame_len();
        let mut out = Self::zeros(indices.len(), self.height, self.width)?;
        for (dst_t, &src_t) in indices.iter().enumerate() {
            if src_t >= self.t_len {
                return Err(Error::OutOfRange(format!(
                    "frame {src_t} of a {}-step stream",
                    self.t_len
                )));
            }
            for j in 0..fl {
                if self.bit(src_t * fl + j) {
                    let i = dst_t * fl + j;
                    out.bits[i >> 3] |= 0x80 >> (i & 7);
                }
            }
        }
        Ok(out)
    }

    /// Metadata describing this stream for the given encoder threshold.
    pub fn meta(&self, threshold_theta: f64) -> StreamMeta {
        StreamMeta {
            height: self.height,
            width: self.width,
            t_len: self.t_len,
            threshold_theta,
            tick_seconds: None,
        }
    }
}

/// Sidecar metadata for a headerless `.dat` stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub height: usize,
    pub width: usize,
    pub t_len: usize,
    pub threshold_theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_seconds: Option<f64>,
}

impl StreamMeta {
    pub fn validate(&self) -> Result<()> {
        check_dims(self.t_len, self.height, self.width)?;
        ensure!(
            self.threshold_theta > 0.0 && self.threshold_theta.is_finite(),
            "threshold_theta must be positive, got {}",
            self.threshold_theta
        );
        if let Some(tick) = self.tick_seconds {
            ensure!(tick > 0.0, "tick_seconds must be positive, got {tick}");
        }
        Ok(())
    }

    pub fn packed_len(&self) -> usize {
        packed_len(self.t_len * self.height * self.width)
    }

    fn check_matches(&self, stream: &SpikeStream) -> Result<()> {
        if (self.t_len, self.height, self.width) != (stream.t_len, stream.height, stream.width) {
            return Err(Error::ShapeMismatch(format!(
                "meta says {}x{}x{}, stream is {}x{}x{}",
                self.t_len, self.height, self.width, stream.t_len, stream.height, stream.width
            )));
        }
        Ok(())
    }
}

/// Serializes a stream into its packed bitstream.
pub fn pack_spikes(stream: &SpikeStream) -> Vec<u8> {
    stream.bits.clone()
}

/// Inverse of [`pack_spikes`]. Padding bits in the tail byte are discarded.
pub fn unpack_spikes(bytes: &[u8], meta: &StreamMeta) -> Result<SpikeStream> {
    meta.validate()?;
    let expected = meta.packed_len();
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let mut bits = bytes.to_vec();
    let tail = (meta.t_len * meta.height * meta.width) % 8;
    if tail != 0 {
        if let Some(last) = bits.last_mut() {
            *last &= !(0xFFu8 >> tail);
        }
    }
    Ok(SpikeStream {
        t_len: meta.t_len,
        height: meta.height,
        width: meta.width,
        bits,
    })
}

/// Path of the `.meta.json` sidecar sharing `dat`'s basename.
pub fn meta_sidecar_path(dat: &Path) -> PathBuf {
    dat.with_extension("meta.json")
}

pub fn write_meta(meta: &StreamMeta, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_meta(path: &Path) -> Result<StreamMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: StreamMeta = serde_json::from_str(&text)?;
    meta.validate()?;
    Ok(meta)
}

/// Writes the packed body of `stream` to `path`. The file holds exactly
/// [`pack_spikes`] output and nothing else.
pub fn write_dat(stream: &SpikeStream, meta: &StreamMeta, path: &Path) -> Result<()> {
    meta.validate()?;
    meta.check_matches(stream)?;
    fs::write(path, pack_spikes(stream)).map_err(|e| Error::io(path, e))
}

/// Writes the `.dat` body and its `.meta.json` sidecar.
pub fn write_dat_with_meta(stream: &SpikeStream, meta: &StreamMeta, path: &Path) -> Result<()> {
    write_dat(stream, meta, path)?;
    write_meta(meta, &meta_sidecar_path(path))
}

pub fn read_dat(path: &Path, meta: &StreamMeta) -> Result<SpikeStream> {
    meta.validate()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    unpack_spikes(&bytes, meta)
}

/// Clip window length and stride, both in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipWindowSpec {
    pub window_len: usize,
    pub stride: usize,
}

impl Default for ClipWindowSpec {
    fn default() -> Self {
        Self {
            window_len: 800,
            stride: 200,
        }
    }
}

impl ClipWindowSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.window_len >= 1, "window_len must be at least 1");
        ensure!(self.stride >= 1, "stride must be at least 1");
        Ok(())
    }

    /// Start frames of every full window over a stream of `t_len` steps.
    pub fn starts(&self, t_len: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if t_len < self.window_len {
            return Err(Error::StreamTooShort {
                required: self.window_len,
                actual: t_len,
            });
        }
        let n = (t_len - self.window_len) / self.stride + 1;
        Ok((0..n).map(|k| k * self.stride).collect())
    }
}

/// Cuts `stream` into overlapping windows `[k*stride, k*stride + window_len)`.
pub fn slice_clips(stream: &SpikeStream, spec: &ClipWindowSpec) -> Result<Vec<SpikeStream>> {
    spec.starts(stream.t_len)?
        .into_iter()
        .map(|start| {
            let idx: Vec<usize> = (start..start + spec.window_len).collect();
            stream.select_frames(&idx)
        })
        .collect()
}

/// Frame indices `floor(i * T / target_len)` for `i in 0..target_len`.
pub fn subsample_indices(t_len: usize, target_len: usize) -> Result<Vec<usize>> {
    ensure!(target_len >= 1, "target length must be at least 1");
    ensure!(
        target_len <= t_len,
        "target length {target_len} exceeds stream length {t_len}"
    );
    Ok((0..target_len).map(|i| i * t_len / target_len).collect())
}

/// Uniform frame selection down to `target_len` frames.
pub fn subsample_temporal(stream: &SpikeStream, target_len: usize) -> Result<SpikeStream> {
    stream.select_frames(&subsample_indices(stream.t_len, target_len)?)
}
