//! Texture-from-interval (TFI) reconstruction.
//!
//! For every pixel the spike at or before `t` and the first spike after
//! `t` are located within `delta_t_max` steps; their separation is the
//! inter-spike interval and the pixel value is `min(1, theta / isi)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::camera::IntensityVideo;
use crate::error::{ensure, Error, Result};
use crate::stream::SpikeStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfiConfig {
    /// Search bound on either side of the target step.
    pub delta_t_max: usize,
    pub theta: f64,
    /// Output for pixels without a complete interval in the window.
    pub default_value: f64,
}

impl Default for TfiConfig {
    fn default() -> Self {
        Self {
            delta_t_max: 32,
            theta: 5.0,
            default_value: 0.0,
        }
    }
}

impl TfiConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.delta_t_max >= 1, "delta_t_max must be at least 1");
        ensure!(
            self.theta > 0.0 && self.theta.is_finite(),
            "theta must be positive, got {}",
            self.theta
        );
        ensure!(
            (0.0..=1.0).contains(&self.default_value),
            "default_value must lie in [0, 1], got {}",
            self.default_value
        );
        Ok(())
    }
}

/// Interval (in steps) bracketing `t` at pixel `(y, x)`, if both ends exist.
///
/// The left end is the latest spike at `s <= t` with `t - s <= dt_max`, the
/// right end the earliest spike at `s > t` with `s - t <= dt_max`.
pub fn bracketing_interval(
    stream: &SpikeStream,
    t: usize,
    y: usize,
    x: usize,
    dt_max: usize,
) -> Option<usize> {
    let lo = t.saturating_sub(dt_max);
    let left = (lo..=t).rev().find(|&s| stream.get(s, y, x))?;
    let hi = (t + dt_max).min(stream.t_len() - 1);
    let right = (t + 1..=hi).find(|&s| stream.get(s, y, x))?;
    Some(right - left)
}

/// Maps an interval to brightness: shorter intervals are brighter.
#[inline]
pub fn interval_intensity(isi: usize, theta: f64) -> f64 {
    (theta / isi as f64).min(1.0)
}

/// Reconstructs the grayscale frame at time step `t`.
pub fn tfi_reconstruct(stream: &SpikeStream, t: usize, cfg: &TfiConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if t >= stream.t_len() {
        return Err(Error::OutOfRange(format!(
            "time step {t} of a {}-step stream",
            stream.t_len()
        )));
    }
    Ok(Array2::from_shape_fn(
        (stream.height(), stream.width()),
        |(y, x)| match bracketing_interval(stream, t, y, x, cfg.delta_t_max) {
            Some(isi) => interval_intensity(isi, cfg.theta),
            None => cfg.default_value,
        },
    ))
}

/// Applies [`tfi_reconstruct`] at `t = 0, stride, 2*stride, ...`.
pub fn tfi_video(stream: &SpikeStream, stride: usize, cfg: &TfiConfig) -> Result<IntensityVideo> {
    ensure!(stride >= 1, "stride must be at least 1");
    let frames = (0..stream.t_len())
        .step_by(stride)
        .map(|t| tfi_reconstruct(stream, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    IntensityVideo::new(frames)
}
