//! Spike camera models.
//!
//! Two views of the same integrate-and-fire sensor live here:
//!
//! * [`simulate_pixel`] integrates `alpha * I(t)` in continuous time with a
//!   fine step and polls a one-bit spike flag every `tick` seconds. Charge
//!   is reduced by `theta` on every crossing, so the residual is the
//!   accumulated charge modulo `theta`.
//! * [`encode_video`] is the frame-synchronous encoder: each frame adds its
//!   normalized intensity to a per-pixel potential and a spike is emitted
//!   (with `theta` subtracted) whenever the potential reaches `theta`.

use ndarray::{Array2, ArrayView3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::stream::SpikeStream;

/// Relative slack on threshold comparisons. Intensities such as 0.6 are not
/// representable in binary floating point, so a potential that is exactly
/// `k * theta` in real arithmetic can land a few ulps below it.
pub const FIRE_TOLERANCE: f64 = 1e-9;

#[inline]
fn reaches(potential: f64, theta: f64) -> bool {
    potential >= theta * (1.0 - FIRE_TOLERANCE)
}

/// Continuous-time pixel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelModel {
    /// Photoelectric conversion rate (charge per unit intensity per second).
    pub alpha: f64,
    /// Firing threshold in charge units.
    pub theta: f64,
    /// Polling interval in seconds.
    pub tick: f64,
}

impl PixelModel {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha > 0.0, "alpha must be positive, got {}", self.alpha);
        ensure!(self.theta > 0.0, "theta must be positive, got {}", self.theta);
        ensure!(self.tick > 0.0, "tick must be positive, got {}", self.tick);
        Ok(())
    }
}

/// Simulates one pixel for `duration` seconds and returns the polled train
/// `S(1), S(2), ...` (one entry per tick).
pub fn simulate_pixel(
    intensity: impl Fn(f64) -> f64,
    model: &PixelModel,
    duration: f64,
    dt: f64,
) -> Result<Vec<u8>> {
    simulate_pixel_traced(intensity, model, duration, dt, |_, _| {})
}

/// As [`simulate_pixel`], calling `observe(time, charge)` after every
/// integration step.
pub fn simulate_pixel_traced(
    intensity: impl Fn(f64) -> f64,
    model: &PixelModel,
    duration: f64,
    dt: f64,
    mut observe: impl FnMut(f64, f64),
) -> Result<Vec<u8>> {
    model.validate()?;
    ensure!(duration > 0.0, "duration must be positive, got {duration}");
    ensure!(dt > 0.0, "dt must be positive, got {dt}");
    ensure!(
        dt <= model.tick,
        "integration step {dt} exceeds polling interval {}",
        model.tick
    );

    let polls = (duration / model.tick + 1e-9).floor() as usize;
    let substeps = ((model.tick / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = model.tick / substeps as f64;

    let sample = |t: f64| -> Result<f64> {
        let v = intensity(t);
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "intensity must be finite and non-negative, got {v} at t={t}"
            )));
        }
        Ok(v)
    };

    let mut train = Vec::with_capacity(polls);
    let mut charge = 0.0f64;
    let mut flag = false;
    let mut prev = sample(0.0)?;
    for n in 0..polls {
        for s in 0..substeps {
            let t1 = n as f64 * model.tick + (s + 1) as f64 * h;
            let next = sample(t1)?;
            // trapezoid rule, exact for piecewise-linear intensity
            charge += model.alpha * 0.5 * (prev + next) * h;
            prev = next;
            while reaches(charge, model.theta) {
                charge = (charge - model.theta).max(0.0);
                flag = true;
            }
            if !(0.0..model.theta).contains(&charge) {
                return Err(Error::Invariant(format!(
                    "pixel charge {charge} left [0, {})",
                    model.theta
                )));
            }
            observe(t1, charge);
        }
        train.push(flag as u8);
        flag = false;
    }
    Ok(train)
}

/// Sequence of equally sized grayscale frames with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVideo {
    height: usize,
    width: usize,
    frames: Vec<Array2<f64>>,
}

impl IntensityVideo {
    pub fn new(frames: Vec<Array2<f64>>) -> Result<Self> {
        ensure!(!frames.is_empty(), "video needs at least one frame");
        let (height, width) = frames[0].dim();
        ensure!(height >= 1 && width >= 1, "frames must be non-empty");
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != (height, width) {
                return Err(Error::ShapeMismatch(format!(
                    "frame {i} is {:?}, expected {:?}",
                    f.dim(),
                    (height, width)
                )));
            }
            if let Some(v) = f.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidArgument(format!(
                    "frame {i} has intensity {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            frames,
        })
    }

    /// A video of `n` frames all equal to `value`.
    pub fn constant(n: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(vec![Array2::from_elem((height, width), value); n])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Array2<f64>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Array2<f64>> {
        self.frames
    }
}

/// Frame encoder settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub theta: f64,
    /// Half-width of the uniform additive noise, in intensity units.
    pub noise_amplitude: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            theta: 5.0,
            noise_amplitude: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.theta > 0.0 && self.theta.is_finite(),
            "theta must be positive, got {}",
            self.theta
        );
        ensure!(
            self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite(),
            "noise amplitude must be non-negative, got {}",
            self.noise_amplitude
        );
        Ok(())
    }
}

/// Converts a video into a spike stream of the same length.
///
/// Noise (when enabled) is drawn per frame and pixel in row-major order
/// from a ChaCha8 generator seeded with `seed`, added to the intensity and
/// clamped back into `[0, 1]` before accumulation. With zero noise no
/// random numbers are drawn and the output does not depend on `seed`.
pub fn encode_video(video: &IntensityVideo, cfg: &EncoderConfig, seed: u64) -> Result<SpikeStream> {
    cfg.validate()?;
    let (h, w) = (video.height, video.width);
    let mut out = SpikeStream::zeros(video.len(), h, w)?;
    let mut potential = Array2::<f64>::zeros((h, w));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = cfg.noise_amplitude;

    for (t, frame) in video.frames.iter().enumerate() {
        if a > 0.0 {
            for (v, &i) in potential.iter_mut().zip(frame.iter()) {
                let noisy = (i + rng.random_range(-a..=a)).clamp(0.0, 1.0);
                *v += noisy;
            }
        } else {
            potential += frame;
        }
        for ((y, x), v) in potential.indexed_iter_mut() {
            if reaches(*v, cfg.theta) {
                *v = (*v - cfg.theta).max(0.0);
                out.set(t, y, x, true);
            }
        }
    }
    Ok(out)
}

/// ITU-R 601 luma of an `[H, W, 3]` RGB frame with values in `[0, 1]`.
pub fn to_grayscale(rgb: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
    let (h, w, c) = rgb.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected 3 colour channels, got {c}"
        )));
    }
    let mut out = Array2::zeros((h, w));
    Zip::indexed(&mut out).for_each(|(y, x), o| {
        // integer weights over 1000 keep white at exactly 1.0
        let luma = (299.0 * rgb[[y, x, 0]] + 587.0 * rgb[[y, x, 1]] + 114.0 * rgb[[y, x, 2]]) / 1000.0;
        *o = luma.clamp(0.0, 1.0);
    });
    Ok(out)
}

/// Inserts `factor - 1` linearly blended frames between each pair of
/// consecutive frames. Original frames are copied, not recomputed.
pub fn upsample_temporal(video: &IntensityVideo, factor: usize) -> Result<IntensityVideo> {
    ensure!(factor >= 1, "upsampling factor must be at least 1");
    if factor == 1 || video.len() == 1 {
        return Ok(video.clone());
    }
    let n = video.len();
    let mut frames = Vec::with_capacity((n - 1) * factor + 1);
    for pair in video.frames.windows(2) {
        frames.push(pair[0].clone());
        for j in 1..factor {
            let s = j as f64 / factor as f64;
            let mut blend = &pair[0] * (1.0 - s) + &pair[1] * s;
            blend.mapv_inplace(|v| v.clamp(0.0, 1.0));
            frames.push(blend);
        }
    }
    frames.push(video.frames[n - 1].clone());
    IntensityVideo::new(frames)
}
