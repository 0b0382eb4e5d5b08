//! The frame encoder is a soft-reset LIF neuron with no leak.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikekit::camera::{encode_video, EncoderConfig, IntensityVideo};
use spikekit::reconstruct::{tfi_reconstruct, TfiConfig};
use spikekit::snn::{lif_over_time, LifParams, ResetMode};

#[test]
fn soft_reset_lif_reproduces_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (t, h, w) = (120, 6, 5);
    // Intensities on a 1/64 grid keep every accumulation exact.
    let frames: Vec<Array2<f64>> = (0..t)
        .map(|_| Array2::from_shape_fn((h, w), |_| rng.random_range(0..=64) as f64 / 64.0))
        .collect();
    let video = IntensityVideo::new(frames.clone()).unwrap();
    let theta = 5.0;
    let stream = encode_video(&video, &EncoderConfig { theta, noise_amplitude: 0.0 }, 0).unwrap();

    let mut x = ArrayD::zeros(IxDyn(&[t, h, w]));
    for (ti, f) in frames.iter().enumerate() {
        x.index_axis_mut(ndarray::Axis(0), ti).assign(f);
    }
    let p = LifParams { thresh: theta, decay: 1.0, lens: 0.5, reset: ResetMode::Subtract };
    let spikes = lif_over_time(x.view(), &p).unwrap();
    for ti in 0..t {
        for y in 0..h {
            for xx in 0..w {
                assert_eq!(spikes[[ti, y, xx]] == 1.0, stream.get(ti, y, xx), "t={ti} y={y} x={xx}");
            }
        }
    }
}

#[test]
fn tfi_recovers_constant_intensity() {
    let cfg = TfiConfig::default();
    for &level in &[0.2, 0.4, 0.6, 0.8, 1.0] {
        let video = IntensityVideo::constant(200, 4, 4, level).unwrap();
        let s = encode_video(&video, &EncoderConfig::default(), 0).unwrap();
        for t in 60..140 {
            let img = tfi_reconstruct(&s, t, &cfg).unwrap();
            for &v in img.iter() {
                assert!((v - level).abs() <= 0.1, "level {level} at t={t}: {v}");
            }
        }
    }
}
