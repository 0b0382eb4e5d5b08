use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spikekit::snn::{fire_at, sn_threshold, surrogate_grad, tdbn, LifParams};
use spikekit::tensor::{Axis, FeatureTensor};

#[test]
fn surrogate_integrates_to_one() {
    for &lens in &[0.5, 0.25, 1.3] {
        let p = LifParams { lens, ..LifParams::default() };
        let (a, b) = (p.thresh - 3.0 * lens, p.thresh + 3.0 * lens);
        let n = 600_000;
        let h = (b - a) / n as f64;
        let mut acc = 0.5 * (surrogate_grad(a, &p) + surrogate_grad(b, &p));
        for i in 1..n {
            acc += surrogate_grad(a + i as f64 * h, &p);
        }
        assert!((acc * h - 1.0).abs() < 1e-3, "lens {lens}: {}", acc * h);
    }
}

#[test]
fn tdbn_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (t, b, c, hw) = (4, 3, 5, 30);
    let data = ArrayD::from_shape_fn(IxDyn(&[t, b, c, hw, hw]), |idx| {
        let z: f64 = StandardNormal.sample(&mut rng);
        3.0 * z + idx[2] as f64
    });
    let x = FeatureTensor::new(data, vec![Axis::Time, Axis::Batch, Axis::Channel, Axis::Height, Axis::Width]).unwrap();
    let gamma = [1.0, 2.0, 0.5, 1.0, 1.5];
    let y = tdbn(&x, &gamma, &[0.0; 5], 1e-5).unwrap();
    for (ch, lane) in y.data().axis_iter(ndarray::Axis(2)).enumerate() {
        let n = lane.len() as f64;
        let mean = lane.sum() / n;
        let var = lane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-5);
        assert!((var - gamma[ch] * gamma[ch]).abs() <= 1e-2);
    }
}

#[test]
fn reparameterized_threshold_matches_scaled_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let (r, c) = (rng.random_range(1..12), rng.random_range(1..12));
        let corr = Array2::from_shape_fn((r, c), |_| rng.random_range(-4.0..4.0)).into_dyn();
        let scale = if i % 2 == 0 { 2f64.powi(rng.random_range(-6..6)) } else { rng.random_range(0.01..10.0) };
        let alpha = rng.random_range(0.1..2.0);
        let (scaled_spikes, v_th) = sn_threshold(corr.mapv(|v| v * scale).view(), alpha).unwrap();
        assert_eq!(scaled_spikes, fire_at(corr.view(), v_th / scale));
    }
}

#[test]
fn sn_spike_count_non_increasing_in_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let x = ArrayD::from_shape_fn(IxDyn(&[50]), |_| rng.random_range(-3.0..3.0));
        let counts: Vec<f64> = [0.25, 0.5, 1.0, 2.0]
            .iter()
            .map(|&a| sn_threshold(x.view(), a).unwrap().0.sum())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    }
}
