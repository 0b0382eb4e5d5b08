use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikekit::align::{
    contrastive_loss, contrastive_loss_from_sim, evaluate_topk, head_gradient, head_loss, AlignmentHead, EmbeddingBatch,
    Modality, Temperature,
};

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #[test]
    fn loss_invariances(seed in any::<u64>(), b in 1usize..8, d in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = matrix(&mut rng, b, d);
        let t = matrix(&mut rng, b, d);
        let temp = Temperature::from_inv_tau(rng.random_range(1.0..50.0));
        let base = contrastive_loss(
            &EmbeddingBatch::new(v.clone(), Modality::Video, None).unwrap(),
            &EmbeddingBatch::new(t.clone(), Modality::Text, None).unwrap(),
            &temp,
        ).unwrap();
        prop_assert!(base >= 0.0);
        let mut perm: Vec<usize> = (0..b).collect();
        for i in (1..b).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // Permute pairs jointly and rescale each video row by a positive factor.
        let mut vp = Array2::zeros((b, d));
        for i in 0..b {
            let f = rng.random_range(0.1..10.0);
            for j in 0..d {
                vp[[i, j]] = v[[perm[i], j]] * f;
            }
        }
        let tp = Array2::from_shape_fn((b, d), |(i, j)| t[[perm[i], j]]);
        let moved = contrastive_loss(
            &EmbeddingBatch::new(vp, Modality::Video, None).unwrap(),
            &EmbeddingBatch::new(tp, Modality::Text, None).unwrap(),
            &temp,
        ).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn topk_monotone_and_scale_invariant(seed in any::<u64>(), n in 1usize..30, classes in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = matrix(&mut rng, n, 5);
        let t = matrix(&mut rng, classes, 5);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let accs: Vec<f64> = (1..=classes).map(|k| evaluate_topk(v.view(), t.view(), &labels, k).unwrap()).collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*accs.last().unwrap(), 1.0);
        let scaled = &v * 4.0;
        prop_assert_eq!(evaluate_topk(scaled.view(), (&t * 0.25).view(), &labels, 1).unwrap(), accs[0]);
    }
}

#[test]
fn near_point_mass_loss_vanishes() {
    let eye = Array2::<f64>::eye(4);
    assert!(contrastive_loss_from_sim(eye.view(), 100.0).unwrap() < 1e-40);
}

#[test]
fn gradient_small_at_symmetric_optimum() {
    let eye = Array2::<f64>::eye(4);
    let head = AlignmentHead::from_parts(Array2::eye(4), Array1::zeros(4), Temperature::from_inv_tau(100.0));
    let (loss, g) = head_gradient(eye.view(), eye.view(), &head).unwrap();
    assert!(loss < 1e-40);
    assert!(g.weight.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-3);
}

#[test]
fn chance_level_top1() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 10_000;
    let v = matrix(&mut rng, n, 8);
    let t = matrix(&mut rng, 4, 8);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let acc = evaluate_topk(v.view(), t.view(), &labels, 1).unwrap();
    assert!((acc - 0.25).abs() <= 0.02, "{acc}");
}

#[test]
fn gradient_gate_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    for _ in 0..100 {
        let b = rng.random_range(1..=8);
        let d = rng.random_range(1..=16);
        let v = matrix(&mut rng, b, d);
        let t = matrix(&mut rng, b, d);
        let head = AlignmentHead::from_parts(
            matrix(&mut rng, d, d) + Array2::<f64>::eye(d),
            Array1::from_shape_fn(d, |_| rng.random_range(-0.1..0.1)),
            Temperature::from_inv_tau(rng.random_range(1.0..30.0)),
        );
        let (_, g) = head_gradient(v.view(), t.view(), &head).unwrap();
        let ok = |a: f64, n: f64| (a - n).abs() <= 1e-9 || (a - n).abs() <= 1e-6 * a.abs().max(n.abs());
        for i in 0..d {
            let mut p = head.clone();
            p.bias[i] += h;
            let mut m = head.clone();
            m.bias[i] -= h;
            let n = (head_loss(v.view(), t.view(), &p).unwrap() - head_loss(v.view(), t.view(), &m).unwrap()) / (2.0 * h);
            assert!(ok(g.bias[i], n), "bias {i}: {} vs {n}", g.bias[i]);
        }
    }
}
