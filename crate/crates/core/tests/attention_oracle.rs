//! Attention layers against straightforward loop implementations.

use ndarray::{s, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikekit::hsfe::CoarseEstimates;
use spikekit::star_net::{
    attention_pool, mini_mapresnet_forward, star_net_forward, star_net_forward_batch, temporal_attention,
    temporal_attention_with_weights, temporal_pool, AttentionWeights, BlockStyle, MiniMapResNetConfig, StarNetWeights,
};
use spikekit::tensor::FeatureTensor;

fn cfg() -> MiniMapResNetConfig {
    MiniMapResNetConfig {
        in_channels: 3,
        input_hw: (64, 64),
        stem_channels: 8,
        group_widths: vec![8, 8, 16, 16],
        blocks_per_group: vec![1, 1, 1, 1],
        heads: 4,
        embed_dim: 16,
        ff_dim: 24,
        block_style: BlockStyle::Bottleneck,
    }
}

fn lin(x: &[f64], w: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
    (0..w.nrows())
        .map(|o| b[o] + (0..x.len()).map(|i| w[[o, i]] * x[i]).sum::<f64>())
        .collect()
}

/// Textbook multi-head attention of `q_rows` over `kv_rows`.
fn naive_mha(q_rows: &[Vec<f64>], kv_rows: &[Vec<f64>], w: &AttentionWeights, heads: usize) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let q: Vec<_> = q_rows.iter().map(|x| lin(x, &w.wq, &w.bq)).collect();
    let k: Vec<_> = kv_rows.iter().map(|x| lin(x, &w.wk, &w.bk)).collect();
    let v: Vec<_> = kv_rows.iter().map(|x| lin(x, &w.wv, &w.bv)).collect();
    let d = q[0].len();
    let dh = d / heads;
    let mut concat = vec![vec![0.0; d]; q.len()];
    let mut probs = Vec::new();
    for h in 0..heads {
        let mut ph = Vec::new();
        for i in 0..q.len() {
            let scores: Vec<f64> = (0..k.len())
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|x| x / z).collect();
            for c in 0..dh {
                concat[i][h * dh + c] = (0..k.len()).map(|j| p[j] * v[j][h * dh + c]).sum();
            }
            ph.push(p);
        }
        probs.push(ph);
    }
    (concat.iter().map(|x| lin(x, &w.wo, &w.bo)).collect(), probs)
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-12)
}

fn randomize_biases(w: &mut StarNetWeights, rng: &mut ChaCha8Rng) {
    for b in [&mut w.temporal_attn.bq, &mut w.temporal_attn.bk, &mut w.temporal_attn.bv, &mut w.temporal_attn.bo] {
        b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    for b in [&mut w.pool_attn.bq, &mut w.pool_attn.bk, &mut w.pool_attn.bv, &mut w.pool_attn.bo] {
        b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
}

#[test]
fn temporal_attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for inst in 0..100 {
        let c = cfg();
        let mut w = StarNetWeights::init(&c, inst).unwrap();
        randomize_biases(&mut w, &mut rng);
        let (t, b) = (rng.random_range(1..7), rng.random_range(1..4));
        let x = Array3::from_shape_fn((t, b, 16), |_| rng.random_range(-2.0..2.0));
        let (y, attn) = temporal_attention_with_weights(&FeatureTensor::sequence(x.clone()).unwrap(), &w, c.heads).unwrap();
        let y = y.as_sequence().unwrap().to_owned();
        for bi in 0..b {
            let rows: Vec<Vec<f64>> = (0..t).map(|ti| x.slice(s![ti, bi, ..]).to_vec()).collect();
            let (att, probs) = naive_mha(&rows, &rows, &w.temporal_attn, c.heads);
            for ti in 0..t {
                let res: Vec<f64> = (0..16).map(|d| rows[ti][d] + att[ti][d]).collect();
                let hidden: Vec<f64> = lin(&res, &w.temporal_ff.w1, &w.temporal_ff.b1).into_iter().map(|v| v.max(0.0)).collect();
                let ff = lin(&hidden, &w.temporal_ff.w2, &w.temporal_ff.b2);
                for d in 0..16 {
                    assert!(rel_close(y[[ti, bi, d]], res[d] + ff[d]));
                }
            }
            for (h, head) in attn[bi].iter().enumerate() {
                for i in 0..t {
                    assert!((head.row(i).sum() - 1.0).abs() < 1e-6);
                    for j in 0..t {
                        assert!(rel_close(head[[i, j]], probs[h][i][j]));
                    }
                }
            }
        }
    }
}

#[test]
fn attention_pool_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = cfg();
    for inst in 0..100 {
        let mut w = StarNetWeights::init(&c, 1000 + inst).unwrap();
        randomize_biases(&mut w, &mut rng);
        let tokens = Array2::from_shape_fn((c.tokens(), 16), |_| rng.random_range(0.0..3.0));
        let (pooled, attn) = attention_pool(tokens.view(), &w, c.heads).unwrap();
        let n = tokens.nrows();
        let mean: Vec<f64> = (0..16).map(|d| (0..n).map(|i| tokens[[i, d]]).sum::<f64>() / n as f64).collect();
        let mut seq = vec![mean];
        seq.extend((0..n).map(|i| tokens.row(i).to_vec()));
        for (i, row) in seq.iter_mut().enumerate() {
            for d in 0..16 {
                row[d] += w.pool_pos[[i, d]];
            }
        }
        let (out, probs) = naive_mha(&seq[..1], &seq, &w.pool_attn, c.heads);
        for d in 0..16 {
            assert!(rel_close(pooled[d], out[0][d]));
        }
        for (h, head) in attn.iter().enumerate() {
            assert!((head.row(0).sum() - 1.0).abs() < 1e-6);
            for j in 0..n + 1 {
                assert!(rel_close(head[[0, j]], probs[h][0][j]));
            }
        }
    }
}

#[test]
fn temporal_pool_equals_loop_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array3::from_shape_fn((4, 2, 8), |_| rng.random_range(-1.0..1.0));
    let pooled = temporal_pool(&FeatureTensor::sequence(x.clone()).unwrap()).unwrap();
    for b in 0..2 {
        for d in 0..8 {
            let mut acc = 0.0;
            for t in 0..4 {
                acc += x[[t, b, d]];
            }
            assert_eq!(pooled[[b, d]], acc / 4.0);
        }
    }
    let frame = x.slice(s![0..1, .., ..]).to_owned();
    let reps = |n: usize| {
        let mut r = Array3::zeros((n, 2, 8));
        for t in 0..n {
            r.slice_mut(s![t, .., ..]).assign(&frame.slice(s![0, .., ..]));
        }
        temporal_pool(&FeatureTensor::sequence(r).unwrap()).unwrap()
    };
    let single = reps(1);
    for n in [2, 3, 5, 8] {
        for (a, b) in reps(n).iter().zip(single.iter()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }
    }
}

fn random_clip(rng: &mut ChaCha8Rng, t: usize) -> CoarseEstimates {
    CoarseEstimates {
        estimates: (0..t).map(|_| Array3::from_shape_fn((3, 64, 64), |_| rng.random_range(0.0..1.0))).collect(),
    }
}

#[test]
fn star_net_is_composition_of_stages() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = cfg();
    let w = StarNetWeights::init(&c, 7).unwrap();
    let clip = random_clip(&mut rng, 5);
    let mut seq = Array3::zeros((5, 1, 16));
    for (t, e) in clip.estimates.iter().enumerate() {
        seq.slice_mut(s![t, 0, ..]).assign(&mini_mapresnet_forward(e.view(), &c, &w).unwrap());
    }
    let manual = temporal_pool(&temporal_attention(&FeatureTensor::sequence(seq).unwrap(), &w, c.heads).unwrap()).unwrap();
    let got = star_net_forward(&clip, &c, &w).unwrap();
    assert_eq!(got, manual.row(0));
    assert_eq!(got, star_net_forward(&clip, &c, &w).unwrap());
}

#[test]
fn identical_estimates_collapse_to_single_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = cfg();
    let w = StarNetWeights::init(&c, 8).unwrap();
    let one = random_clip(&mut rng, 1);
    let five = CoarseEstimates { estimates: vec![one.estimates[0].clone(); 5] };
    let a = star_net_forward(&one, &c, &w).unwrap();
    let b = star_net_forward(&five, &c, &w).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!(rel_close(*x, *y));
    }
}

#[test]
fn batch_permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = cfg();
    let w = StarNetWeights::init(&c, 9).unwrap();
    let clips: Vec<_> = (0..3).map(|_| random_clip(&mut rng, 2)).collect();
    let out = star_net_forward_batch(&clips, &c, &w).unwrap();
    let perm = [2, 0, 1];
    let permuted: Vec<_> = perm.iter().map(|&i| clips[i].clone()).collect();
    let out_p = star_net_forward_batch(&permuted, &c, &w).unwrap();
    for (row, &i) in perm.iter().enumerate() {
        assert_eq!(out_p.row(row), out.row(i));
    }
}
