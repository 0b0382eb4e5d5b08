//! Spike/text contrastive alignment.
//!
//! Video embeddings and text embeddings pass through one shared trainable
//! linear head, are normalized to unit length and compared by cosine
//! similarity. The symmetric contrastive loss takes a row-wise softmax
//! (video to text) and a column-wise softmax (text to video) over the same
//! logit matrix `s · S`, where `s = 1/τ`. Gradients with respect to the
//! head are analytic.
//!
//! Text is embedded without a learned encoder: lowercase whitespace tokens
//! are hashed with 64-bit FNV-1a into a seeded table of unit vectors and
//! averaged.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis as NdAxis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const DEFAULT_INV_TAU: f64 = 14.29;
pub const DEFAULT_CLAMP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Text,
}

/// `B × D` embeddings of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub rows: Array2<f64>,
    pub modality: Modality,
    pub labels: Option<Vec<usize>>,
}

impl EmbeddingBatch {
    pub fn new(rows: Array2<f64>, modality: Modality, labels: Option<Vec<usize>>) -> Result<Self> {
        ensure!(rows.nrows() >= 1 && rows.ncols() >= 1, "batch must be non-empty");
        ensure!(rows.iter().all(|v| v.is_finite()), "embeddings must be finite");
        if let Some(l) = &labels {
            if l.len() != rows.nrows() {
                return Err(Error::LengthMismatch {
                    expected: rows.nrows(),
                    found: l.len(),
                });
            }
        }
        Ok(Self { rows, modality, labels })
    }
}

/// Learnable inverse temperature, stored as `ln(1/τ)` and capped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub log_inv_tau: f64,
    pub clamp_max: f64,
}

impl Default for Temperature {
    fn default() -> Self {
        Self::from_inv_tau(DEFAULT_INV_TAU)
    }
}

impl Temperature {
    pub fn from_inv_tau(inv_tau: f64) -> Self {
        Self {
            log_inv_tau: inv_tau.ln(),
            clamp_max: DEFAULT_CLAMP,
        }
    }

    pub fn inv_tau(&self) -> f64 {
        self.log_inv_tau.exp().min(self.clamp_max)
    }

    pub fn is_clamped(&self) -> bool {
        self.log_inv_tau.exp() > self.clamp_max
    }
}

/// Shared linear projection `z = W x + b` plus the temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentHead {
    /// `[D_out][D_in]`, row-major.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub temperature: Temperature,
}

impl AlignmentHead {
    /// Identity projection, zero bias, default temperature.
    pub fn identity(dim: usize) -> Self {
        Self::from_parts(Array2::eye(dim), Array1::zeros(dim), Temperature::default())
    }

    pub fn from_parts(w: Array2<f64>, b: Array1<f64>, temperature: Temperature) -> Self {
        Self {
            weight: w.outer_iter().map(|r| r.to_vec()).collect(),
            bias: b.to_vec(),
            temperature,
        }
    }

    pub fn w(&self) -> Array2<f64> {
        let rows = self.weight.len();
        let cols = self.weight.first().map_or(0, Vec::len);
        Array2::from_shape_fn((rows, cols), |(i, j)| self.weight[i][j])
    }

    pub fn b(&self) -> Array1<f64> {
        Array1::from(self.bias.clone())
    }

    pub fn in_dim(&self) -> usize {
        self.weight.first().map_or(0, Vec::len)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.in_dim();
        ensure!(cols >= 1 && self.out_dim() >= 1, "head has no parameters");
        ensure!(
            self.weight.iter().all(|r| r.len() == cols) && self.bias.len() == self.out_dim(),
            "ragged head parameters"
        );
        ensure!(
            self.weight.iter().flatten().chain(&self.bias).all(|v| v.is_finite())
                && self.temperature.log_inv_tau.is_finite(),
            "head parameters must be finite"
        );
        ensure!(self.temperature.clamp_max > 0.0, "clamp_max must be positive");
        Ok(())
    }

    /// Projects rows `[B, D_in]` to `[B, D_out]`.
    pub fn project(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "features have width {}, head expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut z = x.dot(&self.w().t());
        z += &self.b();
        Ok(z)
    }

    fn apply_step(&mut self, g: &HeadGradient, lr: f64) {
        for (row, grow) in self.weight.iter_mut().zip(g.weight.outer_iter()) {
            for (w, d) in row.iter_mut().zip(grow.iter()) {
                *w -= lr * d;
            }
        }
        for (b, d) in self.bias.iter_mut().zip(g.bias.iter()) {
            *b -= lr * d;
        }
        self.temperature.log_inv_tau -= lr * g.log_inv_tau;
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub const DEFAULT_TABLE_SIZE: usize = 4096;

/// Seeded table of unit vectors indexed by token hash.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedder {
    table: Array2<f64>,
    pub seed: u64,
}

impl TextEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        Self::with_table_size(dim, DEFAULT_TABLE_SIZE, seed)
    }

    pub fn with_table_size(dim: usize, size: usize, seed: u64) -> Result<Self> {
        ensure!(dim >= 1 && size >= 1, "embedder needs positive dimension and table size");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Array2::zeros((size, dim));
        for mut row in table.outer_iter_mut() {
            loop {
                row.mapv_inplace(|_| -> f64 { StandardNormal.sample(&mut rng) });
                let n = row.dot(&row).sqrt();
                if n > 1e-12 {
                    row /= n;
                    break;
                }
            }
        }
        Ok(Self { table, seed })
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    /// Mean of the token vectors (before any projection).
    pub fn bag(&self, text: &str) -> Result<Array1<f64>> {
        let tokens = tokenize(text);
        ensure!(!tokens.is_empty(), "cannot embed empty text");
        let mut idx: Vec<usize> = tokens
            .iter()
            .map(|t| (fnv1a64(t.as_bytes()) % self.table.nrows() as u64) as usize)
            .collect();
        // Summation order fixed by index so that token order cannot matter.
        idx.sort_unstable();
        let mut acc = Array1::zeros(self.dim());
        for i in &idx {
            acc += &self.table.row(*i);
        }
        Ok(acc / idx.len() as f64)
    }

    /// Bag vectors for several texts, `[N, D]`.
    pub fn bags(&self, texts: &[String]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((texts.len(), self.dim()));
        for (i, t) in texts.iter().enumerate() {
            out.row_mut(i).assign(&self.bag(t)?);
        }
        Ok(out)
    }
}

/// Bag-of-tokens vector passed through the head.
pub fn embed_text(text: &str, embedder: &TextEmbedder, head: &AlignmentHead) -> Result<Array1<f64>> {
    let bag = embedder.bag(text)?;
    Ok(head.project(bag.view().insert_axis(NdAxis(0)))?.row(0).to_owned())
}

pub fn cosine_similarity(v: ArrayView1<'_, f64>, t: ArrayView1<'_, f64>) -> Result<f64> {
    if v.len() != t.len() {
        return Err(Error::ShapeMismatch(format!("lengths {} and {}", v.len(), t.len())));
    }
    let (nv, nt) = (v.dot(&v).sqrt(), t.dot(&t).sqrt());
    ensure!(nv > 0.0 && nt > 0.0, "cosine similarity of a zero vector");
    Ok((v.dot(&t) / (nv * nt)).clamp(-1.0, 1.0))
}

/// Rows scaled to unit length, with the norms. Zero rows are an error.
fn normalize_rows(z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = z.map_axis(NdAxis(1), |r| r.dot(&r).sqrt());
    ensure!(norms.iter().all(|&n| n > 0.0), "zero embedding row");
    let mut zh = z.clone();
    for (mut r, &n) in zh.outer_iter_mut().zip(norms.iter()) {
        r /= n;
    }
    Ok((zh, norms))
}

/// Cosine similarity matrix `S[i, j] = sim(v_i, t_j)`.
pub fn similarity_matrix(v: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if v.ncols() != t.ncols() {
        return Err(Error::ShapeMismatch(format!("widths {} and {}", v.ncols(), t.ncols())));
    }
    let (vh, _) = normalize_rows(&v.to_owned())?;
    let (th, _) = normalize_rows(&t.to_owned())?;
    Ok(vh.dot(&th.t()))
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Symmetric contrastive loss of a square similarity matrix at inverse
/// temperature `inv_tau`, with row `i` paired to column `i`.
pub fn contrastive_loss_from_sim(sim: ArrayView2<'_, f64>, inv_tau: f64) -> Result<f64> {
    let (b, b2) = sim.dim();
    ensure!(b == b2 && b >= 1, "similarity matrix must be square and non-empty");
    let logits = sim.mapv(|s| s * inv_tau);
    let row_lp = log_softmax_rows(&logits);
    let col_lp = log_softmax_rows(&logits.t().to_owned());
    let mut acc = 0.0;
    for i in 0..b {
        acc += row_lp[[i, i]] + col_lp[[i, i]];
    }
    Ok((-acc / b as f64).max(0.0))
}

pub fn contrastive_loss(v: &EmbeddingBatch, t: &EmbeddingBatch, temp: &Temperature) -> Result<f64> {
    if v.rows.nrows() != t.rows.nrows() {
        return Err(Error::LengthMismatch {
            expected: v.rows.nrows(),
            found: t.rows.nrows(),
        });
    }
    let sim = similarity_matrix(v.rows.view(), t.rows.view())?;
    contrastive_loss_from_sim(sim.view(), temp.inv_tau())
}

/// Gradient of the loss with respect to every head parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub log_inv_tau: f64,
}

impl HeadGradient {
    pub fn norm(&self) -> f64 {
        (self.weight.iter().chain(self.bias.iter()).map(|g| g * g).sum::<f64>() + self.log_inv_tau * self.log_inv_tau).sqrt()
    }
}

fn check_pair(v_feat: ArrayView2<'_, f64>, t_feat: ArrayView2<'_, f64>, head: &AlignmentHead) -> Result<()> {
    head.validate()?;
    if v_feat.nrows() != t_feat.nrows() {
        return Err(Error::LengthMismatch {
            expected: v_feat.nrows(),
            found: t_feat.nrows(),
        });
    }
    ensure!(v_feat.nrows() >= 1, "empty batch");
    Ok(())
}

/// Loss of the head on paired features (row `i` of each side matches).
pub fn head_loss(v_feat: ArrayView2<'_, f64>, t_feat: ArrayView2<'_, f64>, head: &AlignmentHead) -> Result<f64> {
    check_pair(v_feat, t_feat, head)?;
    let zv = head.project(v_feat)?;
    let zt = head.project(t_feat)?;
    let sim = similarity_matrix(zv.view(), zt.view())?;
    contrastive_loss_from_sim(sim.view(), head.temperature.inv_tau())
}

/// Loss and its exact gradient through projection, normalization,
/// similarity, temperature and both softmax directions.
pub fn head_gradient(
    v_feat: ArrayView2<'_, f64>,
    t_feat: ArrayView2<'_, f64>,
    head: &AlignmentHead,
) -> Result<(f64, HeadGradient)> {
    check_pair(v_feat, t_feat, head)?;
    let b = v_feat.nrows();
    let zv = head.project(v_feat)?;
    let zt = head.project(t_feat)?;
    let (zvh, nv) = normalize_rows(&zv)?;
    let (zth, nt) = normalize_rows(&zt)?;
    let sim = zvh.dot(&zth.t());
    let s = head.temperature.inv_tau();
    let logits = sim.mapv(|x| x * s);
    let p = log_softmax_rows(&logits).mapv(f64::exp);
    let q = log_softmax_rows(&logits.t().to_owned()).mapv(f64::exp).reversed_axes();
    let loss = contrastive_loss_from_sim(sim.view(), s)?;

    // dL/dlogits = (P − I + Q − I) / B
    let mut g = (&p + &q) / b as f64;
    for i in 0..b {
        g[[i, i]] -= 2.0 / b as f64;
    }
    let dl_ds = (&g * &sim).sum();
    let dlog = if head.temperature.is_clamped() { 0.0 } else { s * dl_ds };
    let d_sim = g * s;

    let d_zvh = d_sim.dot(&zth);
    let d_zth = d_sim.t().dot(&zvh);
    let unnormalize = |dh: Array2<f64>, h: &Array2<f64>, n: &Array1<f64>| -> Array2<f64> {
        let mut dz = dh;
        for ((mut r, hr), &nn) in dz.outer_iter_mut().zip(h.outer_iter()).zip(n.iter()) {
            let proj = hr.dot(&r);
            r.zip_mut_with(&hr, |d, &hv| *d = (*d - hv * proj) / nn);
        }
        dz
    };
    let dzv = unnormalize(d_zvh, &zvh, &nv);
    let dzt = unnormalize(d_zth, &zth, &nt);
    let weight = dzv.t().dot(&v_feat) + dzt.t().dot(&t_feat);
    let bias = dzv.sum_axis(NdAxis(0)) + dzt.sum_axis(NdAxis(0));
    Ok((
        loss,
        HeadGradient {
            weight,
            bias,
            log_inv_tau: dlog,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Trained head and the support loss before training (index 0) and after
/// each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    pub head: AlignmentHead,
    pub loss_trace: Vec<f64>,
}

/// Groups support indices by class; every class needs at least one shot.
fn per_class(labels: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::OutOfRange(format!("label {l} with {classes} classes")));
        }
        groups[l].push(i);
    }
    if let Some(c) = groups.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!("class {c} has no support examples")));
    }
    Ok(groups)
}

/// Batch `k` takes the `k`-th listed shot of every class (cycling classes
/// with fewer shots), paired with the class text features.
fn batch(
    support: ArrayView2<'_, f64>,
    groups: &[Vec<usize>],
    k: usize,
) -> Array2<f64> {
    let mut v = Array2::zeros((groups.len(), support.ncols()));
    for (c, g) in groups.iter().enumerate() {
        v.row_mut(c).assign(&support.row(g[k % g.len()]));
    }
    v
}

fn mean_support_loss(
    support: ArrayView2<'_, f64>,
    class_text: ArrayView2<'_, f64>,
    groups: &[Vec<usize>],
    head: &AlignmentHead,
) -> Result<f64> {
    let n = groups.iter().map(Vec::len).max().unwrap_or(0);
    let mut acc = 0.0;
    for k in 0..n {
        acc += head_loss(batch(support, groups, k).view(), class_text, head)?;
    }
    Ok(acc / n as f64)
}

/// Plain gradient descent on the contrastive loss over class-balanced
/// support batches. Shots are reshuffled per class each epoch with a
/// seeded generator.
pub fn finetune_head(
    support: ArrayView2<'_, f64>,
    labels: &[usize],
    class_text: ArrayView2<'_, f64>,
    head: AlignmentHead,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult> {
    ensure!(cfg.lr > 0.0 && cfg.lr.is_finite(), "learning rate must be positive");
    if labels.len() != support.nrows() {
        return Err(Error::LengthMismatch {
            expected: support.nrows(),
            found: labels.len(),
        });
    }
    let classes = class_text.nrows();
    ensure!(classes >= 1, "need at least one class");
    for i in 0..classes {
        for j in 0..i {
            ensure!(
                class_text.row(i) != class_text.row(j),
                "classes {j} and {i} have identical text features"
            );
        }
    }
    let mut groups = per_class(labels, classes)?;
    let mut head = head;
    head.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = vec![mean_support_loss(support, class_text, &groups, &head)?];
    let rounds = groups.iter().map(Vec::len).max().unwrap_or(0);
    let fixed = groups.clone();
    for _ in 0..cfg.epochs {
        for g in groups.iter_mut() {
            g.shuffle(&mut rng);
        }
        for k in 0..rounds {
            let (_, grad) = head_gradient(batch(support, &groups, k).view(), class_text, &head)?;
            head.apply_step(&grad, cfg.lr);
        }
        head.validate()
            .map_err(|e| Error::Invariant(format!("training diverged: {e}")))?;
        trace.push(mean_support_loss(support, class_text, &fixed, &head)?);
    }
    Ok(FinetuneResult { head, loss_trace: trace })
}

/// Fraction of rows whose true class ranks within the top `k` by cosine
/// similarity. Ties rank the lower class index first.
pub fn evaluate_topk(
    video_embs: ArrayView2<'_, f64>,
    class_text_embs: ArrayView2<'_, f64>,
    labels: &[usize],
    k: usize,
) -> Result<f64> {
    let classes = class_text_embs.nrows();
    ensure!(k >= 1 && k <= classes, "k = {k} must lie in 1..={classes}");
    if labels.len() != video_embs.nrows() {
        return Err(Error::LengthMismatch {
            expected: video_embs.nrows(),
            found: labels.len(),
        });
    }
    ensure!(!labels.is_empty(), "nothing to evaluate");
    let sim = similarity_matrix(video_embs, class_text_embs)?;
    let mut hits = 0usize;
    for (row, &label) in sim.outer_iter().zip(labels) {
        if label >= classes {
            return Err(Error::OutOfRange(format!("label {label} with {classes} classes")));
        }
        if rank_of(row, label) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Position of `label` when classes are sorted by descending score, ties
/// broken by lower index.
pub fn rank_of(scores: ArrayView1<'_, f64>, label: usize) -> usize {
    let target = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > target || (s == target && j < label))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn text_embedding_is_deterministic_bag() {
        let e = TextEmbedder::new(64, 0).unwrap();
        let head = AlignmentHead::identity(64);
        let a = embed_text("a person waving", &e, &head).unwrap();
        assert_eq!(a, embed_text("a person waving", &e, &head).unwrap());
        assert_eq!(a, embed_text("waving person A", &e, &head).unwrap());
        let wave = embed_text("wave", &e, &head).unwrap();
        let punch = embed_text("punch", &e, &head).unwrap();
        assert!(cosine_similarity(wave.view(), punch.view()).unwrap() < 0.99);
        assert!(e.bag("   ").is_err());
    }

    #[test]
    fn cosine_examples() {
        let v = Array1::from(vec![1.0, 2.0, -0.5]);
        let t = Array1::from(vec![0.3, -1.0, 2.0]);
        assert!((cosine_similarity(v.view(), v.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(v.view(), (-&v).view()).unwrap() + 1.0).abs() < 1e-15);
        let a = cosine_similarity(v.view(), t.view()).unwrap();
        let b = cosine_similarity((&v * 3.5).view(), t.view()).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(cosine_similarity(Array1::zeros(3).view(), t.view()).is_err());
    }

    #[test]
    fn loss_examples() {
        let one = arr2(&[[0.3]]);
        assert_eq!(contrastive_loss_from_sim(one.view(), 14.29).unwrap(), 0.0);
        let eye = Array2::eye(2);
        let l = contrastive_loss_from_sim(eye.view(), 1.0).unwrap();
        let want = 2.0 * ((1.0 + std::f64::consts::E).ln() - 1.0);
        assert!((l - want).abs() < 1e-12);
        assert!((l - 0.62652).abs() < 1e-5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let b = rng.random_range(1..=5);
            let d = rng.random_range(2..=6);
            let v = random_matrix(&mut rng, b, d);
            let t = random_matrix(&mut rng, b, d);
            let head = AlignmentHead::from_parts(
                random_matrix(&mut rng, d, d),
                Array1::from_shape_fn(d, |_| rng.random_range(-0.2..0.2)),
                Temperature::from_inv_tau(rng.random_range(1.0..20.0)),
            );
            let (_, g) = head_gradient(v.view(), t.view(), &head).unwrap();
            let h = 1e-5;
            let close = |a: f64, n: f64| (a - n).abs() <= 1e-9 || (a - n).abs() <= 1e-6 * n.abs().max(a.abs());
            for i in 0..d {
                for j in 0..d {
                    let mut hp = head.clone();
                    hp.weight[i][j] += h;
                    let mut hm = head.clone();
                    hm.weight[i][j] -= h;
                    let n = (head_loss(v.view(), t.view(), &hp).unwrap() - head_loss(v.view(), t.view(), &hm).unwrap()) / (2.0 * h);
                    assert!(close(g.weight[[i, j]], n), "w[{i},{j}]: {} vs {n}", g.weight[[i, j]]);
                }
            }
            let mut hp = head.clone();
            hp.temperature.log_inv_tau += h;
            let mut hm = head.clone();
            hm.temperature.log_inv_tau -= h;
            let n = (head_loss(v.view(), t.view(), &hp).unwrap() - head_loss(v.view(), t.view(), &hm).unwrap()) / (2.0 * h);
            assert!(close(g.log_inv_tau, n));
        }
    }

    #[test]
    fn equal_logits_give_zero_temperature_gradient() {
        let v = Array2::from_elem((3, 4), 1.0);
        let (loss, g) = head_gradient(v.view(), v.view(), &AlignmentHead::identity(4)).unwrap();
        assert!((loss - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!(g.log_inv_tau.abs() < 1e-12);
    }

    #[test]
    fn one_class_leaves_head_unchanged() {
        let support = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 * 0.1 + 0.2);
        let text = Array2::from_shape_fn((1, 4), |(_, j)| j as f64 - 1.5);
        let head = AlignmentHead::identity(4);
        let r = finetune_head(support.view(), &[0, 0, 0], text.view(), head.clone(), &FinetuneConfig { epochs: 5, ..Default::default() }).unwrap();
        assert_eq!(r.head, head);
        assert!(r.loss_trace.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn finetune_separable_reduces_loss_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (classes, shots, d) = (4, 8, 8);
        let mut support = Array2::zeros((classes * shots, d));
        let mut labels = Vec::new();
        for c in 0..classes {
            for s in 0..shots {
                let mut row = Array1::from_shape_fn(d, |_| rng.random_range(-0.3..0.3));
                row[c] += 2.0;
                support.row_mut(c * shots + s).assign(&row);
                labels.push(c);
            }
        }
        let text = random_matrix(&mut rng, classes, d);
        let cfg = FinetuneConfig { epochs: 30, lr: 0.05, seed: 3 };
        let a = finetune_head(support.view(), &labels, text.view(), AlignmentHead::identity(d), &cfg).unwrap();
        let b = finetune_head(support.view(), &labels, text.view(), AlignmentHead::identity(d), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.loss_trace.last().unwrap() < &a.loss_trace[0]);
        assert!(finetune_head(support.view(), &labels, Array2::<f64>::zeros((5, d)).view(), AlignmentHead::identity(d), &cfg).is_err());
    }

    #[test]
    fn topk_examples() {
        let eye = Array2::<f64>::eye(4);
        let labels = [0, 1, 2, 3];
        assert_eq!(evaluate_topk(eye.view(), eye.view(), &labels, 1).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_matrix(&mut rng, 10, 4);
        assert_eq!(evaluate_topk(v.view(), eye.view(), &[0, 1, 2, 3, 0, 1, 2, 3, 0, 1], 4).unwrap(), 1.0);
        assert!(evaluate_topk(eye.view(), eye.view(), &labels, 5).is_err());
        assert!(evaluate_topk(eye.view(), eye.view(), &[0, 1, 2, 4], 1).is_err());
        let scores = Array1::from(vec![0.5, 0.5, 0.5]);
        assert_eq!(rank_of(scores.view(), 0), 0);
        assert_eq!(rank_of(scores.view(), 2), 2);
    }

    #[test]
    fn head_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = AlignmentHead::from_parts(random_matrix(&mut rng, 3, 3), Array1::from(vec![0.1, 1e-17, -3.3]), Temperature::default());
        let text = serde_json::to_string(&head).unwrap();
        assert_eq!(serde_json::from_str::<AlignmentHead>(&text).unwrap(), head);
    }
}
