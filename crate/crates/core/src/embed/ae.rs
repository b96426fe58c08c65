//! Patch-token masked autoencoder.
//!
//! The input `x` (length `L`) is cut into `P = L / patch_len` patches. With
//! `m` the patch-wise keep mask (1 = visible) and `x~ = m * x`:
//!
//! ```text
//! encoder  H1 = gelu(x~_p W_tok + b_tok + pos_p)            (P x h)
//!          H2 = H1 + gelu(W_mix H1 + b_mix)                  mixes across patches
//!          Z  = H2 W_out + b_out                             (P x d)
//!          embedding = mean_p Z_p                            (d)
//! decoder  G1 = gelu(Z W_dec + b_dec)
//!          G2 = G1 + gelu(W_dmix G1 + b_dmix)
//!          x^ = G2 W_rec + b_rec                             (P x patch_len)
//! loss     sum((1 - m) * (x - x^)^2) / sum(1 - m)
//! ```
//!
//! Only masked samples contribute to the loss. `gelu` is the tanh
//! approximation. Gradients are computed by hand and checked against finite
//! differences in the tests.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::canonical::digest;
use crate::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::optim::{AdamW, TrainConfig};
use crate::rng::{self, tag};

/// Patch-wise masking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    /// Samples per patch; also the token length of the encoder.
    pub patch_len: usize,
    /// Fraction of patches hidden per example, rounded to a whole number of
    /// patches and kept within `[1, P - 1]`.
    pub mask_frac: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { patch_len: 50, mask_frac: 0.5, seed: 0 }
    }
}

impl MaskConfig {
    pub fn validate(&self, input_len: usize) -> Result<()> {
        if self.patch_len == 0 || !input_len.is_multiple_of(self.patch_len) {
            return Err(Error::param(format!("patch_len {} must divide the epoch length {input_len}", self.patch_len)));
        }
        if input_len / self.patch_len < 2 {
            return Err(Error::param("need at least two patches"));
        }
        if !(self.mask_frac > 0.0 && self.mask_frac < 1.0) {
            return Err(Error::param(format!("mask_frac must lie in (0, 1), got {}", self.mask_frac)));
        }
        Ok(())
    }

    fn n_masked(&self, n_patches: usize) -> usize {
        ((self.mask_frac * n_patches as f64).round() as usize).clamp(1, n_patches - 1)
    }
}

/// How inputs are scaled before the network sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// One mean and standard deviation over the whole training set, stored
    /// with the model. Keeps amplitude differences between epochs.
    #[default]
    Global,
    /// Each epoch z-scored on its own.
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub hidden: usize,
    pub d_latent: usize,
    /// Multiplier on the uniform `+-1/sqrt(fan_in)` initialization.
    pub init_scale: f64,
    pub input_scaling: InputScaling,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { hidden: 64, d_latent: 32, init_scale: 0.1, input_scaling: InputScaling::Global }
    }
}

/// All trainable tensors. Field order is the flattening order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeParams {
    pub tok_w: Array2<f64>,
    pub tok_b: Array1<f64>,
    pub pos: Array2<f64>,
    pub mix_w: Array2<f64>,
    pub mix_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
    pub dec_w: Array2<f64>,
    pub dec_b: Array1<f64>,
    pub dmix_w: Array2<f64>,
    pub dmix_b: Array1<f64>,
    pub rec_w: Array2<f64>,
    pub rec_b: Array1<f64>,
}

macro_rules! each_tensor {
    ($self:ident, $f:ident) => {{
        $f($self.tok_w.as_slice_mut().expect("contiguous"));
        $f($self.tok_b.as_slice_mut().expect("contiguous"));
        $f($self.pos.as_slice_mut().expect("contiguous"));
        $f($self.mix_w.as_slice_mut().expect("contiguous"));
        $f($self.mix_b.as_slice_mut().expect("contiguous"));
        $f($self.out_w.as_slice_mut().expect("contiguous"));
        $f($self.out_b.as_slice_mut().expect("contiguous"));
        $f($self.dec_w.as_slice_mut().expect("contiguous"));
        $f($self.dec_b.as_slice_mut().expect("contiguous"));
        $f($self.dmix_w.as_slice_mut().expect("contiguous"));
        $f($self.dmix_b.as_slice_mut().expect("contiguous"));
        $f($self.rec_w.as_slice_mut().expect("contiguous"));
        $f($self.rec_b.as_slice_mut().expect("contiguous"));
    }};
}

impl AeParams {
    pub fn zeros(patch_len: usize, n_patches: usize, hidden: usize, d_latent: usize) -> Self {
        let (pl, p, h, d) = (patch_len, n_patches, hidden, d_latent);
        Self {
            tok_w: Array2::zeros((pl, h)),
            tok_b: Array1::zeros(h),
            pos: Array2::zeros((p, h)),
            mix_w: Array2::zeros((p, p)),
            mix_b: Array1::zeros(p),
            out_w: Array2::zeros((h, d)),
            out_b: Array1::zeros(d),
            dec_w: Array2::zeros((d, h)),
            dec_b: Array1::zeros(h),
            dmix_w: Array2::zeros((p, p)),
            dmix_b: Array1::zeros(p),
            rec_w: Array2::zeros((h, pl)),
            rec_b: Array1::zeros(pl),
        }
    }

    fn init(patch_len: usize, n_patches: usize, arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(patch_len, n_patches, arch.hidden, arch.d_latent);
        let s = arch.init_scale;
        let mut fill = |a: &mut [f64], fan_in: usize| {
            let bound = s / (fan_in as f64).sqrt();
            for v in a.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        };
        let (pl, np, h, d) = (patch_len, n_patches, arch.hidden, arch.d_latent);
        fill(p.tok_w.as_slice_mut().expect("contiguous"), pl);
        fill(p.tok_b.as_slice_mut().expect("contiguous"), pl);
        fill(p.mix_w.as_slice_mut().expect("contiguous"), np);
        fill(p.mix_b.as_slice_mut().expect("contiguous"), np);
        fill(p.out_w.as_slice_mut().expect("contiguous"), h);
        fill(p.out_b.as_slice_mut().expect("contiguous"), h);
        fill(p.dec_w.as_slice_mut().expect("contiguous"), d);
        fill(p.dec_b.as_slice_mut().expect("contiguous"), d);
        fill(p.dmix_w.as_slice_mut().expect("contiguous"), np);
        fill(p.dmix_b.as_slice_mut().expect("contiguous"), np);
        fill(p.rec_w.as_slice_mut().expect("contiguous"), h);
        fill(p.rec_b.as_slice_mut().expect("contiguous"), h);
        p
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        let mut count = |a: &mut [f64]| n += a.len();
        let mut me = self.clone();
        each_tensor!(me, count);
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut me = self.clone();
        let mut push = |a: &mut [f64]| out.extend_from_slice(a);
        each_tensor!(me, push);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        let mut take = |a: &mut [f64]| {
            a.copy_from_slice(&flat[off..off + a.len()]);
            off += a.len();
        };
        each_tensor!(self, take);
        debug_assert_eq!(off, flat.len());
    }

    fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Intermediates of one forward pass over `b` examples (`b * P` token rows).
struct Cache {
    xp: Array2<f64>,
    a1: Array2<f64>,
    h1: Array2<f64>,
    m1: Array2<f64>,
    h2: Array2<f64>,
    z: Array2<f64>,
    a3: Array2<f64>,
    g1: Array2<f64>,
    m2: Array2<f64>,
    g2: Array2<f64>,
    y: Array2<f64>,
}

/// `out[b*P + p, :] = w[p, :] . x[b*P .. b*P + P, :] + bias[p]` for every block b.
fn mix_blocks(w: &Array2<f64>, bias: &Array1<f64>, x: &Array2<f64>, n_patches: usize) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    let b = x.nrows() / n_patches;
    for i in 0..b {
        let rows = s![i * n_patches..(i + 1) * n_patches, ..];
        let mut blk = out.slice_mut(rows);
        blk.assign(&w.dot(&x.slice(rows)));
        blk += &bias.view().insert_axis(Axis(1));
    }
    out
}

/// Gradient of [`mix_blocks`] given upstream `d_out`: returns `(d_x, d_w, d_bias)`.
fn mix_blocks_back(
    w: &Array2<f64>,
    x: &Array2<f64>,
    d_out: &Array2<f64>,
    n_patches: usize,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let mut dx = Array2::zeros(x.raw_dim());
    let mut dw = Array2::zeros(w.raw_dim());
    let mut db = Array1::zeros(n_patches);
    let b = x.nrows() / n_patches;
    for i in 0..b {
        let rows = s![i * n_patches..(i + 1) * n_patches, ..];
        let g = d_out.slice(rows);
        dx.slice_mut(rows).assign(&w.t().dot(&g));
        dw += &g.dot(&x.slice(rows).t());
        db += &g.sum_axis(Axis(1));
    }
    (dx, dw, db)
}

fn add_row(mut m: Array2<f64>, v: &Array1<f64>) -> Array2<f64> {
    m += &v.view().insert_axis(Axis(0));
    m
}

/// Encoder activations kept for backprop: `(a1, h1, m1, h2, z)`.
type Activations = (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>);

fn encode_tokens(p: &AeParams, xp: &Array2<f64>, n_patches: usize) -> Activations {
    let mut a1 = add_row(xp.dot(&p.tok_w), &p.tok_b);
    let b = xp.nrows() / n_patches;
    for i in 0..b {
        let mut blk = a1.slice_mut(s![i * n_patches..(i + 1) * n_patches, ..]);
        blk += &p.pos;
    }
    let h1 = a1.mapv(gelu);
    let m1 = mix_blocks(&p.mix_w, &p.mix_b, &h1, n_patches);
    let h2 = &h1 + &m1.mapv(gelu);
    let z = add_row(h2.dot(&p.out_w), &p.out_b);
    (a1, h1, m1, h2, z)
}

fn forward(p: &AeParams, x_masked: ArrayView2<f64>, patch_len: usize) -> Cache {
    let n_patches = x_masked.ncols() / patch_len;
    let xp = x_masked
        .to_owned()
        .into_shape_with_order((x_masked.nrows() * n_patches, patch_len))
        .expect("row-major reshape");
    let (a1, h1, m1, h2, z) = encode_tokens(p, &xp, n_patches);
    let a3 = add_row(z.dot(&p.dec_w), &p.dec_b);
    let g1 = a3.mapv(gelu);
    let m2 = mix_blocks(&p.dmix_w, &p.dmix_b, &g1, n_patches);
    let g2 = &g1 + &m2.mapv(gelu);
    let y = add_row(g2.dot(&p.rec_w), &p.rec_b);
    Cache { xp, a1, h1, m1, h2, z, a3, g1, m2, g2, y }
}

fn backward(p: &AeParams, c: &Cache, dy: &Array2<f64>, n_patches: usize) -> AeParams {
    let mut g = AeParams::zeros(p.tok_w.nrows(), n_patches, p.tok_w.ncols(), p.out_w.ncols());
    g.rec_w = c.g2.t().dot(dy);
    g.rec_b = dy.sum_axis(Axis(0));
    let dg2 = dy.dot(&p.rec_w.t());

    let dm2 = &dg2 * &c.m2.mapv(gelu_grad);
    let (dg1_mix, dw, db) = mix_blocks_back(&p.dmix_w, &c.g1, &dm2, n_patches);
    g.dmix_w = dw;
    g.dmix_b = db;
    let dg1 = &dg2 + &dg1_mix;
    let da3 = &dg1 * &c.a3.mapv(gelu_grad);
    g.dec_w = c.z.t().dot(&da3);
    g.dec_b = da3.sum_axis(Axis(0));
    let dz = da3.dot(&p.dec_w.t());

    g.out_w = c.h2.t().dot(&dz);
    g.out_b = dz.sum_axis(Axis(0));
    let dh2 = dz.dot(&p.out_w.t());
    let dm1 = &dh2 * &c.m1.mapv(gelu_grad);
    let (dh1_mix, dw, db) = mix_blocks_back(&p.mix_w, &c.h1, &dm1, n_patches);
    g.mix_w = dw;
    g.mix_b = db;
    let dh1 = &dh2 + &dh1_mix;
    let da1 = &dh1 * &c.a1.mapv(gelu_grad);
    g.tok_w = c.xp.t().dot(&da1);
    g.tok_b = da1.sum_axis(Axis(0));
    let b = da1.nrows() / n_patches;
    for i in 0..b {
        g.pos += &da1.slice(s![i * n_patches..(i + 1) * n_patches, ..]);
    }
    g
}

/// Masked reconstruction loss and its gradient.
///
/// `x` holds scaled inputs (`b x L`), `keep` the patch mask (`b x P`, 1 =
/// visible). Examples whose mask keeps every patch contribute nothing to the
/// loss or the gradient; if no sample is masked the loss is 0.
pub fn masked_loss_and_grad(params: &AeParams, x: ArrayView2<f64>, keep: ArrayView2<f64>) -> (f64, AeParams) {
    let patch_len = params.tok_w.nrows();
    let n_patches = keep.ncols();
    let keep_s = expand_mask(keep, patch_len);
    let xm = &x * &keep_s;
    let c = forward(params, xm.view(), patch_len);
    let y = c.y.view().into_shape_with_order(x.raw_dim()).expect("reshape");
    let w = keep_s.mapv(|k| 1.0 - k);
    let count = w.sum();
    if count == 0.0 {
        let zeros = AeParams::zeros(patch_len, n_patches, params.tok_w.ncols(), params.out_w.ncols());
        return (0.0, zeros);
    }
    let loss = masked_loss(x, y, keep);
    let resid = &(&y - &x) * &w;
    let dy = (resid * (2.0 / count)).into_shape_with_order(c.y.raw_dim()).expect("reshape");
    (loss, backward(params, &c, &dy, n_patches))
}

/// Mean squared error between `x` and its reconstruction `recon` over the
/// hidden samples only (`keep` is the `b x P` patch mask, 1 = visible).
/// Returns 0 when nothing is hidden.
pub fn masked_loss(x: ArrayView2<f64>, recon: ArrayView2<f64>, keep: ArrayView2<f64>) -> f64 {
    let patch_len = x.ncols() / keep.ncols();
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((i, j), &v) in x.indexed_iter() {
        if keep[[i, j / patch_len]] == 0.0 {
            let r = recon[[i, j]] - v;
            sum += r * r;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn expand_mask(keep: ArrayView2<f64>, patch_len: usize) -> Array2<f64> {
    Array2::from_shape_fn((keep.nrows(), keep.ncols() * patch_len), |(i, j)| keep[[i, j / patch_len]])
}

fn sample_keep(n_rows: usize, n_patches: usize, n_masked: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut keep = Array2::ones((n_rows, n_patches));
    for i in 0..n_rows {
        let perm = rng::permutation(n_patches, rng);
        for &p in &perm[..n_masked] {
            keep[[i, p]] = 0.0;
        }
    }
    keep
}

/// A trained autoencoder and everything needed to embed new epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedAEModel {
    /// Always `"masked_ae"`; marks the JSON file as a model artifact.
    pub model_kind: String,
    pub input_len: usize,
    pub arch: ArchConfig,
    pub mask: MaskConfig,
    pub train: TrainConfig,
    /// Global input mean and standard deviation (`0`, `1` for per-epoch scaling).
    pub input_mean: f64,
    pub input_std: f64,
    pub params: AeParams,
    /// Mean masked loss per training epoch.
    pub train_log: Vec<f64>,
}

impl MaskedAEModel {
    pub fn n_patches(&self) -> usize {
        self.input_len / self.mask.patch_len
    }

    /// Latent bias `b_out`; the embedding of any input when every encoder
    /// weight is zero.
    pub fn latent_bias(&self) -> &Array1<f64> {
        &self.params.out_b
    }

    fn scale(&self, epochs: &EpochSet) -> Array2<f64> {
        scale_inputs(epochs, self.arch.input_scaling, self.input_mean, self.input_std)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.params.all_finite() {
            return Err(Error::NonFinite("model weights".into()));
        }
        self.mask.validate(self.input_len)?;
        if self.params.out_w.ncols() != self.arch.d_latent {
            return Err(Error::Shape("encoder output width differs from d_latent".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> Result<String> {
        digest(self)
    }
}

fn scale_inputs(epochs: &EpochSet, scaling: InputScaling, mean: f64, std: f64) -> Array2<f64> {
    let mut x = epochs.data.mapv(f64::from);
    match scaling {
        InputScaling::Global => {
            let inv = if std > 0.0 { 1.0 / std } else { 1.0 };
            x.mapv_inplace(|v| (v - mean) * inv);
        }
        InputScaling::PerEpoch => {
            for mut row in x.rows_mut() {
                let n = row.len() as f64;
                let mu = row.sum() / n;
                let sd = (row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
                let inv = if sd > 0.0 { 1.0 / sd } else { 0.0 };
                row.mapv_inplace(|v| (v - mu) * inv);
            }
        }
    }
    x
}

/// Train on single-channel `epochs` by minimizing the masked loss.
///
/// Each epoch visits examples in the order `rng::permutation` draws from
/// `(train.seed, [SHUFFLE, epoch])`; masks for batch `k` of epoch `e` come
/// from `(mask.seed, [MASK, e, k])`. Weights are initialized from
/// `(train.seed, [INIT])`.
pub fn train_masked_ae(
    epochs: &EpochSet,
    mask: &MaskConfig,
    arch: &ArchConfig,
    train: &TrainConfig,
) -> Result<MaskedAEModel> {
    epochs.require_single_channel()?;
    train.validate()?;
    let l = epochs.n_samples();
    mask.validate(l)?;
    if arch.hidden == 0 || arch.d_latent == 0 {
        return Err(Error::param("hidden and d_latent must be >= 1"));
    }
    let n = epochs.len();
    if n < 10 * train.batch {
        return Err(Error::param(format!("need at least 10 x batch = {} epochs, got {n}", 10 * train.batch)));
    }
    let (input_mean, input_std) = match arch.input_scaling {
        InputScaling::Global => {
            let cnt = epochs.data.len() as f64;
            let mean = epochs.data.iter().map(|&v| f64::from(v)).sum::<f64>() / cnt;
            let var = epochs.data.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / cnt;
            (mean, var.sqrt())
        }
        InputScaling::PerEpoch => (0.0, 1.0),
    };
    let x = scale_inputs(epochs, arch.input_scaling, input_mean, input_std);
    let n_patches = l / mask.patch_len;
    let n_masked = mask.n_masked(n_patches);
    let mut params = AeParams::init(mask.patch_len, n_patches, arch, &mut rng::stream(train.seed, &[tag::INIT]));
    let mut flat = params.to_flat();
    let mut opt = AdamW::new(flat.len(), train);
    let mut log = Vec::with_capacity(train.epochs);
    let mut step = 0usize;
    for e in 0..train.epochs {
        let lr = train.lr_at(e);
        let order = rng::permutation(n, &mut rng::stream(train.seed, &[tag::SHUFFLE, e as u64]));
        let mut total = 0.0;
        let mut batches = 0usize;
        for (k, idx) in order.chunks(train.batch).enumerate() {
            let xb = x.select(Axis(0), idx);
            let keep = sample_keep(
                idx.len(),
                n_patches,
                n_masked,
                &mut rng::stream(mask.seed, &[tag::MASK, e as u64, k as u64]),
            );
            let (loss, grad) = masked_loss_and_grad(&params, xb.view(), keep.view());
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            opt.step(&mut flat, &grad.to_flat(), lr);
            params.set_flat(&flat);
            total += loss;
            batches += 1;
            step += 1;
        }
        log.push(total / batches as f64);
    }
    let model = MaskedAEModel {
        model_kind: "masked_ae".into(),
        input_len: l,
        arch: *arch,
        mask: *mask,
        train: *train,
        input_mean,
        input_std,
        params,
        train_log: log,
    };
    if !model.params.all_finite() {
        return Err(Error::Diverged { step, loss: f64::NAN });
    }
    Ok(model)
}

/// Encoder output on the unmasked input, mean-pooled over patches.
pub fn embed_ae(model: &MaskedAEModel, epochs: &EpochSet) -> Result<EmbeddingSet> {
    epochs.require_single_channel()?;
    if epochs.n_samples() != model.input_len {
        return Err(Error::Shape(format!(
            "model expects epochs of {} samples, got {}",
            model.input_len,
            epochs.n_samples()
        )));
    }
    model.validate()?;
    let x = model.scale(epochs);
    let pl = model.mask.patch_len;
    let np = model.n_patches();
    let d = model.arch.d_latent;
    let mut out = Array2::<f64>::zeros((epochs.len(), d));
    const CHUNK: usize = 256;
    for start in (0..epochs.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(epochs.len());
        let xp = x
            .slice(s![start..end, ..])
            .to_owned()
            .into_shape_with_order(((end - start) * np, pl))
            .expect("row-major reshape");
        let (_, _, _, _, z) = encode_tokens(&model.params, &xp, np);
        for i in 0..end - start {
            let pooled = z.slice(s![i * np..(i + 1) * np, ..]).mean_axis(Axis(0)).expect("P >= 1");
            out.row_mut(start + i).assign(&pooled);
        }
    }
    EmbeddingSet::from_f64(&out, "masked_ae", model.digest()?)
}
