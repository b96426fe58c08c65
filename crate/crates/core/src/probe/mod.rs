//! Linear classification probes on frozen embeddings, scored by Cohen's kappa.

mod kappa;
mod labels;

pub use kappa::{cohens_kappa, confusion_matrix, kappa_from_confusion, Kappa};
pub use labels::{LabelKind, LabelSet, Split};

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::optim::{AdamW, TrainConfig};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Candidate learning rates; one is picked per run on a validation holdout.
    pub lr_grid: Vec<f64>,
    pub lr_min: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub n_seeds: usize,
    /// Fraction of each training class held out to choose the learning rate.
    pub holdout_frac: f64,
    /// Z-score features with training-split statistics.
    pub standardize: bool,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 31,
            batch: 64,
            lr_grid: vec![1e-2, 1e-3, 5e-4],
            lr_min: 1e-5,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-2,
            seed: 0,
            n_seeds: 5,
            holdout_frac: 0.1,
            standardize: true,
        }
    }
}

impl ProbeTrainConfig {
    fn train_config(&self, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr,
            lr_min: self.lr_min,
            betas: self.betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty() {
            return Err(Error::param("lr_grid is empty"));
        }
        for &lr in &self.lr_grid {
            self.train_config(lr, 0).validate()?;
        }
        if self.n_seeds == 0 {
            return Err(Error::param("n_seeds must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(Error::param(format!("holdout_frac must lie in [0, 1), got {}", self.holdout_frac)));
        }
        Ok(())
    }
}

/// Softmax-linear classifier `softmax(((x - mean) / scale) W + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub feature_mean: Array1<f64>,
    pub feature_scale: Array1<f64>,
    pub lr: f64,
    /// Mean training cross-entropy per epoch.
    pub train_log: Vec<f64>,
}

impl LinearProbe {
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        ((&x - &self.feature_mean) / &self.feature_scale).dot(&self.weights) + &self.bias
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.logits(x).rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
    }
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mean cross-entropy of `logits` against `y` and its gradient w.r.t. the logits.
fn softmax_xent(logits: &Array2<f64>, y: &[usize]) -> (f64, Array2<f64>) {
    let b = logits.nrows() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for ((mut row, raw), &t) in grad.rows_mut().into_iter().zip(logits.rows()).zip(y) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        loss += m + z.ln() - raw[t];
        row.mapv_inplace(|v| v / z);
        row[t] -= 1.0;
    }
    grad /= b;
    (loss / b, grad)
}

fn scaler(x: ArrayView2<f64>, standardize: bool) -> (Array1<f64>, Array1<f64>) {
    if !standardize {
        return (Array1::zeros(x.ncols()), Array1::ones(x.ncols()));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let sd = x.var_axis(Axis(0), 0.0).mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    (mean, sd)
}

/// Fit a probe on rows `x` with labels `y` (all in `[0, k)`).
///
/// Weights start uniform in `+-1/sqrt(d)` from `(seed, [INIT])`; epoch `e`
/// visits examples in the order drawn from `(seed, [SHUFFLE, e])`.
pub fn fit_probe(
    x: ArrayView2<f64>,
    y: &[usize],
    k: usize,
    cfg: &TrainConfig,
    standardize: bool,
) -> Result<LinearProbe> {
    cfg.validate()?;
    let (n, d) = x.dim();
    if n == 0 || y.len() != n {
        return Err(Error::Shape(format!("{n} rows vs {} labels", y.len())));
    }
    let (mean, scale) = scaler(x, standardize);
    let xs = (&x - &mean) / &scale;
    let mut init = rng::stream(cfg.seed, &[tag::INIT]);
    let bound = 1.0 / (d.max(1) as f64).sqrt();
    let mut flat: Vec<f64> = (0..d * k).map(|_| init.random_range(-bound..bound)).collect();
    flat.extend(std::iter::repeat_n(0.0, k));
    let mut opt = AdamW::new(flat.len(), cfg);
    let mut log = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let lr = cfg.lr_at(e);
        let order = rng::permutation(n, &mut rng::stream(cfg.seed, &[tag::SHUFFLE, e as u64]));
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch) {
            let w = ArrayView2::from_shape((d, k), &flat[..d * k]).expect("shape");
            let b = ndarray::ArrayView1::from(&flat[d * k..]);
            let xb = xs.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let (loss, g) = softmax_xent(&(xb.dot(&w) + b), &yb);
            if !loss.is_finite() {
                return Err(Error::Diverged { step: e, loss });
            }
            let gw = xb.t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            let grads: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
            opt.step(&mut flat, &grads, lr);
            total += loss * idx.len() as f64;
        }
        log.push(total / n as f64);
    }
    Ok(LinearProbe {
        weights: Array2::from_shape_vec((d, k), flat[..d * k].to_vec()).expect("shape"),
        bias: Array1::from(flat[d * k..].to_vec()),
        feature_mean: mean,
        feature_scale: scale,
        lr: cfg.lr,
        train_log: log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: LabelKind,
    pub label_names: Vec<String>,
    pub kappa_mean: f64,
    /// Sample standard deviation over runs; 0 for a single run.
    pub kappa_std: f64,
    pub per_run_kappa: Vec<f64>,
    pub per_run_lr: Vec<f64>,
    pub per_run_seed: Vec<u64>,
    /// Runs whose kappa hit the `p_e = 1` convention.
    pub degenerate_runs: Vec<usize>,
    /// Mean test accuracy over runs.
    pub accuracy: f64,
    /// Test confusion matrix of the first run, rows = truth.
    pub confusion: Vec<Vec<u64>>,
    pub n_train: usize,
    pub n_test: usize,
}

impl ProbeReport {
    /// The confusion matrix with a header row of predicted class names.
    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        write!(buf, "truth").expect("vec write");
        for name in &self.label_names {
            write!(buf, ",{name}").expect("vec write");
        }
        writeln!(buf).expect("vec write");
        for (name, row) in self.label_names.iter().zip(&self.confusion) {
            write!(buf, "{name}").expect("vec write");
            for c in row {
                write!(buf, ",{c}").expect("vec write");
            }
            writeln!(buf).expect("vec write");
        }
        write_atomic(path, &buf)
    }
}

/// Stratified holdout: the last `round(frac * n_c)` training indices of each
/// class (in the order drawn from `rng`), keeping at least one per class for fitting.
fn holdout(train: &[usize], y: &[usize], k: usize, frac: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let perm = rng::permutation(train.len(), rng);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &p in &perm {
        by_class[y[train[p]]].push(train[p]);
    }
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for members in by_class {
        let n_val = ((frac * members.len() as f64).round() as usize).min(members.len().saturating_sub(1));
        let cut = members.len() - n_val;
        fit.extend_from_slice(&members[..cut]);
        val.extend_from_slice(&members[cut..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

struct Run {
    probe: LinearProbe,
    kappa: Kappa,
    accuracy: f64,
    confusion: Vec<Vec<u64>>,
    seed: u64,
}

fn one_run(x: &Array2<f64>, labels: &LabelSet, split: &Split, cfg: &ProbeTrainConfig, run: usize) -> Result<Run> {
    let k = labels.n_classes();
    let y = &labels.labels;
    let seed = rng::sub_seed(cfg.seed, &[tag::PROBE, run as u64]);
    let fit_on = |rows: &[usize], lr: f64| {
        let ys: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
        fit_probe(x.select(Axis(0), rows).view(), &ys, k, &cfg.train_config(lr, seed), cfg.standardize)
    };
    let eval = |probe: &LinearProbe, rows: &[usize]| -> Result<(Vec<Vec<u64>>, Kappa)> {
        let pred = probe.predict(x.select(Axis(0), rows).view());
        let truth: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
        let m = confusion_matrix(&pred, &truth, k)?;
        let kap = kappa_from_confusion(&m)?;
        Ok((m, kap))
    };
    let lr = if cfg.lr_grid.len() == 1 || cfg.holdout_frac == 0.0 {
        cfg.lr_grid[0]
    } else {
        let (fit_rows, val_rows) = holdout(&split.train, y, k, cfg.holdout_frac, &mut rng::stream(seed, &[tag::FOLD]));
        if val_rows.is_empty() {
            cfg.lr_grid[0]
        } else {
            let mut best = (cfg.lr_grid[0], f64::NEG_INFINITY);
            for &lr in &cfg.lr_grid {
                let kap = eval(&fit_on(&fit_rows, lr)?, &val_rows)?.1.value;
                if kap > best.1 {
                    best = (lr, kap);
                }
            }
            best.0
        }
    };
    let probe = fit_on(&split.train, lr)?;
    let (confusion, kappa) = eval(&probe, &split.test)?;
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Run { probe, kappa, accuracy: correct as f64 / split.test.len() as f64, confusion, seed })
}

/// Train `cfg.n_seeds` probes and evaluate each on the test split.
///
/// Run `r` uses the seed `sub_seed(cfg.seed, [PROBE, r])`. Its learning rate
/// is the grid entry with the best kappa on a stratified holdout of the
/// training split (ties go to the earlier entry), after which the probe is
/// refit on the whole training split. The returned probe is that of run 0.
pub fn train_linear_probe(
    emb: &EmbeddingSet,
    labels: &LabelSet,
    split: &Split,
    cfg: &ProbeTrainConfig,
) -> Result<(LinearProbe, ProbeReport)> {
    cfg.validate()?;
    labels.validate()?;
    labels.require_len(emb.len())?;
    split.validate(emb.len())?;
    let k = labels.n_classes();
    let mut present = vec![false; k];
    for &i in &split.train {
        present[labels.labels[i]] = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::param(format!("class {:?} is absent from the training split", labels.label_names[c])));
    }
    let x = emb.to_f64();
    let runs: Vec<Run> =
        (0..cfg.n_seeds).into_par_iter().map(|r| one_run(&x, labels, split, cfg, r)).collect::<Result<_>>()?;
    let kappas: Vec<f64> = runs.iter().map(|r| r.kappa.value).collect();
    let n = kappas.len() as f64;
    let mean = kappas.iter().sum::<f64>() / n;
    let std = if kappas.len() > 1 {
        (kappas.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let report = ProbeReport {
        kind: labels.kind,
        label_names: labels.label_names.clone(),
        kappa_mean: mean,
        kappa_std: std,
        per_run_kappa: kappas,
        per_run_lr: runs.iter().map(|r| r.probe.lr).collect(),
        per_run_seed: runs.iter().map(|r| r.seed).collect(),
        degenerate_runs: runs.iter().enumerate().filter(|(_, r)| r.kappa.degenerate).map(|(i, _)| i).collect(),
        accuracy: runs.iter().map(|r| r.accuracy).sum::<f64>() / n,
        confusion: runs[0].confusion.clone(),
        n_train: split.train.len(),
        n_test: split.test.len(),
    };
    let probe = runs.into_iter().next().expect("n_seeds >= 1").probe;
    Ok((probe, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub task: ProbeReport,
    pub subject: ProbeReport,
    /// `kappa_subject - kappa_task` on mean kappas.
    pub kappa_gap: f64,
}

/// Task and subject probes trained on the same split.
pub fn subject_task_battery(
    emb: &EmbeddingSet,
    subjects: &LabelSet,
    tasks: &LabelSet,
    split: &Split,
    cfg: &ProbeTrainConfig,
) -> Result<BatteryReport> {
    if subjects.n_classes() < 2 {
        return Err(Error::param("subject probe needs at least 2 subjects"));
    }
    if tasks.n_classes() < 2 {
        return Err(Error::param("task probe needs at least 2 tasks"));
    }
    let (_, task) = train_linear_probe(emb, tasks, split, cfg)?;
    let (_, subject) = train_linear_probe(emb, subjects, split, cfg)?;
    Ok(BatteryReport { kappa_gap: subject.kappa_mean - task.kappa_mean, task, subject })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xent_gradient_matches_differences() {
        let logits = ndarray::arr2(&[[0.3, -1.2, 0.5], [2.0, 0.1, -0.4]]);
        let y = [2, 0];
        let (_, g) = softmax_xent(&logits, &y);
        for i in 0..2 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[[i, j]] += 1e-6;
                let mut m = logits.clone();
                m[[i, j]] -= 1e-6;
                let num = (softmax_xent(&p, &y).0 - softmax_xent(&m, &y).0) / 2e-6;
                assert!((num - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn xent_is_stable_for_large_logits() {
        let (l, _) = softmax_xent(&ndarray::arr2(&[[1000.0, 0.0]]), &[1]);
        assert!((l - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn holdout_is_stratified() {
        let train: Vec<usize> = (0..40).collect();
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 30)).collect();
        let (fit, val) = holdout(&train, &y, 2, 0.1, &mut rng::stream(1, &[]));
        assert_eq!(val.len(), 4);
        assert_eq!(val.iter().filter(|&&i| y[i] == 1).count(), 1);
        assert_eq!(fit.len() + val.len(), 40);
    }
}
