//! Linear decodability of a scalar target from embeddings: ridge regression
//! under nested cross-validation, scored by out-of-fold R².

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// `n` log-spaced values from `lo` to `hi`, both included.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    crate::spectrum::linspace(lo.log10(), hi.log10(), n).into_iter().map(|e| 10f64.powf(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CVConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub lambda_grid: Vec<f64>,
    pub shuffle_seed: u64,
    /// Standardize features with training-split statistics before each fit.
    pub standardize: bool,
}

impl Default for CVConfig {
    fn default() -> Self {
        Self {
            outer_folds: 5,
            inner_folds: 5,
            lambda_grid: logspace(1e-6, 1e3, 10),
            shuffle_seed: 0,
            standardize: true,
        }
    }
}

impl CVConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(Error::param("outer_folds and inner_folds must be >= 2"));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::param("lambda_grid is empty"));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::param(format!("lambda_grid entries must be positive, got {l}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub weights: Array1<f64>,
    pub intercept: f64,
}

impl RidgeFit {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.intercept
    }
}

/// Centered design with its thin SVD, reusable across penalties.
struct RidgeSystem {
    x_mean: Array1<f64>,
    y_mean: f64,
    u_t_y: DVector<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

impl RidgeSystem {
    fn new(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if n < 2 {
            return Err(Error::param(format!("ridge needs n >= 2 samples, got {n}")));
        }
        if y.len() != n {
            return Err(Error::Shape(format!("{n} rows but {} targets", y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ridge inputs".into()));
        }
        let x_mean = x.mean_axis(Axis(0)).expect("n >= 2");
        let y_mean = y.mean().expect("n >= 2");
        let xc = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - x_mean[j]);
        let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);
        let svd = xc.svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Factorization("SVD did not return U".into()))?;
        let v_t = svd.v_t.ok_or_else(|| Error::Factorization("SVD did not return V".into()))?;
        Ok(Self { x_mean, y_mean, u_t_y: u.transpose() * yc, s: svd.singular_values, v: v_t.transpose() })
    }

    fn solve(&self, lambda: f64) -> RidgeFit {
        let shrunk = DVector::from_fn(self.s.len(), |k, _| {
            let s = self.s[k];
            s / (s * s + lambda) * self.u_t_y[k]
        });
        let w = &self.v * shrunk;
        let weights = Array1::from_iter(w.iter().copied());
        let intercept = self.y_mean - self.x_mean.dot(&weights);
        RidgeFit { weights, intercept }
    }
}

/// Minimize `|y - Xw - b|^2 + lambda |w|^2` with the intercept `b` left
/// unpenalized. Solved through the SVD of the centered design, no
/// standardization.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<RidgeFit> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param(format!("lambda must be > 0, got {lambda}")));
    }
    Ok(RidgeSystem::new(x, y)?.solve(lambda))
}

/// `1 - SS_res / SS_tot`; `None` when the targets are constant.
pub fn r2_score(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Column means and scales from `x`; zero-variance columns get scale 1.
fn column_scaler(x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let sd = x.var_axis(Axis(0), 0.0).mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    (mean, sd)
}

fn apply_scaler(x: ArrayView2<f64>, mean: &Array1<f64>, sd: &Array1<f64>) -> Array2<f64> {
    (&x - mean) / sd
}

/// Split `idx` into `k` contiguous chunks whose sizes differ by at most one.
fn chunks(idx: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = idx.len();
    (0..k).map(|f| idx[f * n / k..(f + 1) * n / k].to_vec()).collect()
}

fn complement(all: &[Vec<usize>], skip: usize) -> Vec<usize> {
    let mut out: Vec<usize> =
        all.iter().enumerate().filter(|(f, _)| *f != skip).flat_map(|(_, c)| c.iter().copied()).collect();
    out.sort_unstable();
    out
}

/// A fit on standardized features with the column means and scales used.
type ScaledFit = (RidgeFit, Array1<f64>, Array1<f64>);

/// Fit on `train` rows (optionally standardized) and return a predictor for raw rows.
fn fit_scaled(
    x: ArrayView2<f64>,
    y: &[f64],
    train: &[usize],
    lambdas: &[f64],
    standardize: bool,
) -> Result<Vec<ScaledFit>> {
    let xt = x.select(Axis(0), train);
    let yt = Array1::from_iter(train.iter().map(|&i| y[i]));
    let (mean, sd) =
        if standardize { column_scaler(xt.view()) } else { (Array1::zeros(x.ncols()), Array1::ones(x.ncols())) };
    let sys = RidgeSystem::new(apply_scaler(xt.view(), &mean, &sd).view(), yt.view())?;
    Ok(lambdas.iter().map(|&l| (sys.solve(l), mean.clone(), sd.clone())).collect())
}

fn predict_rows(fit: &ScaledFit, x: ArrayView2<f64>, rows: &[usize]) -> Vec<f64> {
    let xs = apply_scaler(x.select(Axis(0), rows).view(), &fit.1, &fit.2);
    fit.0.predict(xs.view()).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodabilityReport {
    pub target_name: String,
    pub embedder_id: String,
    pub n: usize,
    pub d: usize,
    pub r2_pooled: f64,
    /// `None` for a fold whose test targets are constant.
    pub r2_per_fold: Vec<Option<f64>>,
    pub chosen_lambdas: Vec<f64>,
    /// Out-of-fold prediction for every sample, in input order.
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    /// Outer fold holding each sample out.
    pub fold_of: Vec<usize>,
    pub cv: CVConfig,
}

impl DecodabilityReport {
    /// `epoch_index,fold,y,y_hat` rows for scatter plots.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "epoch_index,fold,y,y_hat").expect("vec write");
        for i in 0..self.n {
            writeln!(
                buf,
                "{i},{},{},{}",
                self.fold_of[i],
                crate::canonical::format_float(self.targets[i]),
                crate::canonical::format_float(self.predictions[i])
            )
            .expect("vec write");
        }
        write_atomic(path, &buf)
    }
}

/// Nested cross-validated ridge from `emb` to `targets`.
///
/// Outer folds are contiguous chunks of a permutation drawn from
/// `(shuffle_seed, [FOLD])`; the inner folds of outer fold `k` come from
/// `(shuffle_seed, [FOLD, k + 1])` applied to that fold's training indices.
/// The penalty with the lowest mean inner validation MSE wins, ties going to
/// the smaller penalty.
pub fn linear_decodability(
    emb: &EmbeddingSet,
    targets: &[f64],
    cv: &CVConfig,
    target_name: &str,
) -> Result<DecodabilityReport> {
    cv.validate()?;
    let x = emb.to_f64();
    let n = x.nrows();
    if targets.len() != n {
        return Err(Error::Shape(format!("{n} embeddings but {} targets", targets.len())));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("targets".into()));
    }
    if targets.iter().all(|&t| t == targets[0]) {
        return Err(Error::Undefined("targets are constant, R^2 is undefined".into()));
    }
    let min_n = cv.outer_folds * cv.inner_folds.max(2);
    if n < min_n {
        return Err(Error::param(format!(
            "need at least {min_n} samples for {}x{} nested CV, got {n}",
            cv.outer_folds, cv.inner_folds
        )));
    }
    let mut lambdas = cv.lambda_grid.clone();
    lambdas.sort_by(f64::total_cmp);

    let perm = rng::permutation(n, &mut rng::stream(cv.shuffle_seed, &[tag::FOLD]));
    let outer = chunks(&perm, cv.outer_folds);

    let per_fold: Vec<(f64, Vec<f64>)> = (0..cv.outer_folds)
        .into_par_iter()
        .map(|k| -> Result<(f64, Vec<f64>)> {
            let train = complement(&outer, k);
            let inner_perm =
                rng::permutation(train.len(), &mut rng::stream(cv.shuffle_seed, &[tag::FOLD, k as u64 + 1]));
            let inner_idx: Vec<usize> = inner_perm.iter().map(|&i| train[i]).collect();
            let inner = chunks(&inner_idx, cv.inner_folds);
            let mut mse = vec![0.0; lambdas.len()];
            for j in 0..cv.inner_folds {
                let fit_rows = complement(&inner, j);
                let fits = fit_scaled(x.view(), targets, &fit_rows, &lambdas, cv.standardize)?;
                for (m, fit) in fits.iter().enumerate() {
                    let pred = predict_rows(fit, x.view(), &inner[j]);
                    let err: f64 = inner[j].iter().zip(&pred).map(|(&i, p)| (targets[i] - p).powi(2)).sum();
                    mse[m] += err / inner[j].len() as f64 / cv.inner_folds as f64;
                }
            }
            let mut best = 0;
            for m in 1..lambdas.len() {
                if mse[m] < mse[best] {
                    best = m;
                }
            }
            let fit = fit_scaled(x.view(), targets, &train, &lambdas[best..=best], cv.standardize)?;
            Ok((lambdas[best], predict_rows(&fit[0], x.view(), &outer[k])))
        })
        .collect::<Result<_>>()?;

    let mut predictions = vec![0.0; n];
    let mut fold_of = vec![0; n];
    let mut r2_per_fold = Vec::with_capacity(cv.outer_folds);
    let mut chosen_lambdas = Vec::with_capacity(cv.outer_folds);
    for (k, (lambda, pred)) in per_fold.into_iter().enumerate() {
        let y_k: Vec<f64> = outer[k].iter().map(|&i| targets[i]).collect();
        r2_per_fold.push(r2_score(&y_k, &pred));
        for (&i, p) in outer[k].iter().zip(pred) {
            predictions[i] = p;
            fold_of[i] = k;
        }
        chosen_lambdas.push(lambda);
    }
    let r2_pooled = r2_score(targets, &predictions).expect("targets are not constant");
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("out-of-fold predictions".into()));
    }
    Ok(DecodabilityReport {
        target_name: target_name.to_string(),
        embedder_id: emb.embedder_id.clone(),
        n,
        d: x.ncols(),
        r2_pooled,
        r2_per_fold,
        chosen_lambdas,
        predictions,
        targets: targets.to_vec(),
        fold_of,
        cv: cv.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn logspace_endpoints() {
        let g = logspace(1e-6, 1e3, 10);
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-6).abs() < 1e-18 && (g[9] - 1e3).abs() < 1e-9);
        assert!((g[1] / g[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn consistent_system_is_recovered() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| ((i + 1) as f64 * (j as f64 + 0.37)).sin());
        let w = arr1(&[1.5, -2.0, 0.25]);
        let y = x.dot(&w) + 3.0;
        let fit = ridge_fit(x.view(), y.view(), 1e-6).unwrap();
        for j in 0..3 {
            assert!((fit.weights[j] - w[j]).abs() / w[j].abs() < 1e-4);
        }
        assert!((fit.intercept - 3.0).abs() < 1e-4);
    }

    #[test]
    fn huge_penalty_shrinks_to_mean() {
        let x = arr2(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [2.0, 2.0]]);
        let y = arr1(&[1.0, 2.0, 3.0, 6.0]);
        let fit = ridge_fit(x.view(), y.view(), 1e9).unwrap();
        assert!(fit.weights.iter().all(|w| w.abs() < 1e-7));
        assert!((fit.intercept - 3.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = arr2(&[[1.0], [f64::NAN]]);
        assert!(ridge_fit(x.view(), arr1(&[1.0, 2.0]).view(), 1.0).is_err());
        let x = arr2(&[[1.0], [2.0]]);
        assert!(ridge_fit(x.view(), arr1(&[1.0, 2.0]).view(), 0.0).is_err());
        assert!(ridge_fit(x.slice(ndarray::s![..1, ..]), arr1(&[1.0]).view(), 1.0).is_err());
    }

    #[test]
    fn chunks_partition() {
        let idx: Vec<usize> = (0..13).collect();
        let c = chunks(&idx, 5);
        assert_eq!(c.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 3, 2, 3, 3]);
        assert_eq!(c.concat(), idx);
    }

    #[test]
    fn r2_of_constant_is_none() {
        assert_eq!(r2_score(&[1.0, 1.0], &[0.0, 2.0]), None);
        assert_eq!(r2_score(&[1.0, 2.0], &[1.0, 2.0]), Some(1.0));
    }
}
