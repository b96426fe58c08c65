//! Multichannel linear forward model `x_t = A z_t + e_t`.
//!
//! Each source `z_s` is an independent draw from its power spectrum, `A` is
//! the `C x N_s` leadfield and `e_t ~ N(0, S_e)` is sensor noise. Under
//! temporal stationarity the spatial covariance factorizes as
//!
//! ```text
//! S_x = A diag(v) A^T + S_e = S_ap + S_osc + S_e
//! ```
//!
//! where `v_s` is the variance of source `s` and `S_ap`, `S_osc` collect the
//! aperiodic and oscillatory sources.

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epochs::{EpochMeta, EpochSet};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::spectrum::{
    component_spectrum, spectrum_to_timeseries, synthesis_variance, Component, SignalConfig, SpectralParams, Spectrum,
    SpectrumOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Aperiodic,
    Oscillatory,
}

/// One source. An aperiodic source uses only the `1/f^beta` term of its
/// parameters; an oscillatory source only the peak term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub params: SpectralParams,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        match (self.kind, self.params.peaks.len()) {
            (SourceKind::Aperiodic, 0) | (SourceKind::Oscillatory, 1) => Ok(()),
            (SourceKind::Aperiodic, n) => Err(Error::param(format!("aperiodic source has {n} peaks, expected none"))),
            (SourceKind::Oscillatory, n) => {
                Err(Error::param(format!("oscillatory source has {n} peaks, expected one")))
            }
        }
    }

    pub fn spectrum(&self, opts: &SpectrumOptions) -> Result<Spectrum> {
        let component = match self.kind {
            SourceKind::Aperiodic => Component::Aperiodic,
            SourceKind::Oscillatory => Component::Oscillatory,
        };
        component_spectrum(&self.params, opts, component)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSpec {
    /// `C` rows of `N_s` gains.
    pub leadfield: Vec<Vec<f64>>,
    pub sources: Vec<SourceSpec>,
    /// `C x C` symmetric positive semi-definite noise covariance.
    pub noise_cov: Vec<Vec<f64>>,
    #[serde(default)]
    pub config: SignalConfig,
    pub n_trials: usize,
    #[serde(default)]
    pub options: SpectrumOptions,
}

impl Default for ForwardSpec {
    /// Four channels sharing one aperiodic source at unit gain, plus a 10 Hz
    /// oscillatory source seen only by channel 0 at gain 0.25.
    fn default() -> Self {
        let c = 4;
        Self {
            leadfield: vec![vec![1.0, 0.25], vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]],
            sources: vec![
                SourceSpec { kind: SourceKind::Aperiodic, params: SpectralParams::aperiodic(1.5, 1.0) },
                SourceSpec {
                    kind: SourceKind::Oscillatory,
                    params: SpectralParams::aperiodic(1.5, 1.0).with_peak(10.0, 1.0, 2.0),
                },
            ],
            noise_cov: (0..c).map(|i| (0..c).map(|j| if i == j { 1e-6 } else { 0.0 }).collect()).collect(),
            config: SignalConfig::default(),
            n_trials: 100,
            options: SpectrumOptions::default(),
        }
    }
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Shape(format!("{what} rows have unequal lengths")));
    }
    let m = Array2::from_shape_vec((r, c), rows.concat()).map_err(|e| Error::Shape(e.to_string()))?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(m)
}

/// Lower-triangular `L` with `L L^T = m` for a symmetric positive
/// semi-definite `m`. Pivots within `1e-10 * max(diag)` of zero are taken as
/// exact zeros, which requires the rest of that column to vanish too.
pub fn psd_cholesky(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape("covariance is not square".into()));
    }
    let scale = m.diag().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-10 * scale;
    for i in 0..n {
        for j in 0..i {
            if (m[[i, j]] - m[[j, i]]).abs() > tol.max(1e-300) {
                return Err(Error::Factorization(format!("covariance is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let d = m[[j, j]] - (0..j).map(|k| l[[j, k]] * l[[j, k]]).sum::<f64>();
        if d < -tol {
            return Err(Error::Factorization(format!("covariance is not positive semi-definite (pivot {j} = {d:e})")));
        }
        if d <= tol {
            for i in j + 1..n {
                let r = m[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
                if r.abs() > tol.max(1e-300).sqrt() * scale.sqrt() {
                    return Err(Error::Factorization(format!("covariance is not positive semi-definite (column {j})")));
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let r = m[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
            l[[i, j]] = r / djj;
        }
    }
    Ok(l)
}

impl ForwardSpec {
    pub fn n_channels(&self) -> usize {
        self.leadfield.len()
    }

    pub fn leadfield_matrix(&self) -> Result<Array2<f64>> {
        to_matrix(&self.leadfield, "leadfield")
    }

    pub fn noise_matrix(&self) -> Result<Array2<f64>> {
        to_matrix(&self.noise_cov, "noise_cov")
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.leadfield_matrix()?;
        let (c, ns) = a.dim();
        if c == 0 || ns == 0 {
            return Err(Error::param("leadfield needs at least one channel and one source"));
        }
        if ns != self.sources.len() {
            return Err(Error::Shape(format!("leadfield has {ns} columns for {} sources", self.sources.len())));
        }
        let noise = self.noise_matrix()?;
        if noise.dim() != (c, c) {
            return Err(Error::Shape(format!("noise_cov must be {c} x {c}")));
        }
        psd_cholesky(&noise)?;
        for s in &self.sources {
            s.validate()?;
            self.config.validate_for(s.params.f_max)?;
        }
        if self.n_trials == 0 {
            return Err(Error::param("n_trials must be >= 1"));
        }
        Ok(())
    }

    /// Variance of every draw of each source.
    pub fn source_variances(&self) -> Result<Vec<f64>> {
        self.sources.iter().map(|s| Ok(synthesis_variance(&s.spectrum(&self.options)?, &self.config))).collect()
    }
}

/// Draw `n_trials` epochs. Source `s` of trial `i` takes its phases from
/// `(seed, [SOURCE, i, s])` and the trial's noise from `(seed, [NOISE, i])`,
/// with `seed = config.seed`.
pub fn simulate(spec: &ForwardSpec) -> Result<EpochSet> {
    spec.validate()?;
    let a = spec.leadfield_matrix()?;
    let chol = psd_cholesky(&spec.noise_matrix()?)?;
    let noisy = chol.iter().any(|&v| v != 0.0);
    let spectra: Vec<Spectrum> = spec.sources.iter().map(|s| s.spectrum(&spec.options)).collect::<Result<_>>()?;
    let seed = spec.config.seed;
    let l = spec.config.n_samples();
    let c = a.nrows();
    let trials: Vec<Array2<f64>> = (0..spec.n_trials)
        .into_par_iter()
        .map(|i| {
            let mut z = Array2::<f64>::zeros((spectra.len(), l));
            for (s, spectrum) in spectra.iter().enumerate() {
                let mut rng = rng::stream(seed, &[tag::SOURCE, i as u64, s as u64]);
                let x = spectrum_to_timeseries(spectrum, &spec.config, &mut rng)?;
                z.row_mut(s).assign(&Array1::from(x));
            }
            let mut x = a.dot(&z);
            if noisy {
                let mut rng = rng::stream(seed, &[tag::NOISE, i as u64]);
                let white = Array2::from_shape_simple_fn((c, l), || StandardNormal.sample(&mut rng));
                x += &chol.dot(&white);
            }
            Ok(x)
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = trials.iter().map(|t| t.view()).collect();
    let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let meta = (0..spec.n_trials)
        .map(|i| EpochMeta { seed_used: rng::sub_seed(seed, &[tag::SOURCE, i as u64]), ..EpochMeta::default() })
        .collect();
    EpochSet::new(data.mapv(|v| v as f32), spec.config.fs, c, meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub sigma_x_hat: Vec<Vec<f64>>,
    pub sigma_x_model: Vec<Vec<f64>>,
    pub source_variances: Vec<f64>,
    pub trace_ap: f64,
    pub trace_osc: f64,
    /// `trace_ap / trace_osc`; absent when there is no oscillatory power.
    pub trace_ratio: Option<f64>,
    pub rel_frobenius_err: f64,
    pub n_pooled: usize,
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Compare the pooled spatial covariance of `epochs` with the model implied
/// by `spec`. The empirical covariance centers each channel on its pooled
/// mean and divides by the number of pooled samples.
pub fn covariance_check(epochs: &EpochSet, spec: &ForwardSpec) -> Result<CovarianceReport> {
    spec.validate()?;
    let a = spec.leadfield_matrix()?;
    let c = a.nrows();
    if epochs.n_channels != c {
        return Err(Error::Shape(format!("epochs have {} channels, spec has {c}", epochs.n_channels)));
    }
    let l = epochs.n_samples();
    let n_pooled = epochs.len() * l;
    if n_pooled < 1000 {
        return Err(Error::param(format!(
            "need at least 1000 pooled samples for a covariance estimate, got {n_pooled}"
        )));
    }
    let x = epochs.data.mapv(f64::from);
    // Per-trial sums and cross-products, combined in trial order.
    let parts: Vec<(Array1<f64>, Array2<f64>)> = (0..epochs.len())
        .into_par_iter()
        .map(|i| {
            let xi = x.slice(ndarray::s![i * c..(i + 1) * c, ..]);
            (xi.sum_axis(Axis(1)), xi.dot(&xi.t()))
        })
        .collect();
    let mut sum = Array1::<f64>::zeros(c);
    let mut cross = Array2::<f64>::zeros((c, c));
    for (s, p) in &parts {
        sum += s;
        cross += p;
    }
    let n = n_pooled as f64;
    let mean = &sum / n;
    let outer = mean.view().insert_axis(Axis(1)).dot(&mean.view().insert_axis(Axis(0)));
    let sigma_hat = cross / n - outer;

    let v = spec.source_variances()?;
    let mut sigma_ap = Array2::<f64>::zeros((c, c));
    let mut sigma_osc = Array2::<f64>::zeros((c, c));
    for (s, src) in spec.sources.iter().enumerate() {
        let col = a.column(s);
        let term = col.insert_axis(Axis(1)).dot(&col.insert_axis(Axis(0))) * v[s];
        match src.kind {
            SourceKind::Aperiodic => sigma_ap += &term,
            SourceKind::Oscillatory => sigma_osc += &term,
        }
    }
    let model = &sigma_ap + &sigma_osc + &spec.noise_matrix()?;
    let frob = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = frob(&model);
    let rel = if denom > 0.0 { frob(&(&sigma_hat - &model)) / denom } else { frob(&sigma_hat) };
    let trace_ap = sigma_ap.diag().sum();
    let trace_osc = sigma_osc.diag().sum();
    Ok(CovarianceReport {
        sigma_x_hat: rows_of(&sigma_hat),
        sigma_x_model: rows_of(&model),
        source_variances: v,
        trace_ap,
        trace_osc,
        trace_ratio: (trace_osc > 0.0).then(|| trace_ap / trace_osc),
        rel_frobenius_err: rel,
        n_pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn cholesky_reproduces_matrix() {
        let m = arr2(&[[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]]);
        let l = psd_cholesky(&m).unwrap();
        let back = l.dot(&l.t());
        assert!(back.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn cholesky_handles_semidefinite() {
        assert_eq!(psd_cholesky(&Array2::zeros((3, 3))).unwrap(), Array2::<f64>::zeros((3, 3)));
        let m = arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        let l = psd_cholesky(&m).unwrap();
        assert!((l.dot(&l.t()) - &m).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        assert!(psd_cholesky(&arr2(&[[1.0, 2.0], [2.0, 1.0]])).is_err());
        assert!(psd_cholesky(&arr2(&[[1.0, 0.5], [0.0, 1.0]])).is_err());
        assert!(psd_cholesky(&arr2(&[[0.0, 1.0], [1.0, 1.0]])).is_err());
    }

    #[test]
    fn source_shape_rules() {
        let ap = SourceSpec { kind: SourceKind::Aperiodic, params: SpectralParams::default() };
        assert!(ap.validate().is_err());
        let osc = SourceSpec { kind: SourceKind::Oscillatory, params: SpectralParams::aperiodic(1.0, 0.0) };
        assert!(osc.validate().is_err());
    }

    #[test]
    fn too_few_pooled_samples() {
        let spec = ForwardSpec {
            n_trials: 1,
            config: SignalConfig { duration: 0.5, ..Default::default() },
            ..Default::default()
        };
        let e = simulate(&spec).unwrap();
        assert!(covariance_check(&e, &spec).is_err());
    }

    #[test]
    fn default_spec_is_valid() {
        ForwardSpec::default().validate().unwrap();
    }
}
