use std::cell::RefCell;
use std::f64::consts::TAU;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{gen_power_spectrum, SpectralParams, Spectrum, SpectrumOptions};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn inverse_fft(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    plan.process(buf);
}

pub(crate) fn forward_fft(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    plan.process(buf);
}

/// Signal length settings and the master seed for synthesized signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    pub fs: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self { fs: 200.0, duration: 5.0, seed: 0 }
    }
}

impl SignalConfig {
    /// `L = round(fs * duration)`.
    pub fn n_samples(&self) -> usize {
        (self.fs * self.duration).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::param(format!("fs must be > 0, got {}", self.fs)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::param(format!("duration must be > 0, got {}", self.duration)));
        }
        if self.n_samples() < 2 {
            return Err(Error::param("signal must have at least 2 samples"));
        }
        Ok(())
    }

    /// Checks the Nyquist condition against a spectral support.
    pub fn validate_for(&self, f_max: f64) -> Result<()> {
        self.validate()?;
        if self.fs <= 2.0 * f_max {
            return Err(Error::param(format!("fs = {} Hz does not exceed 2 * f_max = {} Hz", self.fs, 2.0 * f_max)));
        }
        Ok(())
    }
}

/// Frequencies of the real-FFT bins for `n` samples at rate `fs`.
pub fn rfft_freqs(n: usize, fs: f64) -> Vec<f64> {
    (0..=n / 2).map(|k| k as f64 * fs / n as f64).collect()
}

/// Linear interpolation of `spec` at `f`; zero outside its support.
fn interp(spec: &Spectrum, f: f64) -> f64 {
    let fr = &spec.freqs;
    let (lo, hi) = (fr[0], fr[fr.len() - 1]);
    if f < lo || f > hi {
        return 0.0;
    }
    let j = fr.partition_point(|&x| x <= f);
    if j == 0 {
        return spec.powers[0];
    }
    if j >= fr.len() {
        return spec.powers[fr.len() - 1];
    }
    let (f0, f1) = (fr[j - 1], fr[j]);
    let t = (f - f0) / (f1 - f0);
    spec.powers[j - 1] + t * (spec.powers[j] - spec.powers[j - 1])
}

/// Power assigned to each real-FFT bin (DC and out-of-support bins are zero).
pub(crate) fn bin_powers(spec: &Spectrum, n: usize, fs: f64) -> Vec<f64> {
    let mut p: Vec<f64> = rfft_freqs(n, fs).into_iter().map(|f| interp(spec, f)).collect();
    p[0] = 0.0;
    p
}

/// Random-phase synthesis of one time series of `config.n_samples()` points.
///
/// Bin `k` receives amplitude `sqrt(P(f_k))` and phase `U[0, 2pi)`; the
/// Nyquist bin, when present, keeps its amplitude with the sign of
/// `cos(phase)` so the inverse transform is real. The inverse transform is
/// scaled by `1/L`, so absolute units are arbitrary but fixed.
pub fn spectrum_to_timeseries(spec: &Spectrum, config: &SignalConfig, rng: &mut impl Rng) -> Result<Vec<f64>> {
    spec.validate()?;
    config.validate()?;
    let n = config.n_samples();
    let power = bin_powers(spec, n, config.fs);
    let half = n / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=half {
        let amp = power[k].sqrt();
        let phase = rng.random::<f64>() * TAU;
        if n.is_multiple_of(2) && k == half {
            buf[k] = Complex64::new(amp * phase.cos().signum(), 0.0);
        } else {
            let c = Complex64::from_polar(amp, phase);
            buf[k] = c;
            buf[n - k] = c.conj();
        }
    }
    inverse_fft(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.re * scale).collect())
}

/// Evaluate `params` and synthesize one draw.
pub fn synthesize(
    params: &SpectralParams,
    opts: &SpectrumOptions,
    config: &SignalConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    config.validate_for(params.f_max)?;
    let spec = gen_power_spectrum(params, opts)?;
    spectrum_to_timeseries(&spec, config, rng)
}

/// Variance of every draw of [`spectrum_to_timeseries`]:
/// `(2 * sum_{0<k<L/2} P_k + P_{L/2}) / L^2`, with the last term present only
/// for even `L`. The mean is exactly zero because DC carries no power.
pub fn synthesis_variance(spec: &Spectrum, config: &SignalConfig) -> f64 {
    let n = config.n_samples();
    let p = bin_powers(spec, n, config.fs);
    let half = n / 2;
    let mut total = 0.0;
    for (k, &pk) in p.iter().enumerate().skip(1) {
        total += if n.is_multiple_of(2) && k == half { pk } else { 2.0 * pk };
    }
    total / (n as f64 * n as f64)
}
