//! Parameterized power spectra and random-phase synthesis.
//!
//! A spectrum is the sum of an aperiodic `10^ap_offset / f^beta` background
//! and Gaussian peaks `10^a_osc * exp(-(f - f_osc)^2 / (2 w^2))`. Time series
//! are produced by interpolating the spectrum onto the real-FFT bins, taking
//! `sqrt(power)` as the bin amplitude, attaching a uniform random phase and
//! inverting.

mod sweep;
mod synth;
mod welch;

pub use sweep::{linspace, sweep, SweepParam, SweepSpec};
pub use synth::{rfft_freqs, spectrum_to_timeseries, synthesis_variance, synthesize, SignalConfig};
pub use welch::{welch_psd, WelchConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One Gaussian spectral peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Center frequency, Hz.
    pub f_osc: f64,
    /// Peak height, log10 power.
    pub a_osc: f64,
    /// Gaussian standard deviation, Hz.
    pub width: f64,
}

/// Aperiodic exponent/offset plus oscillatory peaks over `[f_min, f_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    pub beta: f64,
    pub ap_offset: f64,
    #[serde(default)]
    pub peaks: Vec<Peak>,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for SpectralParams {
    /// Midpoints of the usual sweep ranges: beta 1.5, offset 1, one 10 Hz peak
    /// of height 1 and width 2 Hz, support 1..60 Hz.
    fn default() -> Self {
        Self {
            beta: 1.5,
            ap_offset: 1.0,
            peaks: vec![Peak { f_osc: 10.0, a_osc: 1.0, width: 2.0 }],
            f_min: 1.0,
            f_max: 60.0,
        }
    }
}

impl SpectralParams {
    pub fn aperiodic(beta: f64, ap_offset: f64) -> Self {
        Self { beta, ap_offset, peaks: Vec::new(), ..Self::default() }
    }

    pub fn with_peak(mut self, f_osc: f64, a_osc: f64, width: f64) -> Self {
        self.peaks.push(Peak { f_osc, a_osc, width });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_min == 0.0 {
            return Err(Error::ZeroFrequency);
        }
        let all = [self.beta, self.ap_offset, self.f_min, self.f_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectral parameters".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::param(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return Err(Error::param(format!("need 0 < f_min < f_max, got [{}, {}]", self.f_min, self.f_max)));
        }
        for p in &self.peaks {
            if !(p.f_osc.is_finite() && p.a_osc.is_finite() && p.width.is_finite()) {
                return Err(Error::NonFinite("peak parameters".into()));
            }
            if p.width <= 0.0 {
                return Err(Error::param(format!("peak width must be > 0, got {}", p.width)));
            }
            if p.f_osc < self.f_min || p.f_osc > self.f_max {
                return Err(Error::param(format!("peak f_osc {} outside [{}, {}]", p.f_osc, self.f_min, self.f_max)));
            }
        }
        Ok(())
    }
}

/// How the aperiodic and peak terms combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compose {
    /// `S = S_ap + S_osc` in linear power.
    #[default]
    Linear,
    /// `log10 S = log10 S_ap + sum_k a_osc_k * gauss_k(f)`: peak heights are
    /// log10 power above the aperiodic floor at their own frequency.
    Logpower,
}

/// Which terms of the model to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    #[default]
    Full,
    Aperiodic,
    /// Peaks only; under [`Compose::Logpower`] this is `S_full - S_ap`.
    Oscillatory,
}

/// Frequency grid resolution and composition mode used before interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumOptions {
    pub df: f64,
    pub compose: Compose,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { df: 0.5, compose: Compose::Linear }
    }
}

/// Power on an ascending frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub powers: Vec<f64>,
}

impl Spectrum {
    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() != self.powers.len() {
            return Err(Error::Shape(format!("{} freqs vs {} powers", self.freqs.len(), self.powers.len())));
        }
        if self.freqs.is_empty() {
            return Err(Error::param("empty spectrum"));
        }
        if self.powers.iter().chain(&self.freqs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum".into()));
        }
        if self.freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("spectrum frequencies must be strictly increasing"));
        }
        if self.powers.iter().any(|&p| p < 0.0) {
            return Err(Error::param("spectrum powers must be >= 0"));
        }
        Ok(())
    }

    /// Index of the largest power.
    pub fn argmax(&self) -> usize {
        self.powers
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

/// Grid `f_min, f_min + df, ...` that always ends exactly at `f_max`.
pub fn frequency_grid(f_min: f64, f_max: f64, df: f64) -> Result<Vec<f64>> {
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::param(format!("df must be > 0, got {df}")));
    }
    if f_min <= 0.0 && f_max >= 0.0 {
        return Err(Error::ZeroFrequency);
    }
    let steps = ((f_max - f_min) / df + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=steps).map(|i| f_min + i as f64 * df).collect();
    let last = *grid.last().expect("non-empty");
    if f_max - last > 1e-9 * df {
        grid.push(f_max);
    } else {
        *grid.last_mut().expect("non-empty") = f_max;
    }
    Ok(grid)
}

fn gauss(f: f64, p: &Peak) -> f64 {
    let d = f - p.f_osc;
    (-(d * d) / (2.0 * p.width * p.width)).exp()
}

/// Model power at a single frequency.
pub fn power_at(params: &SpectralParams, f: f64, compose: Compose, component: Component) -> f64 {
    let ap = 10f64.powf(params.ap_offset) / f.powf(params.beta);
    match compose {
        Compose::Linear => {
            let osc: f64 = params.peaks.iter().map(|p| 10f64.powf(p.a_osc) * gauss(f, p)).sum();
            match component {
                Component::Full => ap + osc,
                Component::Aperiodic => ap,
                Component::Oscillatory => osc,
            }
        }
        Compose::Logpower => {
            let lift: f64 = params.peaks.iter().map(|p| p.a_osc * gauss(f, p)).sum();
            let full = ap * 10f64.powf(lift);
            match component {
                Component::Full => full,
                Component::Aperiodic => ap,
                Component::Oscillatory => full - ap,
            }
        }
    }
}

/// Evaluate the full model on `[f_min, f_max]` at resolution `opts.df`.
pub fn gen_power_spectrum(params: &SpectralParams, opts: &SpectrumOptions) -> Result<Spectrum> {
    component_spectrum(params, opts, Component::Full)
}

/// Like [`gen_power_spectrum`] but restricted to one component.
pub fn component_spectrum(params: &SpectralParams, opts: &SpectrumOptions, component: Component) -> Result<Spectrum> {
    params.validate()?;
    let freqs = frequency_grid(params.f_min, params.f_max, opts.df)?;
    let powers: Vec<f64> = freqs.iter().map(|&f| power_at(params, f, opts.compose, component)).collect();
    if powers.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("evaluated power spectrum".into()));
    }
    Ok(Spectrum { freqs, powers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(s: &Spectrum, f: f64) -> f64 {
        let i = s.freqs.iter().position(|&x| (x - f).abs() < 1e-9).expect("grid point");
        s.powers[i]
    }

    #[test]
    fn pure_aperiodic_points() {
        let p = SpectralParams { f_min: 1.0, f_max: 20.0, ..SpectralParams::aperiodic(1.0, 0.0) };
        let s = gen_power_spectrum(&p, &SpectrumOptions::default()).unwrap();
        assert_eq!(at(&s, 1.0), 1.0);
        assert!((at(&s, 10.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn peak_at_its_center_adds_its_height() {
        let p =
            SpectralParams { f_min: 1.0, f_max: 20.0, ..SpectralParams::aperiodic(1.0, 0.0) }.with_peak(10.0, 0.0, 2.0);
        let s = gen_power_spectrum(&p, &SpectrumOptions::default()).unwrap();
        assert!((at(&s, 10.0) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn steeper_exponent_with_offset() {
        // 10^2 / 1^1.5 = 100 and 10^2 / 4^1.5 = 100 / 8.
        let p = SpectralParams::aperiodic(1.5, 2.0);
        let s = gen_power_spectrum(&p, &SpectrumOptions::default()).unwrap();
        assert_eq!(at(&s, 1.0), 100.0);
        assert!((at(&s, 4.0) - 12.5).abs() < 1e-12);
        assert_eq!(*s.freqs.last().unwrap(), 60.0);
        assert_eq!(s.freqs.len(), 119);
    }

    #[test]
    fn logpower_lifts_floor_by_peak_height() {
        let p = SpectralParams::aperiodic(1.0, 0.0).with_peak(10.0, 1.0, 2.0);
        let opts = SpectrumOptions { compose: Compose::Logpower, ..Default::default() };
        let s = gen_power_spectrum(&p, &opts).unwrap();
        assert!((at(&s, 10.0) - 1.0).abs() < 1e-12);
        let osc = component_spectrum(&p, &opts, Component::Oscillatory).unwrap();
        assert!((at(&osc, 10.0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_frequency_rejected() {
        let p = SpectralParams { f_min: 0.0, ..SpectralParams::aperiodic(1.0, 0.0) };
        assert!(matches!(gen_power_spectrum(&p, &SpectrumOptions::default()), Err(Error::ZeroFrequency)));
        assert!(matches!(frequency_grid(-1.0, 5.0, 0.5), Err(Error::ZeroFrequency)));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = SpectralParams::default();
        p.peaks[0].width = 0.0;
        assert!(p.validate().is_err());
        let mut p = SpectralParams::default();
        p.peaks[0].f_osc = 61.0;
        assert!(p.validate().is_err());
        assert!(SpectralParams::aperiodic(-0.1, 0.0).validate().is_err());
    }

    #[test]
    fn grid_includes_fmax_when_df_does_not_divide() {
        let g = frequency_grid(1.0, 2.0, 0.3).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 2.0);
    }
}
