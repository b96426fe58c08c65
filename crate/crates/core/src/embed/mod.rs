//! Embedders: fixed spectral reference features and a trainable masked
//! autoencoder. Every embedder preserves row order.

mod ae;

pub use ae::{
    embed_ae, masked_loss, masked_loss_and_grad, train_masked_ae, AeParams, ArchConfig, InputScaling, MaskConfig,
    MaskedAEModel,
};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::digest;
use crate::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::spectrum::{welch_psd, WelchConfig};

/// Floor added to PSD values before taking log10.
pub const LOG_FLOOR: f64 = 1e-12;

/// `N x d` embeddings with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub data: Array2<f32>,
    pub embedder_id: String,
    pub config_digest: String,
}

impl EmbeddingSet {
    pub fn new(data: Array2<f32>, embedder_id: String, config_digest: String) -> Result<Self> {
        let e = Self { data, embedder_id, config_digest };
        e.validate()?;
        Ok(e)
    }

    pub fn from_f64(data: &Array2<f64>, embedder_id: &str, config_digest: String) -> Result<Self> {
        Self::new(data.mapv(|v| v as f32), embedder_id.to_string(), config_digest)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.data.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding row {i}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }
}

/// Band limits of the log-PSD embedder, Hz.
pub const LOGPSD_BAND: (f64, f64) = (1.0, 90.0);

fn psd_rows(epochs: &EpochSet, welch: &WelchConfig) -> Result<Vec<crate::spectrum::Spectrum>> {
    epochs.require_single_channel()?;
    (0..epochs.len())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = epochs.signal(i)?.iter().map(|&v| f64::from(v)).collect();
            welch_psd(&x, epochs.fs, welch)
        })
        .collect()
}

/// `log10(PSD + 1e-12)` at every Welch bin in `[1, 90]` Hz.
pub fn embed_logpsd(epochs: &EpochSet, welch: &WelchConfig) -> Result<EmbeddingSet> {
    let (lo, hi) = LOGPSD_BAND;
    if epochs.fs / 2.0 < hi {
        return Err(Error::param(format!("fs = {} Hz cannot resolve the {lo}-{hi} Hz log-PSD band", epochs.fs)));
    }
    let psds = psd_rows(epochs, welch)?;
    let keep: Vec<usize> = psds
        .first()
        .map(|s| s.freqs.iter().enumerate().filter(|(_, &f)| (lo..=hi).contains(&f)).map(|(k, _)| k).collect())
        .unwrap_or_default();
    if keep.is_empty() && !psds.is_empty() {
        return Err(Error::param("no Welch bins fall inside the log-PSD band"));
    }
    let mut data = Array2::<f64>::zeros((psds.len(), keep.len()));
    for (i, s) in psds.iter().enumerate() {
        for (j, &k) in keep.iter().enumerate() {
            data[[i, j]] = (s.powers[k] + LOG_FLOOR).log10();
        }
    }
    let cfg = serde_json::json!({"embedder": "logpsd", "welch": welch, "band": [lo, hi], "floor": LOG_FLOOR});
    EmbeddingSet::from_f64(&data, "logpsd", digest(&cfg)?)
}

/// Classical EEG bands: delta, theta, alpha, beta, gamma.
pub fn default_bands() -> Vec<(f64, f64)> {
    vec![(1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 60.0)]
}

/// `log10(mean PSD + 1e-12)` over each half-open band `[lo, hi)`.
pub fn embed_bandpower(epochs: &EpochSet, bands: &[(f64, f64)], welch: &WelchConfig) -> Result<EmbeddingSet> {
    if bands.is_empty() {
        return Err(Error::param("at least one band is required"));
    }
    for &(lo, hi) in bands {
        if !(lo > 0.0 && lo < hi && hi <= epochs.fs / 2.0) {
            return Err(Error::param(format!("band [{lo}, {hi}) must lie within (0, {}] Hz", epochs.fs / 2.0)));
        }
    }
    let psds = psd_rows(epochs, welch)?;
    let mut data = Array2::<f64>::zeros((psds.len(), bands.len()));
    for (i, s) in psds.iter().enumerate() {
        for (j, &(lo, hi)) in bands.iter().enumerate() {
            let vals: Vec<f64> =
                s.freqs.iter().zip(&s.powers).filter(|(&f, _)| f >= lo && f < hi).map(|(_, &p)| p).collect();
            if vals.is_empty() {
                return Err(Error::param(format!("band [{lo}, {hi}) contains no Welch bins")));
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            data[[i, j]] = (mean + LOG_FLOOR).log10();
        }
    }
    let cfg = serde_json::json!({"embedder": "bandpower", "welch": welch, "bands": bands, "floor": LOG_FLOOR});
    EmbeddingSet::from_f64(&data, "bandpower", digest(&cfg)?)
}

/// Serializable choice of embedder for configs and recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Logpsd {
        #[serde(default)]
        welch: WelchConfig,
    },
    Bandpower {
        #[serde(default = "default_bands")]
        bands: Vec<(f64, f64)>,
        #[serde(default)]
        welch: WelchConfig,
    },
    /// A trained autoencoder stored at `model` (JSON).
    Ae { model: std::path::PathBuf },
}

impl EmbedderSpec {
    pub fn embed(&self, epochs: &EpochSet) -> Result<EmbeddingSet> {
        match self {
            EmbedderSpec::Logpsd { welch } => embed_logpsd(epochs, welch),
            EmbedderSpec::Bandpower { bands, welch } => embed_bandpower(epochs, bands, welch),
            EmbedderSpec::Ae { model } => {
                let m: MaskedAEModel = crate::artifact::read_json(model)?;
                embed_ae(&m, epochs)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epochs::EpochMeta;
    use crate::rng;
    use crate::spectrum::{synthesize, SignalConfig, SpectralParams, SpectrumOptions};

    fn set_from(params: &[SpectralParams], seed: u64) -> EpochSet {
        let cfg = SignalConfig::default();
        let rows: Vec<Vec<f64>> = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                synthesize(p, &SpectrumOptions::default(), &cfg, &mut rng::stream(seed, &[i as u64])).unwrap()
            })
            .collect();
        EpochSet::from_rows(rows, 200.0, vec![EpochMeta::default(); params.len()]).unwrap()
    }

    #[test]
    fn logpsd_dimension_and_floor() {
        let zero = EpochSet::from_rows(vec![vec![0.0; 1000]], 200.0, vec![EpochMeta::default()]).unwrap();
        let e = embed_logpsd(&zero, &WelchConfig::default()).unwrap();
        assert_eq!(e.dim(), 90);
        assert!(e.data.iter().all(|&v| v == -12.0));
    }

    #[test]
    fn logpsd_rejects_low_fs() {
        let s = EpochSet::from_rows(vec![vec![0.0; 1000]], 100.0, vec![EpochMeta::default()]).unwrap();
        assert!(embed_logpsd(&s, &WelchConfig::default()).is_err());
    }

    #[test]
    fn aperiodic_logpsd_slope_is_minus_beta() {
        let e = embed_logpsd(&set_from(&[SpectralParams::aperiodic(1.7, 1.0)], 3), &WelchConfig::default()).unwrap();
        // Features at 2..50 Hz (columns 1..49) against log10 f.
        let pts: Vec<(f64, f64)> = (2..=50).map(|f| ((f as f64).log10(), f64::from(e.data[[0, f - 1]]))).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        // One draw, so allow for estimation noise.
        assert!((slope + 1.7).abs() < 0.2, "{slope}");
    }

    #[test]
    fn offset_change_is_a_constant_shift() {
        // Same seed, so identical phases; the spectra differ by a factor 10^0.8.
        let a = embed_logpsd(&set_from(&[SpectralParams::aperiodic(1.5, 0.5)], 11), &WelchConfig::default()).unwrap();
        let b = embed_logpsd(&set_from(&[SpectralParams::aperiodic(1.5, 1.3)], 11), &WelchConfig::default()).unwrap();
        for j in 0..59 {
            let d = f64::from(b.data[[0, j]] - a.data[[0, j]]);
            assert!((d - 0.8).abs() < 1e-4, "bin {j}: {d}");
        }
    }

    #[test]
    fn bandpower_alpha_peak_and_floor() {
        let flat = SpectralParams::aperiodic(1.5, 1.0);
        let peaked = flat.clone().with_peak(10.0, 3.0, 2.0);
        let e = embed_bandpower(&set_from(&[flat, peaked], 4), &default_bands(), &WelchConfig::default()).unwrap();
        assert!(e.data[[1, 2]] > e.data[[0, 2]]);
        let zero = EpochSet::from_rows(vec![vec![0.0; 1000]], 200.0, vec![EpochMeta::default()]).unwrap();
        let z = embed_bandpower(&zero, &default_bands(), &WelchConfig::default()).unwrap();
        assert!(z.data.iter().all(|&v| v == -12.0));
    }

    #[test]
    fn bandpower_rejects_empty_or_out_of_range_bands() {
        let zero = EpochSet::from_rows(vec![vec![0.0; 1000]], 200.0, vec![EpochMeta::default()]).unwrap();
        let w = WelchConfig::default();
        assert!(embed_bandpower(&zero, &[(10.2, 10.8)], &w).is_err());
        assert!(embed_bandpower(&zero, &[(0.0, 4.0)], &w).is_err());
        assert!(embed_bandpower(&zero, &[(50.0, 120.0)], &w).is_err());
    }
}
