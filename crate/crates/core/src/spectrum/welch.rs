use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::synth::forward_fft;
use super::Spectrum;
use crate::error::{Error, Result};

/// Segment length (samples) and fractional overlap for [`welch_psd`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap_frac: f64,
}

impl Default for WelchConfig {
    /// One-second segments at 200 Hz with 50 % overlap.
    fn default() -> Self {
        Self { segment_len: 200, overlap_frac: 0.5 }
    }
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic Hann, the usual choice for spectral estimation.
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided Welch PSD estimate in density units (power per Hz).
///
/// Each segment has its mean removed, is multiplied by a periodic Hann window
/// `w` and transformed; the periodogram is `|X_k|^2 / (fs * sum w^2)`, doubled
/// for every bin except DC and (even length) Nyquist. Periodograms are
/// averaged with equal weight. Segments start every
/// `segment_len - floor(overlap_frac * segment_len)` samples; a trailing
/// partial segment is dropped.
pub fn welch_psd(signal: &[f64], fs: f64, cfg: &WelchConfig) -> Result<Spectrum> {
    let seg = cfg.segment_len;
    if seg < 8 {
        return Err(Error::param(format!("segment_len must be >= 8, got {seg}")));
    }
    if seg > signal.len() {
        return Err(Error::param(format!("segment_len {seg} exceeds signal length {}", signal.len())));
    }
    if !(0.0..1.0).contains(&cfg.overlap_frac) {
        return Err(Error::param(format!("overlap_frac must lie in [0, 1), got {}", cfg.overlap_frac)));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::param(format!("fs must be > 0, got {fs}")));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("welch input".into()));
    }
    let step = (seg - (cfg.overlap_frac * seg as f64).floor() as usize).max(1);
    let win = hann(seg);
    let win_pow: f64 = win.iter().map(|w| w * w).sum();
    let n_bins = seg / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    let mut n_seg = 0usize;
    let mut start = 0;
    while start + seg <= signal.len() {
        let chunk = &signal[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&win) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        forward_fft(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        n_seg += 1;
        start += step;
    }
    let scale = 1.0 / (fs * win_pow * n_seg as f64);
    let powers: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || (seg.is_multiple_of(2) && k == seg / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * fs / seg as f64).collect();
    Ok(Spectrum { freqs, powers })
}
