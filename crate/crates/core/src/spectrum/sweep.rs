use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{synthesize, SignalConfig, SpectralParams, SpectrumOptions};
use crate::epochs::{EpochMeta, EpochSet};
use crate::error::{Error, Result};
use crate::rng;

/// The parameter varied by a sweep. Peak parameters address the first peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    ApOffset,
    FOsc,
    AOsc,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::ApOffset => "ap_offset",
            SweepParam::FOsc => "f_osc",
            SweepParam::AOsc => "a_osc",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &SpectralParams, value: f64) -> Result<SpectralParams> {
        let mut p = base.clone();
        match self {
            SweepParam::Beta => p.beta = value,
            SweepParam::ApOffset => p.ap_offset = value,
            SweepParam::FOsc | SweepParam::AOsc => {
                let peak = p
                    .peaks
                    .first_mut()
                    .ok_or_else(|| Error::param(format!("sweeping {} needs a base peak", self.name())))?;
                if self == SweepParam::FOsc {
                    peak.f_osc = value;
                } else {
                    peak.a_osc = value;
                }
            }
        }
        p.validate()?;
        Ok(p)
    }
}

fn default_n() -> usize {
    1000
}

/// A one-parameter linear sweep around `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param_name: SweepParam,
    pub theta_min: f64,
    pub theta_max: f64,
    #[serde(default = "default_n")]
    pub n_samples: usize,
    #[serde(default)]
    pub base: SpectralParams,
    #[serde(default)]
    pub config: SignalConfig,
    #[serde(default)]
    pub options: SpectrumOptions,
}

impl SweepSpec {
    pub fn new(param_name: SweepParam, theta_min: f64, theta_max: f64) -> Self {
        Self {
            param_name,
            theta_min,
            theta_max,
            n_samples: default_n(),
            base: SpectralParams::default(),
            config: SignalConfig::default(),
            options: SpectrumOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_min.is_nan() || self.theta_max.is_nan() || self.theta_min >= self.theta_max {
            return Err(Error::param(format!("theta_min {} must be < theta_max {}", self.theta_min, self.theta_max)));
        }
        if self.n_samples < 2 {
            return Err(Error::param("a sweep needs n_samples >= 2"));
        }
        self.config.validate_for(self.base.f_max)?;
        // Both ends must give valid parameters; the model is monotone in each
        // swept coordinate so the interior is then valid too.
        self.param_name.apply(&self.base, self.theta_min)?;
        self.param_name.apply(&self.base, self.theta_max)?;
        Ok(())
    }
}

/// `n` evenly spaced values from `lo` to `hi`, both included exactly.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

/// Generate one epoch per swept value.
///
/// Epoch `i` draws its phases from `rng::stream(seed_i, &[])` with
/// `seed_i = rng::sub_seed(config.seed, &[tag::EPOCH, i])`, recorded as
/// `meta[i].seed_used`.
pub fn sweep(spec: &SweepSpec) -> Result<(EpochSet, Vec<f64>)> {
    spec.validate()?;
    let theta = linspace(spec.theta_min, spec.theta_max, spec.n_samples);
    let rows: Vec<(Vec<f64>, EpochMeta)> = theta
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let params = spec.param_name.apply(&spec.base, t)?;
            let seed = rng::sub_seed(spec.config.seed, &[rng::tag::EPOCH, i as u64]);
            let x = synthesize(&params, &spec.options, &spec.config, &mut rng::stream(seed, &[]))?;
            let meta = EpochMeta { theta: Some(t), seed_used: seed, ..Default::default() };
            Ok((x, meta))
        })
        .collect::<Result<_>>()?;
    let (signals, meta): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let set = EpochSet::from_rows(signals, spec.config.fs, meta)?;
    Ok((set, theta))
}
