//! In-memory epoch container.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-epoch provenance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMeta {
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub subject_id: Option<String>,
    #[serde(default)]
    pub task_id: Option<String>,
    pub seed_used: u64,
}

/// `n` epochs of `n_channels x L` samples.
///
/// Rows of `data` are stacked channel-major: epoch `i`, channel `c` lives in
/// row `i * n_channels + c`. Samples are stored as `f32`, which is also the
/// on-disk precision, so an epoch set behaves identically whether it was just
/// generated or loaded from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub data: Array2<f32>,
    pub fs: f64,
    pub n_channels: usize,
    pub meta: Vec<EpochMeta>,
}

impl EpochSet {
    pub fn new(data: Array2<f32>, fs: f64, n_channels: usize, meta: Vec<EpochMeta>) -> Result<Self> {
        let set = Self { data, fs, n_channels, meta };
        set.validate()?;
        Ok(set)
    }

    /// Single-channel set from `f64` rows.
    pub fn from_rows(rows: Vec<Vec<f64>>, fs: f64, meta: Vec<EpochMeta>) -> Result<Self> {
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::Shape("epochs have unequal lengths".into()));
        }
        let flat: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
        let data = Array2::from_shape_vec((rows.len(), l), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data, fs, 1, meta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::param(format!("fs must be > 0, got {}", self.fs)));
        }
        if self.n_channels == 0 {
            return Err(Error::param("n_channels must be >= 1"));
        }
        if self.data.nrows() != self.meta.len() * self.n_channels {
            return Err(Error::Shape(format!(
                "{} rows but {} meta records x {} channels",
                self.data.nrows(),
                self.meta.len(),
                self.n_channels
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("epoch samples".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Samples per channel, `L`.
    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// `n_channels x L` view of epoch `i`.
    pub fn epoch(&self, i: usize) -> ArrayView2<'_, f32> {
        let c = self.n_channels;
        self.data.slice(ndarray::s![i * c..(i + 1) * c, ..])
    }

    /// The single channel of epoch `i`; errors on multi-channel sets.
    pub fn signal(&self, i: usize) -> Result<ArrayView1<'_, f32>> {
        self.require_single_channel()?;
        Ok(self.data.index_axis(Axis(0), i))
    }

    pub fn require_single_channel(&self) -> Result<()> {
        if self.n_channels != 1 {
            return Err(Error::Shape(format!(
                "operation needs single-channel epochs, set has {} channels",
                self.n_channels
            )));
        }
        Ok(())
    }

    /// Swept parameter values, if every epoch carries one.
    pub fn thetas(&self) -> Option<Vec<f64>> {
        self.meta.iter().map(|m| m.theta).collect()
    }

    /// Epochs `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let c = self.n_channels;
        let mut rows = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Shape(format!("epoch index {i} out of range {}", self.len())));
            }
            rows.extend(i * c..(i + 1) * c);
        }
        Ok(Self {
            data: self.data.select(Axis(0), &rows),
            fs: self.fs,
            n_channels: c,
            meta: idx.iter().map(|&i| self.meta[i].clone()).collect(),
        })
    }

    /// Concatenate sets with matching `fs`, channels and length.
    pub fn concat(sets: &[EpochSet]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::param("nothing to concatenate"))?;
        for s in sets {
            if s.fs != first.fs || s.n_channels != first.n_channels || s.n_samples() != first.n_samples() {
                return Err(Error::Shape("epoch sets differ in fs, channels or length".into()));
            }
        }
        let views: Vec<_> = sets.iter().map(|s| s.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let meta = sets.iter().flat_map(|s| s.meta.iter().cloned()).collect();
        Self::new(data, first.fs, first.n_channels, meta)
    }
}
