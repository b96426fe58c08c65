use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cohen's kappa with a flag for the degenerate `p_e = 1` case, where the
/// value is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    pub degenerate: bool,
}

/// `K x K` counts, rows indexed by truth and columns by prediction.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions vs {} labels", pred.len(), truth.len())));
    }
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::param(format!("label outside [0, {k})")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// `(p_o - p_e) / (1 - p_e)` from a confusion matrix.
pub fn kappa_from_confusion(m: &[Vec<u64>]) -> Result<Kappa> {
    let k = m.len();
    let n: u64 = m.iter().flatten().sum();
    if n == 0 {
        return Err(Error::param("kappa of an empty sample"));
    }
    let n = n as f64;
    let diag: u64 = (0..k).map(|i| m[i][i]).sum();
    let p_o = diag as f64 / n;
    let p_e: f64 = (0..k)
        .map(|i| {
            let row: u64 = m[i].iter().sum();
            let col: u64 = m.iter().map(|r| r[i]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return Ok(Kappa { value: 0.0, degenerate: true });
    }
    Ok(Kappa { value: (p_o - p_e) / (1.0 - p_e), degenerate: false })
}

/// Kappa over the label universe `0..=max(pred, truth)`.
pub fn cohens_kappa(pred: &[usize], truth: &[usize]) -> Result<Kappa> {
    let k = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    kappa_from_confusion(&confusion_matrix(pred, truth, k)?)
}
