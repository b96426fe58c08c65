use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Task,
    Subject,
}

/// Integer class labels in `[0, K)` with their names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub kind: LabelKind,
}

impl LabelSet {
    /// Labels from string ids; classes are numbered in sorted name order.
    pub fn from_names<S: AsRef<str>>(names: &[S], kind: LabelKind) -> Self {
        let uniq: BTreeSet<&str> = names.iter().map(AsRef::as_ref).collect();
        let label_names: Vec<String> = uniq.iter().map(|s| s.to_string()).collect();
        let labels = names
            .iter()
            .map(|n| label_names.binary_search_by(|x| x.as_str().cmp(n.as_ref())).expect("present"))
            .collect();
        Self { labels, label_names, kind }
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_classes();
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= k) {
            return Err(Error::param(format!("label {bad} outside [0, {k})")));
        }
        let mut seen = vec![false; k];
        for &l in &self.labels {
            seen[l] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::param(format!("class {:?} has no examples", self.label_names[c])));
        }
        Ok(())
    }

    pub fn require_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} embeddings", self.len())));
        }
        Ok(())
    }
}

/// Disjoint train and test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::Shape(format!("split index {i} out of range {n}")));
            }
            if seen[i] {
                return Err(Error::param(format!("epoch {i} appears twice in the split")));
            }
            seen[i] = true;
        }
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::param("train and test splits must both be non-empty"));
        }
        Ok(())
    }

    /// Reads `epoch_index,split` rows with `split` in `{train, test}`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            epoch_index: usize,
            split: String,
        }
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Corrupt { path: path.into(), reason: format!("{other:?}") },
        })?;
        let mut split = Split { train: Vec::new(), test: Vec::new() };
        for row in rdr.deserialize() {
            let row: Row = row?;
            match row.split.as_str() {
                "train" => split.train.push(row.epoch_index),
                "test" => split.test.push(row.epoch_index),
                other => {
                    return Err(Error::Corrupt {
                        path: path.into(),
                        reason: format!("split must be train or test, got {other:?}"),
                    })
                }
            }
        }
        Ok(split)
    }

    /// Rows sorted by epoch index.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<(usize, &str)> =
            self.train.iter().map(|&i| (i, "train")).chain(self.test.iter().map(|&i| (i, "test"))).collect();
        rows.sort_unstable();
        let mut buf = Vec::new();
        writeln!(buf, "epoch_index,split").expect("vec write");
        for (i, s) in rows {
            writeln!(buf, "{i},{s}").expect("vec write");
        }
        write_atomic(path, &buf)
    }
}
