//! Structure of the embedding space: per-(subject, task) centroids, the
//! common-subject and common-task distances, and a 2-D PCA projection.
//!
//! For subject `s` with task set `T_s`,
//!
//! ```text
//! d_CS = mean_s [ sum_{t != t' in T_s} |c_{s,t} - c_{s,t'}| / (|T_s| (|T_s| - 1)) ]
//! ```
//!
//! and `d_CT` swaps the roles of subjects and tasks.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};
use crate::probe::LabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidEntry {
    pub subject: String,
    pub task: String,
    pub centroid: Vec<f64>,
    pub count: usize,
}

/// Non-empty cells sorted by `(subject, task)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidTable {
    pub dim: usize,
    pub entries: Vec<CentroidEntry>,
}

impl CentroidTable {
    pub fn get(&self, subject: &str, task: &str) -> Option<&CentroidEntry> {
        self.entries.iter().find(|e| e.subject == subject && e.task == task)
    }
}

pub fn centroids(emb: &EmbeddingSet, subjects: &LabelSet, tasks: &LabelSet) -> Result<CentroidTable> {
    centroids_of(emb.to_f64().view(), subjects, tasks)
}

pub fn centroids_of(x: ArrayView2<f64>, subjects: &LabelSet, tasks: &LabelSet) -> Result<CentroidTable> {
    subjects.require_len(x.nrows())?;
    tasks.require_len(x.nrows())?;
    let d = x.ncols();
    let mut cells: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for (i, row) in x.rows().into_iter().enumerate() {
        let (s, t) = (subjects.labels[i], tasks.labels[i]);
        if s >= subjects.n_classes() || t >= tasks.n_classes() {
            return Err(Error::param(format!("label of epoch {i} has no name")));
        }
        let cell = cells.entry((s, t)).or_insert_with(|| (vec![0.0; d], 0));
        for (acc, v) in cell.0.iter_mut().zip(row) {
            *acc += v;
        }
        cell.1 += 1;
    }
    let mut entries: Vec<CentroidEntry> = cells
        .into_iter()
        .map(|((s, t), (sum, count))| CentroidEntry {
            subject: subjects.label_names[s].clone(),
            task: tasks.label_names[t].clone(),
            centroid: sum.into_iter().map(|v| v / count as f64).collect(),
            count,
        })
        .collect();
    entries.sort_by(|a, b| (&a.subject, &a.task).cmp(&(&b.subject, &b.task)));
    Ok(CentroidTable { dim: d, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTerm {
    pub id: String,
    /// Mean pairwise distance within the group.
    pub value: f64,
    pub n_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub d_cs: f64,
    pub d_ct: f64,
    pub per_subject_terms: Vec<GroupTerm>,
    pub per_task_terms: Vec<GroupTerm>,
    /// Subjects with fewer than two tasks, left out of `d_cs`.
    pub excluded_subjects: Vec<String>,
    /// Tasks with fewer than two subjects, left out of `d_ct`.
    pub excluded_tasks: Vec<String>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ordered-pair mean distance per group; groups of size one are returned separately.
fn group_terms<'a>(groups: BTreeMap<&'a str, Vec<&'a [f64]>>) -> (Vec<GroupTerm>, Vec<String>) {
    let mut terms = Vec::new();
    let mut excluded = Vec::new();
    for (id, members) in groups {
        let m = members.len();
        if m < 2 {
            excluded.push(id.to_string());
            continue;
        }
        let mut sum = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    sum += euclid(members[i], members[j]);
                }
            }
        }
        terms.push(GroupTerm { id: id.to_string(), value: sum / (m * (m - 1)) as f64, n_members: m });
    }
    (terms, excluded)
}

pub fn cluster_distances(table: &CentroidTable) -> Result<GeometryReport> {
    let mut by_subject: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    let mut by_task: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for e in &table.entries {
        by_subject.entry(&e.subject).or_default().push(&e.centroid);
        by_task.entry(&e.task).or_default().push(&e.centroid);
    }
    let (per_subject_terms, excluded_subjects) = group_terms(by_subject);
    let (per_task_terms, excluded_tasks) = group_terms(by_task);
    if per_subject_terms.is_empty() {
        return Err(Error::Undefined("d_CS: no subject has centroids for two or more tasks".into()));
    }
    if per_task_terms.is_empty() {
        return Err(Error::Undefined("d_CT: no task has centroids for two or more subjects".into()));
    }
    let mean = |t: &[GroupTerm]| t.iter().map(|g| g.value).sum::<f64>() / t.len() as f64;
    Ok(GeometryReport {
        d_cs: mean(&per_subject_terms),
        d_ct: mean(&per_task_terms),
        per_subject_terms,
        per_task_terms,
        excluded_subjects,
        excluded_tasks,
    })
}

/// Projection of mean-centered rows onto the top two principal directions.
///
/// Each direction's sign is fixed so that its largest-magnitude loading is
/// positive (the first such entry on ties).
pub fn pca2d(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if d < 2 {
        return Err(Error::param(format!("pca2d needs d >= 2, got {d}")));
    }
    if n < 3 {
        return Err(Error::param(format!("pca2d needs N >= 3, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pca2d input".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 3");
    let xc = &x - &mean;
    let cov = xc.t().dot(&xc) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Array2::zeros((d, 2));
    for (c, &k) in order[..2].iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut lead = 0;
        for i in 1..d {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, c]] = sign * v[i];
        }
    }
    Ok(xc.dot(&basis))
}

/// `epoch_index,x,y,subject_id,task_id` rows.
pub fn write_pca_csv(path: &Path, coords: ArrayView2<f64>, subjects: &LabelSet, tasks: &LabelSet) -> Result<()> {
    subjects.require_len(coords.nrows())?;
    tasks.require_len(coords.nrows())?;
    let mut buf = Vec::new();
    writeln!(buf, "epoch_index,x,y,subject_id,task_id").expect("vec write");
    for (i, row) in coords.rows().into_iter().enumerate() {
        writeln!(
            buf,
            "{i},{},{},{},{}",
            crate::canonical::format_float(row[0]),
            crate::canonical::format_float(row[1]),
            subjects.label_names[subjects.labels[i]],
            tasks.label_names[tasks.labels[i]]
        )
        .expect("vec write");
    }
    write_atomic(path, &buf)
}
