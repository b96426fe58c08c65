//! Synthetic corpora: a labelled subject/task corpus, where subjects differ
//! in their aperiodic background and tasks in an oscillatory modulation, and
//! an unlabelled mixed corpus for autoencoder training.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epochs::{EpochMeta, EpochSet};
use crate::error::{Error, Result};
use crate::probe::{LabelKind, LabelSet, Split};
use crate::rng::{self, tag};
use crate::spectrum::{synthesize, Compose, SignalConfig, SpectralParams, SpectrumOptions};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub name: String,
    pub beta: f64,
    pub ap_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub f_osc: f64,
    pub a_osc: f64,
    pub width: f64,
}

/// Per-subject aperiodic parameters of the default corpus.
pub const DEFAULT_SUBJECTS: [(f64, f64); 5] = [(1.1, 0.6), (1.3, 1.4), (1.5, 0.9), (1.7, 1.2), (1.9, 0.75)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub subjects: Vec<SubjectSpec>,
    pub tasks: Vec<TaskSpec>,
    pub trials_per_cell: usize,
    /// Leading fraction of each cell's trials assigned to train.
    pub train_frac: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub signal: SignalConfig,
    pub options: SpectrumOptions,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self::standard(5, 2, 40)
    }
}

impl CorpusConfig {
    /// `n_subjects` with exponents evenly spaced over `[1.1, 1.9]` (offsets
    /// cycle through [`DEFAULT_SUBJECTS`]) and `n_tasks` tasks modulating a
    /// 20 Hz peak with heights `1, 2, ...`.
    pub fn standard(n_subjects: usize, n_tasks: usize, trials_per_cell: usize) -> Self {
        let subjects = (0..n_subjects)
            .map(|i| {
                let beta = if n_subjects == 5 {
                    DEFAULT_SUBJECTS[i].0
                } else {
                    1.1 + 0.8 * i as f64 / (n_subjects.max(2) - 1) as f64
                };
                SubjectSpec { name: format!("s{i}"), beta, ap_offset: DEFAULT_SUBJECTS[i % DEFAULT_SUBJECTS.len()].1 }
            })
            .collect();
        let tasks = (0..n_tasks)
            .map(|j| TaskSpec { name: format!("t{j}"), f_osc: 20.0, a_osc: 1.0 + j as f64, width: 2.0 })
            .collect();
        Self {
            subjects,
            tasks,
            trials_per_cell,
            train_frac: 0.8,
            f_min: 1.0,
            f_max: 60.0,
            signal: SignalConfig::default(),
            options: SpectrumOptions { compose: Compose::Logpower, ..SpectrumOptions::default() },
        }
    }

    fn params(&self, s: &SubjectSpec, t: &TaskSpec) -> SpectralParams {
        SpectralParams { f_min: self.f_min, f_max: self.f_max, ..SpectralParams::aperiodic(s.beta, s.ap_offset) }
            .with_peak(t.f_osc, t.a_osc, t.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects.len() < 2 || self.tasks.len() < 2 {
            return Err(Error::param(format!(
                "a subject/task corpus needs >= 2 subjects and >= 2 tasks, got {} x {}",
                self.subjects.len(),
                self.tasks.len()
            )));
        }
        if self.trials_per_cell < 2 {
            return Err(Error::param("trials_per_cell must be >= 2"));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::param(format!("train_frac must lie in (0, 1), got {}", self.train_frac)));
        }
        let n_train = self.n_train_per_cell();
        if n_train == 0 || n_train == self.trials_per_cell {
            return Err(Error::param("train_frac leaves a cell without train or test trials"));
        }
        let mut dups = unique_violations(self.subjects.iter().map(|s| &s.name))
            .chain(unique_violations(self.tasks.iter().map(|t| &t.name)));
        if let Some(name) = dups.next() {
            return Err(Error::param(format!("duplicate name {name:?}")));
        }
        self.signal.validate_for(self.f_max)?;
        for s in &self.subjects {
            for t in &self.tasks {
                self.params(s, t).validate()?;
            }
        }
        Ok(())
    }

    fn n_train_per_cell(&self) -> usize {
        (self.train_frac * self.trials_per_cell as f64).round() as usize
    }

    /// Pairs of subjects (or tasks) with identical generative parameters.
    pub fn collisions(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, a) in self.subjects.iter().enumerate() {
            for b in &self.subjects[i + 1..] {
                if a.beta == b.beta && a.ap_offset == b.ap_offset {
                    out.push(format!("subjects {} and {} share parameters", a.name, b.name));
                }
            }
        }
        for (i, a) in self.tasks.iter().enumerate() {
            for b in &self.tasks[i + 1..] {
                if a.f_osc == b.f_osc && a.a_osc == b.a_osc && a.width == b.width {
                    out.push(format!("tasks {} and {} share parameters", a.name, b.name));
                }
            }
        }
        out
    }
}

fn unique_violations<'a>(names: impl Iterator<Item = &'a String>) -> impl Iterator<Item = String> {
    let mut seen = std::collections::BTreeSet::new();
    names.filter(move |n| !seen.insert(n.as_str())).cloned().collect::<Vec<_>>().into_iter()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub epochs: EpochSet,
    pub subjects: LabelSet,
    pub tasks: LabelSet,
    pub split: Split,
    /// Parameter collisions found in the configuration.
    pub warnings: Vec<String>,
}

/// Epochs ordered by subject, then task, then trial. Trial `j` of cell
/// `(s, t)` draws its phases from `(seed, [CORPUS, s, t, j])`; the seed is
/// `config.signal.seed`.
pub fn make_subject_task_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let seed = config.signal.seed;
    let n_train = config.n_train_per_cell();
    let mut cells = Vec::new();
    for (si, s) in config.subjects.iter().enumerate() {
        for (ti, t) in config.tasks.iter().enumerate() {
            for j in 0..config.trials_per_cell {
                cells.push((si, ti, j, s, t));
            }
        }
    }
    let rows: Vec<(Vec<f64>, EpochMeta)> = cells
        .par_iter()
        .map(|&(si, ti, j, s, t)| {
            let path = [tag::CORPUS, si as u64, ti as u64, j as u64];
            let mut rng = rng::stream(seed, &path);
            let x = synthesize(&config.params(s, t), &config.options, &config.signal, &mut rng)?;
            let meta = EpochMeta {
                theta: None,
                subject_id: Some(s.name.clone()),
                task_id: Some(t.name.clone()),
                seed_used: rng::sub_seed(seed, &path),
            };
            Ok((x, meta))
        })
        .collect::<Result<_>>()?;
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for (i, &(_, _, j, _, _)) in cells.iter().enumerate() {
        if j < n_train {
            split.train.push(i);
        } else {
            split.test.push(i);
        }
    }
    let subj_names: Vec<&str> = cells.iter().map(|c| c.3.name.as_str()).collect();
    let task_names: Vec<&str> = cells.iter().map(|c| c.4.name.as_str()).collect();
    let (data, meta): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(Corpus {
        epochs: EpochSet::from_rows(data, config.signal.fs, meta)?,
        subjects: LabelSet::from_names(&subj_names, LabelKind::Subject),
        tasks: LabelSet::from_names(&task_names, LabelKind::Task),
        split,
        warnings: config.collisions(),
    })
}

/// Uniform draws over generative parameter ranges, one peak per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixedCorpusConfig {
    pub n: usize,
    pub beta: (f64, f64),
    pub ap_offset: (f64, f64),
    pub f_osc: (f64, f64),
    pub a_osc: (f64, f64),
    pub width: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub signal: SignalConfig,
    pub options: SpectrumOptions,
}

impl Default for MixedCorpusConfig {
    fn default() -> Self {
        Self {
            n: 3000,
            beta: (1.0, 2.0),
            ap_offset: (0.1, 3.0),
            f_osc: (1.0, 60.0),
            a_osc: (0.1, 3.0),
            width: 2.0,
            f_min: 1.0,
            f_max: 60.0,
            signal: SignalConfig::default(),
            options: SpectrumOptions { compose: Compose::Logpower, ..SpectrumOptions::default() },
        }
    }
}

impl MixedCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("mixed corpus needs n >= 1"));
        }
        for (name, (lo, hi)) in
            [("beta", self.beta), ("ap_offset", self.ap_offset), ("f_osc", self.f_osc), ("a_osc", self.a_osc)]
        {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::param(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        self.signal.validate_for(self.f_max)?;
        self.draw_params(&mut rng::stream(0, &[])).validate()
    }

    fn draw_params(&self, rng: &mut impl Rng) -> SpectralParams {
        let mut u = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let beta = u(self.beta);
        let ap = u(self.ap_offset);
        let f = u(self.f_osc);
        let a = u(self.a_osc);
        SpectralParams { f_min: self.f_min, f_max: self.f_max, ..SpectralParams::aperiodic(beta, ap) }
            .with_peak(f, a, self.width)
    }
}

/// Epoch `i` draws its parameters and phases from `(seed, [CORPUS, i])`.
pub fn make_mixed_corpus(config: &MixedCorpusConfig) -> Result<EpochSet> {
    config.validate()?;
    let seed = config.signal.seed;
    let rows: Vec<(Vec<f64>, EpochMeta)> = (0..config.n)
        .into_par_iter()
        .map(|i| {
            let path = [tag::CORPUS, i as u64];
            let mut rng = rng::stream(seed, &path);
            let params = config.draw_params(&mut rng);
            let x = synthesize(&params, &config.options, &config.signal, &mut rng)?;
            Ok((x, EpochMeta { seed_used: rng::sub_seed(seed, &path), ..EpochMeta::default() }))
        })
        .collect::<Result<_>>()?;
    let (data, meta): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    EpochSet::from_rows(data, config.signal.fs, meta)
}
