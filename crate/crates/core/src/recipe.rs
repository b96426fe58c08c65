//! End-to-end pipelines driven by one JSON config and one seed.
//!
//! A `decode` recipe synthesizes parameter sweeps, embeds them and reports
//! cross-validated R² per sweep. A `bias` recipe trains the masked
//! autoencoder on a mixed corpus, decodes held-out sweeps from its
//! embeddings, then runs the subject/task probe battery and the centroid
//! geometry on a labelled corpus.
//!
//! Every stage seed is derived from the recipe seed, so a rerun with the same
//! config and seed writes byte-identical reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::{emit_report, write_atomic};
use crate::canonical::{digest, to_canonical_json};
use crate::corpus::{make_mixed_corpus, make_subject_task_corpus, CorpusConfig, MixedCorpusConfig};
use crate::decode::{linear_decodability, CVConfig, DecodabilityReport};
use crate::embed::{embed_ae, train_masked_ae, ArchConfig, EmbedderSpec, MaskConfig};
use crate::error::{Error, Result};
use crate::geometry::{centroids, cluster_distances, pca2d, write_pca_csv, GeometryReport};
use crate::optim::TrainConfig;
use crate::probe::{subject_task_battery, BatteryReport, ProbeTrainConfig};
use crate::rng::sub_seed;
use crate::spectrum::{sweep, SweepSpec};

/// A sweep with a short name used in report keys and file names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSweep {
    pub label: String,
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecipe {
    pub sweeps: Vec<NamedSweep>,
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub cv: CVConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecipe {
    #[serde(default)]
    pub mixed: MixedCorpusConfig,
    #[serde(default)]
    pub mask: MaskConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default = "ae_train_defaults")]
    pub train: TrainConfig,
    pub sweeps: Vec<NamedSweep>,
    #[serde(default)]
    pub cv: CVConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub probe: ProbeTrainConfig,
}

/// Autoencoder training defaults: 20 epochs at a peak learning rate of 3e-3.
pub fn ae_train_defaults() -> TrainConfig {
    TrainConfig { epochs: 20, lr: 3e-3, ..TrainConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "snake_case")]
pub enum Pipeline {
    Decode(DecodeRecipe),
    Bias(Box<BiasRecipe>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub pipeline: Pipeline,
}

// Stage indices for seed derivation.
const STAGE_SWEEP: u64 = 1;
const STAGE_CV: u64 = 2;
const STAGE_MIXED: u64 = 3;
const STAGE_MASK: u64 = 4;
const STAGE_TRAIN: u64 = 5;
const STAGE_CORPUS: u64 = 6;
const STAGE_PROBE: u64 = 7;

impl RecipeConfig {
    /// Copy with every stage seed replaced by one derived from `seed`.
    pub fn seeded(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        let reseed_sweeps = |sweeps: &mut [NamedSweep]| {
            for (i, s) in sweeps.iter_mut().enumerate() {
                s.sweep.config.seed = sub_seed(seed, &[STAGE_SWEEP, i as u64]);
            }
        };
        match &mut out.pipeline {
            Pipeline::Decode(d) => {
                reseed_sweeps(&mut d.sweeps);
                d.cv.shuffle_seed = sub_seed(seed, &[STAGE_CV]);
            }
            Pipeline::Bias(b) => {
                reseed_sweeps(&mut b.sweeps);
                b.cv.shuffle_seed = sub_seed(seed, &[STAGE_CV]);
                b.mixed.signal.seed = sub_seed(seed, &[STAGE_MIXED]);
                b.mask.seed = sub_seed(seed, &[STAGE_MASK]);
                b.train.seed = sub_seed(seed, &[STAGE_TRAIN]);
                b.corpus.signal.seed = sub_seed(seed, &[STAGE_CORPUS]);
                b.probe.seed = sub_seed(seed, &[STAGE_PROBE]);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::param(format!("recipe name {:?} must be non-empty [A-Za-z0-9_-]", self.name)));
        }
        let check_sweeps = |sweeps: &[NamedSweep]| -> Result<()> {
            if sweeps.is_empty() {
                return Err(Error::param("recipe has no sweeps"));
            }
            let mut seen = std::collections::BTreeSet::new();
            for s in sweeps {
                if !seen.insert(&s.label) {
                    return Err(Error::param(format!("duplicate sweep label {:?}", s.label)));
                }
                if s.label.is_empty() || !s.label.chars().all(|c| c.is_ascii_alphanumeric() || "_-@.".contains(c)) {
                    return Err(Error::param(format!("sweep label {:?} must be non-empty [A-Za-z0-9_-@.]", s.label)));
                }
                s.sweep.validate()?;
            }
            Ok(())
        };
        match &self.pipeline {
            Pipeline::Decode(d) => {
                check_sweeps(&d.sweeps)?;
                d.cv.validate()?;
                if let EmbedderSpec::Ae { model } = &d.embedder {
                    if !model.exists() {
                        return Err(Error::io(model, std::io::Error::from(std::io::ErrorKind::NotFound)));
                    }
                }
            }
            Pipeline::Bias(b) => {
                check_sweeps(&b.sweeps)?;
                b.cv.validate()?;
                b.mixed.validate()?;
                b.train.validate()?;
                b.corpus.validate()?;
                b.probe.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub label: String,
    pub param: String,
    pub theta_min: f64,
    pub theta_max: f64,
    pub n: usize,
    pub r2_pooled: f64,
    pub r2_per_fold: Vec<Option<f64>>,
    pub chosen_lambdas: Vec<f64>,
}

impl SweepResult {
    fn new(label: &str, spec: &SweepSpec, r: &DecodabilityReport) -> Self {
        Self {
            label: label.to_string(),
            param: spec.param_name.name().to_string(),
            theta_min: spec.theta_min,
            theta_max: spec.theta_max,
            n: r.n,
            r2_pooled: r.r2_pooled,
            r2_per_fold: r.r2_per_fold.clone(),
            chosen_lambdas: r.chosen_lambdas.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub name: String,
    pub seed: u64,
    pub config_digest: String,
    pub embedder_id: String,
    pub decoding: Vec<SweepResult>,
    pub ae_train_log: Option<Vec<f64>>,
    pub battery: Option<BatteryReport>,
    pub geometry: Option<GeometryReport>,
    pub warnings: Vec<String>,
}

/// Run `config` with its own seed and write reports under `out_dir`.
///
/// Files: `report.json` (summary), `decode_<label>.json` and `.csv` per
/// sweep, and for bias recipes also `model.json`, `battery.json`,
/// `confusion_task.csv`, `confusion_subject.csv`, `split.csv`,
/// `geometry.json` and `pca.csv`.
pub fn run_recipe(config: &RecipeConfig, out_dir: &Path) -> Result<RecipeReport> {
    let cfg = config.seeded(config.seed);
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_digest = digest(&cfg)?;
    let decode_all = |sweeps: &[NamedSweep],
                      cv: &CVConfig,
                      embed: &dyn Fn(&crate::epochs::EpochSet) -> Result<crate::embed::EmbeddingSet>|
     -> Result<(Vec<SweepResult>, String)> {
        let mut out = Vec::new();
        let mut embedder_id = String::new();
        for s in sweeps {
            let (epochs, thetas) = sweep(&s.sweep)?;
            let emb = embed(&epochs)?;
            embedder_id.clone_from(&emb.embedder_id);
            let r = linear_decodability(&emb, &thetas, cv, s.sweep.param_name.name())?;
            emit_report(&r, &out_dir.join(format!("decode_{}.json", s.label)))?;
            r.write_csv(&out_dir.join(format!("decode_{}.csv", s.label)))?;
            out.push(SweepResult::new(&s.label, &s.sweep, &r));
        }
        Ok((out, embedder_id))
    };
    let report = match &cfg.pipeline {
        Pipeline::Decode(d) => {
            let (decoding, embedder_id) = decode_all(&d.sweeps, &d.cv, &|e| d.embedder.embed(e))?;
            RecipeReport {
                name: cfg.name.clone(),
                seed: cfg.seed,
                config_digest,
                embedder_id,
                decoding,
                ae_train_log: None,
                battery: None,
                geometry: None,
                warnings: Vec::new(),
            }
        }
        Pipeline::Bias(b) => {
            let mixed = make_mixed_corpus(&b.mixed)?;
            let model = train_masked_ae(&mixed, &b.mask, &b.arch, &b.train)?;
            write_atomic(&out_dir.join("model.json"), to_canonical_json(&model)?.as_bytes())?;
            let (decoding, embedder_id) = decode_all(&b.sweeps, &b.cv, &|e| embed_ae(&model, e))?;
            let corpus = make_subject_task_corpus(&b.corpus)?;
            let emb = embed_ae(&model, &corpus.epochs)?;
            let battery = subject_task_battery(&emb, &corpus.subjects, &corpus.tasks, &corpus.split, &b.probe)?;
            emit_report(&battery, &out_dir.join("battery.json"))?;
            battery.task.write_confusion_csv(&out_dir.join("confusion_task.csv"))?;
            battery.subject.write_confusion_csv(&out_dir.join("confusion_subject.csv"))?;
            corpus.split.write_csv(&out_dir.join("split.csv"))?;
            let geometry = cluster_distances(&centroids(&emb, &corpus.subjects, &corpus.tasks)?)?;
            emit_report(&geometry, &out_dir.join("geometry.json"))?;
            let coords = pca2d(emb.to_f64().view())?;
            write_pca_csv(&out_dir.join("pca.csv"), coords.view(), &corpus.subjects, &corpus.tasks)?;
            RecipeReport {
                name: cfg.name.clone(),
                seed: cfg.seed,
                config_digest,
                embedder_id,
                decoding,
                ae_train_log: Some(model.train_log.clone()),
                battery: Some(battery),
                geometry: Some(geometry),
                warnings: corpus.warnings,
            }
        }
    };
    emit_report(&report, &out_dir.join("report.json"))?;
    Ok(report)
}

/// Files [`run_recipe`] writes for `config`, relative to the output directory.
pub fn recipe_outputs(config: &RecipeConfig) -> Vec<PathBuf> {
    let mut out = vec![PathBuf::from("report.json")];
    let sweeps = match &config.pipeline {
        Pipeline::Decode(d) => &d.sweeps,
        Pipeline::Bias(b) => &b.sweeps,
    };
    for s in sweeps {
        out.push(format!("decode_{}.json", s.label).into());
        out.push(format!("decode_{}.csv", s.label).into());
    }
    if matches!(config.pipeline, Pipeline::Bias(_)) {
        for f in [
            "model.json",
            "battery.json",
            "confusion_task.csv",
            "confusion_subject.csv",
            "split.csv",
            "geometry.json",
            "pca.csv",
        ] {
            out.push(f.into());
        }
    }
    out
}
