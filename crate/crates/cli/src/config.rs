//! JSON configuration documents, one per subcommand.
//!
//! Paths inside a config are resolved against the current working directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use specbias::corpus::{CorpusConfig, MixedCorpusConfig};
use specbias::decode::CVConfig;
use specbias::embed::{ArchConfig, EmbedderSpec, MaskConfig};
use specbias::probe::{LabelKind, ProbeTrainConfig};
use specbias::recipe::ae_train_defaults;
use specbias::spectrum::{SignalConfig, SpectralParams, SpectrumOptions};
use specbias::TrainConfig;

use crate::failure::Failure;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::missing(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthConfig {
    /// Independent draws from one parameterized spectrum.
    Spectrum(SpectrumSynth),
    /// Labelled subject/task corpus plus its train/test split.
    Corpus(CorpusConfig),
    /// Unlabelled corpus with uniformly drawn parameters.
    Mixed(MixedCorpusConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumSynth {
    pub params: SpectralParams,
    pub options: SpectrumOptions,
    pub signal: SignalConfig,
    pub n_draws: usize,
}

impl Default for SpectrumSynth {
    fn default() -> Self {
        Self {
            params: SpectralParams::default(),
            options: SpectrumOptions::default(),
            signal: SignalConfig::default(),
            n_draws: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainAeConfig {
    /// Training epochs on disk; mutually exclusive with `mixed`.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Generate a mixed corpus to train on.
    #[serde(default)]
    pub mixed: Option<MixedCorpusConfig>,
    #[serde(default)]
    pub mask: MaskConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default = "ae_train_defaults")]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub input: PathBuf,
    pub embedder: EmbedderSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub expected_n: Option<usize>,
    #[serde(default)]
    pub expected_d: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum Targets {
    /// The swept parameter recorded in an epochs manifest.
    Theta {
        epochs: PathBuf,
    },
    /// One column of a CSV file with a header row.
    Csv {
        path: PathBuf,
        column: String,
    },
    Values {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub embeddings: PathBuf,
    pub targets: Targets,
    #[serde(default = "default_target_name")]
    pub target_name: String,
    #[serde(default)]
    pub cv: CVConfig,
}

fn default_target_name() -> String {
    "target".into()
}

/// Labels come from the `subject_id` / `task_id` fields of the epochs manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub embeddings: PathBuf,
    pub epochs: PathBuf,
    pub label: LabelKind,
    pub split: PathBuf,
    #[serde(default)]
    pub train: ProbeTrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub embeddings: PathBuf,
    pub epochs: PathBuf,
    pub split: PathBuf,
    #[serde(default)]
    pub train: ProbeTrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub embeddings: PathBuf,
    pub epochs: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerifyConfig {
    #[serde(default)]
    pub paths: Vec<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use specbias::spectrum::SweepSpec;
    use specbias::{ForwardSpec, RecipeConfig};

    fn shipped(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
    }

    #[test]
    fn every_shipped_config_parses() {
        let mut seen = 0;
        for entry in std::fs::read_dir(shipped("")).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let parsed = match name.trim_end_matches(".json") {
                n if n.starts_with("synth_") => load::<SynthConfig>(&path).map(drop),
                n if n.starts_with("sweep_") => load::<SweepSpec>(&path).map(drop),
                n if n.starts_with("embed_") => load::<EmbedConfig>(&path).map(drop),
                "forward_default" => load::<ForwardSpec>(&path).map(drop),
                "train_ae" => load::<TrainAeConfig>(&path).map(drop),
                "import_emb" => load::<ImportConfig>(&path).map(drop),
                "decode_theta" => load::<DecodeConfig>(&path).map(drop),
                "decode_logpsd" | "bias_demo" => {
                    load::<RecipeConfig>(&path).and_then(|r| r.validate().map_err(Failure::from))
                }
                "probe_task" => load::<ProbeConfig>(&path).map(drop),
                "battery" => load::<BatteryConfig>(&path).map(drop),
                "geometry" => load::<GeometryConfig>(&path).map(drop),
                other => panic!("no parser registered for configs/{other}.json"),
            };
            parsed.unwrap_or_else(|f| panic!("{name}: {}", f.message));
            seen += 1;
        }
        assert!(seen >= 18, "{seen}");
    }

    #[test]
    fn load_distinguishes_missing_from_malformed() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            load::<DecodeConfig>(&dir.path().join("nope.json")).unwrap_err().code,
            crate::failure::MISSING_INPUT
        );
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{\"embeddings\": 3}").unwrap();
        assert_eq!(load::<DecodeConfig>(&bad).unwrap_err().code, crate::failure::CONFIG);
    }

    #[test]
    fn targets_are_tagged_by_source() {
        let t: Targets = serde_json::from_str(r#"{"from": "values", "values": [1.0, 2.5]}"#).unwrap();
        assert!(matches!(t, Targets::Values { values } if values == [1.0, 2.5]));
        let t: Targets = serde_json::from_str(r#"{"from": "csv", "path": "t.csv", "column": "beta"}"#).unwrap();
        assert!(matches!(t, Targets::Csv { column, .. } if column == "beta"));
    }
}
