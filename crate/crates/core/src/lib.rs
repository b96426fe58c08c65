//! Synthetic EEG spectra with controlled aperiodic and oscillatory content,
//! plus tools that measure how much of that content an embedding keeps.
//!
//! ```
//! use specbias::spectrum::{gen_power_spectrum, SpectralParams, SpectrumOptions};
//!
//! let spec = gen_power_spectrum(&SpectralParams::default(), &SpectrumOptions::default()).unwrap();
//! assert_eq!(spec.freqs[0], 1.0);
//! ```

pub mod artifact;
pub mod canonical;
pub mod corpus;
pub mod decode;
pub mod embed;
pub mod epochs;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod optim;
pub mod probe;
pub mod recipe;
pub mod rng;
pub mod spectrum;

pub use artifact::ArtifactKind;
pub use decode::{CVConfig, DecodabilityReport};
pub use embed::{EmbedderSpec, EmbeddingSet, MaskedAEModel};
pub use epochs::{EpochMeta, EpochSet};
pub use error::{Error, Result};
pub use forward::{CovarianceReport, ForwardSpec, SourceSpec};
pub use geometry::{CentroidTable, GeometryReport};
pub use optim::TrainConfig;
pub use probe::{LabelKind, LabelSet, ProbeReport, ProbeTrainConfig, Split};
pub use recipe::RecipeConfig;
pub use spectrum::{SignalConfig, SpectralParams, Spectrum, SpectrumOptions, SweepSpec};
