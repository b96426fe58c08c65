use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use specbias::artifact::{
    emit_report, import_embeddings, read_epochs, verify, write_atomic, write_embeddings, write_epochs, VerifyReport,
};
use specbias::canonical::{digest, to_canonical_json};
use specbias::corpus::{make_mixed_corpus, make_subject_task_corpus};
use specbias::decode::linear_decodability;
use specbias::embed::{train_masked_ae, EmbeddingSet};
use specbias::forward::{covariance_check, simulate};
use specbias::geometry::{centroids, cluster_distances, pca2d, write_pca_csv};
use specbias::probe::{subject_task_battery, train_linear_probe, LabelKind, LabelSet, Split};
use specbias::recipe::{run_recipe, RecipeConfig};
use specbias::rng::{self, sub_seed, tag};
use specbias::spectrum::{gen_power_spectrum, sweep, synthesize, SweepSpec};
use specbias::{EpochMeta, EpochSet, ForwardSpec};

use crate::config::*;
use crate::failure::Failure;

pub type Outcome = Result<Vec<PathBuf>, Failure>;

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn emit<T: Serialize>(value: &T, dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<(), Failure> {
    let p = out(dir, name);
    emit_report(value, &p)?;
    written.push(p);
    Ok(())
}

pub fn synth(cfg: SynthConfig, seed: Option<u64>, dir: &Path) -> Outcome {
    let mut written = Vec::new();
    let d = digest(&cfg)?;
    match cfg {
        SynthConfig::Spectrum(mut s) => {
            if let Some(seed) = seed {
                s.signal.seed = seed;
            }
            if s.n_draws == 0 {
                return Err(Failure::config("n_draws must be >= 1"));
            }
            let spec = gen_power_spectrum(&s.params, &s.options)?;
            let base = s.signal.seed;
            let rows: Vec<(Vec<f64>, EpochMeta)> = (0..s.n_draws)
                .into_par_iter()
                .map(|i| {
                    let seed_i = sub_seed(base, &[tag::EPOCH, i as u64]);
                    let x = synthesize(&s.params, &s.options, &s.signal, &mut rng::stream(seed_i, &[]))?;
                    Ok((x, EpochMeta { seed_used: seed_i, ..EpochMeta::default() }))
                })
                .collect::<specbias::Result<_>>()?;
            let (data, meta): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            let set = EpochSet::from_rows(data, s.signal.fs, meta)?;
            written.push(write_epochs(&set, &out(dir, "synth"), &d)?);
            let mut csv = String::from("freq,power\n");
            for (f, p) in spec.freqs.iter().zip(&spec.powers) {
                csv.push_str(&format!(
                    "{},{}\n",
                    specbias::canonical::format_float(*f),
                    specbias::canonical::format_float(*p)
                ));
            }
            let p = out(dir, "spectrum.csv");
            write_atomic(&p, csv.as_bytes())?;
            written.push(p);
        }
        SynthConfig::Corpus(mut c) => {
            if let Some(seed) = seed {
                c.signal.seed = seed;
            }
            let corpus = make_subject_task_corpus(&c)?;
            for w in &corpus.warnings {
                eprintln!("{}", serde_json::json!({"warning": w}));
            }
            written.push(write_epochs(&corpus.epochs, &out(dir, "corpus"), &d)?);
            let p = out(dir, "split.csv");
            corpus.split.write_csv(&p)?;
            written.push(p);
        }
        SynthConfig::Mixed(mut m) => {
            if let Some(seed) = seed {
                m.signal.seed = seed;
            }
            let set = make_mixed_corpus(&m)?;
            written.push(write_epochs(&set, &out(dir, "mixed"), &d)?);
        }
    }
    Ok(written)
}

pub fn sweep_cmd(mut spec: SweepSpec, seed: Option<u64>, dir: &Path) -> Outcome {
    if let Some(seed) = seed {
        spec.config.seed = seed;
    }
    let (set, _) = sweep(&spec)?;
    Ok(vec![write_epochs(&set, &out(dir, "sweep"), &digest(&spec)?)?])
}

pub fn forward(mut spec: ForwardSpec, seed: Option<u64>, dir: &Path) -> Outcome {
    if let Some(seed) = seed {
        spec.config.seed = seed;
    }
    let set = simulate(&spec)?;
    let report = covariance_check(&set, &spec)?;
    let mut written = vec![write_epochs(&set, &out(dir, "forward"), &digest(&spec)?)?];
    emit(&report, dir, "covariance.json", &mut written)?;
    Ok(written)
}

pub fn train_ae(mut cfg: TrainAeConfig, seed: Option<u64>, dir: &Path) -> Outcome {
    if let Some(seed) = seed {
        cfg.train.seed = sub_seed(seed, &[tag::INIT]);
        cfg.mask.seed = sub_seed(seed, &[tag::MASK]);
        if let Some(m) = &mut cfg.mixed {
            m.signal.seed = sub_seed(seed, &[tag::CORPUS]);
        }
    }
    let epochs = match (&cfg.input, &cfg.mixed) {
        (Some(p), None) => read_epochs(p)?,
        (None, Some(m)) => make_mixed_corpus(m)?,
        _ => return Err(Failure::config("train-ae needs exactly one of `input` or `mixed`")),
    };
    let model = train_masked_ae(&epochs, &cfg.mask, &cfg.arch, &cfg.train)?;
    let p = out(dir, "model.json");
    write_atomic(&p, to_canonical_json(&model)?.as_bytes())?;
    Ok(vec![p])
}

pub fn embed(cfg: EmbedConfig, dir: &Path) -> Outcome {
    let epochs = read_epochs(&cfg.input)?;
    let emb = cfg.embedder.embed(&epochs)?;
    Ok(vec![write_embeddings(&emb, &out(dir, "embeddings"))?])
}

#[derive(Serialize)]
struct ImportReport {
    source: String,
    n: usize,
    d: usize,
    embedder_id: String,
    config_digest: String,
}

pub fn import_emb(cfg: ImportConfig, dir: &Path) -> Outcome {
    let emb = import_embeddings(&cfg.input)?;
    if let Some(n) = cfg.expected_n.filter(|&n| n != emb.len()) {
        return Err(Failure::new(
            crate::failure::DATA,
            "shape",
            format!("expected {n} rows, manifest has {}", emb.len()),
        ));
    }
    if let Some(d) = cfg.expected_d.filter(|&d| d != emb.dim()) {
        return Err(Failure::new(
            crate::failure::DATA,
            "shape",
            format!("expected dimension {d}, manifest has {}", emb.dim()),
        ));
    }
    let mut written = vec![write_embeddings(&emb, &out(dir, "imported"))?];
    let report = ImportReport {
        source: cfg.input.display().to_string(),
        n: emb.len(),
        d: emb.dim(),
        embedder_id: emb.embedder_id.clone(),
        config_digest: emb.config_digest.clone(),
    };
    emit(&report, dir, "import.json", &mut written)?;
    Ok(written)
}

fn read_targets(t: &Targets) -> Result<Vec<f64>, Failure> {
    match t {
        Targets::Values { values } => Ok(values.clone()),
        Targets::Theta { epochs } => read_epochs(epochs)?
            .thetas()
            .ok_or_else(|| Failure::data(format!("{} does not record theta for every epoch", epochs.display()))),
        Targets::Csv { path, column } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::missing(format!("cannot read {}: {e}", path.display())))?;
            let mut lines = text.lines();
            let header = lines.next().ok_or_else(|| Failure::data(format!("{} is empty", path.display())))?;
            let col = header
                .split(',')
                .position(|h| h.trim() == column)
                .ok_or_else(|| Failure::config(format!("{} has no column {column:?}", path.display())))?;
            lines
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    l.split(',').nth(col).and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| {
                        Failure::data(format!("{} row {}: no number in column {column:?}", path.display(), i + 1))
                    })
                })
                .collect()
        }
    }
}

pub fn decode(mut cfg: DecodeConfig, seed: Option<u64>, dir: &Path) -> Outcome {
    if let Some(seed) = seed {
        cfg.cv.shuffle_seed = seed;
    }
    let emb = import_embeddings(&cfg.embeddings)?;
    let targets = read_targets(&cfg.targets)?;
    let report = linear_decodability(&emb, &targets, &cfg.cv, &cfg.target_name)?;
    let mut written = Vec::new();
    emit(&report, dir, "decode.json", &mut written)?;
    let p = out(dir, "decode.csv");
    report.write_csv(&p)?;
    written.push(p);
    Ok(written)
}

fn labels_from(epochs: &EpochSet, kind: LabelKind, path: &Path) -> Result<LabelSet, Failure> {
    let field = |m: &EpochMeta| match kind {
        LabelKind::Subject => m.subject_id.clone(),
        LabelKind::Task => m.task_id.clone(),
    };
    let names: Option<Vec<String>> = epochs.meta.iter().map(field).collect();
    let names = names.ok_or_else(|| Failure::data(format!("{} lacks a {kind:?} id on some epochs", path.display())))?;
    Ok(LabelSet::from_names(&names, kind))
}

fn load_labelled(emb_path: &Path, epochs_path: &Path) -> Result<(EmbeddingSet, EpochSet), Failure> {
    let emb = import_embeddings(emb_path)?;
    let epochs = read_epochs(epochs_path)?;
    if epochs.len() != emb.len() {
        return Err(Failure::data(format!("{} embeddings but {} epochs", emb.len(), epochs.len())));
    }
    Ok((emb, epochs))
}

pub fn probe(mut cfg: ProbeConfig, seed: Option<u64>, dir: &Path) -> Outcome {
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let (emb, epochs) = load_labelled(&cfg.embeddings, &cfg.epochs)?;
    let labels = labels_from(&epochs, cfg.label, &cfg.epochs)?;
    let split = Split::read_csv(&cfg.split)?;
    let (probe, report) = train_linear_probe(&emb, &labels, &split, &cfg.train)?;
    let mut written = Vec::new();
    emit(&report, dir, "probe.json", &mut written)?;
    emit(&probe, dir, "probe_model.json", &mut written)?;
    let p = out(dir, "confusion.csv");
    report.write_confusion_csv(&p)?;
    written.push(p);
    Ok(written)
}

pub fn battery(mut cfg: BatteryConfig, seed: Option<u64>, dir: &Path) -> Outcome {
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let (emb, epochs) = load_labelled(&cfg.embeddings, &cfg.epochs)?;
    let subjects = labels_from(&epochs, LabelKind::Subject, &cfg.epochs)?;
    let tasks = labels_from(&epochs, LabelKind::Task, &cfg.epochs)?;
    let split = Split::read_csv(&cfg.split)?;
    let report = subject_task_battery(&emb, &subjects, &tasks, &split, &cfg.train)?;
    let mut written = Vec::new();
    emit(&report, dir, "battery.json", &mut written)?;
    for (name, r) in [("confusion_task.csv", &report.task), ("confusion_subject.csv", &report.subject)] {
        let p = out(dir, name);
        r.write_confusion_csv(&p)?;
        written.push(p);
    }
    Ok(written)
}

pub fn geometry(cfg: GeometryConfig, dir: &Path) -> Outcome {
    let (emb, epochs) = load_labelled(&cfg.embeddings, &cfg.epochs)?;
    let subjects = labels_from(&epochs, LabelKind::Subject, &cfg.epochs)?;
    let tasks = labels_from(&epochs, LabelKind::Task, &cfg.epochs)?;
    let table = centroids(&emb, &subjects, &tasks)?;
    let report = cluster_distances(&table)?;
    let mut written = Vec::new();
    emit(&report, dir, "geometry.json", &mut written)?;
    emit(&table, dir, "centroids.json", &mut written)?;
    let coords = pca2d(emb.to_f64().view())?;
    let p = out(dir, "pca.csv");
    write_pca_csv(&p, coords.view(), &subjects, &tasks)?;
    written.push(p);
    Ok(written)
}

pub fn recipe(mut cfg: RecipeConfig, seed: Option<u64>, dir: &Path) -> Outcome {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    run_recipe(&cfg, dir)?;
    Ok(specbias::recipe::recipe_outputs(&cfg).into_iter().map(|p| dir.join(p)).collect())
}

pub fn verify_all(paths: &[PathBuf]) -> Result<Vec<VerifyReport>, Failure> {
    if paths.is_empty() {
        return Err(Failure::config("verify needs at least one path"));
    }
    paths.iter().map(|p| verify(p).map_err(Failure::from)).collect()
}
