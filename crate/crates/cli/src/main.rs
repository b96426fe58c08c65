//! `specbias` command-line entry point. Each subcommand reads one JSON config
//! and writes its outputs under `--out-dir`.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Outcome;
use failure::{Failure, EXIT_CODES};

#[derive(Parser)]
#[command(name = "specbias", version, about = "Spectral-bias diagnostics for EEG embedders", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration document.
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the outputs; created if missing.
    #[arg(long, env = "SPECBIAS_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, env = "SPECBIAS_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw epochs from a spectrum, a subject/task corpus or a mixed corpus.
    Synth(Common),
    /// One-parameter sweep written as an epochs artifact.
    Sweep(Common),
    /// Multichannel forward simulation plus its covariance report.
    Forward(Common),
    /// Train the masked autoencoder.
    #[command(name = "train-ae")]
    TrainAe(Common),
    /// Embed an epochs artifact.
    Embed(Common),
    /// Validate externally computed embeddings and re-emit them with a digest.
    #[command(name = "import-emb")]
    ImportEmb(Common),
    /// Nested cross-validated ridge decoding of a scalar target.
    Decode(Common),
    /// Linear probe for task or subject labels.
    Probe(Common),
    /// Task and subject probes on a shared split.
    Battery(Common),
    /// Centroid distances and a 2-D PCA export.
    Geometry(Common),
    /// Run a full pipeline from one config.
    Recipe(Common),
    /// Re-check artifact digests and report canonical form.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// JSON document `{"paths": [...]}`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accepted for uniformity; verify writes nothing.
    #[arg(long)]
    seed: Option<u64>,
    /// Accepted for uniformity; verify writes nothing.
    #[arg(long, env = "SPECBIAS_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Manifests or reports to check.
    paths: Vec<PathBuf>,
}

fn setup(c: &Common) -> Result<(), Failure> {
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Failure::new(failure::USAGE, "usage", "--threads must be >= 1"));
        }
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::fs::create_dir_all(&c.out_dir)
        .map_err(|e| Failure::missing(format!("cannot create {}: {e}", c.out_dir.display())))
}

fn run(cli: Cli) -> Result<String, Failure> {
    use commands::*;
    let (name, written) = match cli.command {
        Command::Verify(v) => {
            let mut paths = v.paths;
            if let Some(cfg) = &v.config {
                paths.extend(config::load::<config::VerifyConfig>(cfg)?.paths);
            }
            let reports = verify_all(&paths)?;
            return Ok(serde_json::json!({"command": "verify", "ok": reports}).to_string());
        }
        Command::Synth(c) => ("synth", with(&c, |cfg| synth(cfg, c.seed, &c.out_dir))?),
        Command::Sweep(c) => ("sweep", with(&c, |cfg| sweep_cmd(cfg, c.seed, &c.out_dir))?),
        Command::Forward(c) => ("forward", with(&c, |cfg| forward(cfg, c.seed, &c.out_dir))?),
        Command::TrainAe(c) => ("train-ae", with(&c, |cfg| train_ae(cfg, c.seed, &c.out_dir))?),
        Command::Embed(c) => ("embed", with(&c, |cfg| embed(cfg, &c.out_dir))?),
        Command::ImportEmb(c) => ("import-emb", with(&c, |cfg| import_emb(cfg, &c.out_dir))?),
        Command::Decode(c) => ("decode", with(&c, |cfg| decode(cfg, c.seed, &c.out_dir))?),
        Command::Probe(c) => ("probe", with(&c, |cfg| probe(cfg, c.seed, &c.out_dir))?),
        Command::Battery(c) => ("battery", with(&c, |cfg| battery(cfg, c.seed, &c.out_dir))?),
        Command::Geometry(c) => ("geometry", with(&c, |cfg| geometry(cfg, &c.out_dir))?),
        Command::Recipe(c) => ("recipe", with(&c, |cfg| recipe(cfg, c.seed, &c.out_dir))?),
    };
    let outputs: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    Ok(serde_json::json!({"command": name, "outputs": outputs}).to_string())
}

fn with<T: serde::de::DeserializeOwned>(c: &Common, f: impl FnOnce(T) -> Outcome) -> Outcome {
    setup(c)?;
    f(config::load(&c.config)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.kind().as_str().map_or_else(|| e.to_string(), str::to_string);
            let detail = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            let f = Failure::new(failure::USAGE, "usage", if detail.is_empty() { msg } else { detail });
            eprintln!("{}", f.to_json_line());
            return ExitCode::from(f.code);
        }
    };
    match run(cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.to_json_line());
            ExitCode::from(f.code)
        }
    }
}
