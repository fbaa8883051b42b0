mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::error::CliError;
use crate::manifest::{bytes_digest, now_unix, RunManifest};

/// Training laboratory for auditory-model emulators.
#[derive(Parser)]
#[command(name = "fmae-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise or ingest a corpus of mono waveforms.
    Gen(Common),
    /// Estimate the per-channel and per-level weight table.
    Weights(Common),
    /// Train an emulator under the mae or fmae objective.
    Train(Common),
    /// SER matrices, log-MAE curves and their differences on a held-out corpus.
    Eval(Common),
    /// Pure-tone excitation patterns for the reference and trained emulators.
    Excite(Common),
    /// Per-channel, per-level energy map of the reference model.
    Energymap(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config for the command.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::Gen(c) => ("gen", c),
            Command::Weights(c) => ("weights", c),
            Command::Train(c) => ("train", c),
            Command::Eval(c) => ("eval", c),
            Command::Excite(c) => ("excite", c),
            Command::Energymap(c) => ("energymap", c),
        }
    }
}

fn hint(e: &CliError) -> Option<&'static str> {
    match e.kind() {
        "missing_weight_table" => Some("run `fmae-lab weights` and point the train config's `weights` field at its weights.json"),
        "digest_mismatch" => Some("an input changed after it was recorded; regenerate it"),
        _ => None,
    }
}

fn run(name: &str, args: &Common) -> Result<PathBuf, CliError> {
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let started = now_unix();
    let (outcome, config_bytes) = commands::dispatch(name, &args.config, args.seed, &args.out)?;
    let manifest = RunManifest {
        command: name.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: config::SCHEMA_VERSION,
        config_digest: bytes_digest(&config_bytes),
        seed: outcome.seed,
        inputs: outcome.inputs,
        outputs: Vec::new(),
        started_unix: started,
        finished_unix: 0,
    };
    manifest.finish(&args.out, &outcome.outputs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FMAE_LAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let (name, args) = cli.command.split();
    match run(name, args) {
        Ok(manifest) => {
            info!("wrote {}", manifest.display());
            println!("{}", Path::new(&manifest).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({
                "error": { "command": name, "kind": e.kind(), "message": e.to_string(), "hint": hint(&e) }
            });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
