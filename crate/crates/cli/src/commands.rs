//! One function per subcommand. Each returns the inputs it read and the
//! files it wrote so the caller can record them in the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fmae_core::audmodel::{energy_distribution, AuditoryModel};
use fmae_core::eval::{excitation_pattern, export_report, log_mae_curve, ser_matrix, Report};
use fmae_core::signals::{read_wav, synth_speech_shaped_noise, write_wav, WavCalibration, Waveform};
use fmae_core::train::{train_emulator_in, TrainingConfig, TrainingRun};
use fmae_core::weights::{estimate_weights, WeightConfig, WeightTable};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{self, EnergyMapConfig, EvalConfig, ExciteConfig, GenConfig, Loaded, TrainConfig, WeightsConfig};
use crate::error::CliError;
use crate::manifest::{file_digest, Artifact, RunManifest, MANIFEST_FILE};

pub const CORPUS_INDEX: &str = "corpus.json";
pub const TRAINING_CORPUS: &str = "training_corpus.json";
pub const WEIGHTS_FILE: &str = "weights.json";

/// Listing of a generated corpus directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub format_version: u32,
    pub sample_rate: u32,
    pub calibration: WavCalibration,
    pub entries: Vec<Artifact>,
}

pub struct Outcome {
    pub seed: u64,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<PathBuf>,
}

/// Per-utterance seed derived from the top-level seed.
fn utterance_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i)
}

/// Checks the outputs listed in `dir`'s manifest, when there is one.
fn verify_dir(dir: &Path) -> Result<(), CliError> {
    if dir.join(MANIFEST_FILE).exists() {
        RunManifest::read(dir)?.verify(dir)?;
    }
    Ok(())
}

/// Reads a corpus directory, checking every file against its recorded digest.
pub fn load_corpus(dir: &Path) -> Result<(Vec<Waveform>, Vec<Artifact>), CliError> {
    verify_dir(dir)?;
    let index_path = dir.join(CORPUS_INDEX);
    let text = fs::read_to_string(&index_path)
        .map_err(|e| CliError::bad_config(index_path.display(), format!("cannot read corpus index: {e}")))?;
    let index: CorpusIndex = serde_json::from_str(&text)?;
    let mut inputs = vec![Artifact::of(&index_path)?];
    let mut signals = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let p = dir.join(&e.path);
        let found = file_digest(&p)?;
        if found != e.sha256 {
            return Err(CliError::DigestMismatch(format!(
                "{}: corpus index records {}, file has {found}",
                p.display(),
                e.sha256
            )));
        }
        signals.push(read_wav(&p, index.calibration, index.sample_rate)?);
        inputs.push(Artifact { path: p.display().to_string(), sha256: found });
    }
    Ok((signals, inputs))
}

fn write_corpus(out: &Path, signals: &[Waveform], rate: u32) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out)?;
    let calibration = WavCalibration::default();
    let mut entries = Vec::with_capacity(signals.len());
    let mut written = Vec::with_capacity(signals.len() + 1);
    for (i, x) in signals.iter().enumerate() {
        let name = format!("utt_{i:05}.wav");
        let p = out.join(&name);
        write_wav(&p, x, calibration)?;
        entries.push(Artifact { path: name, sha256: file_digest(&p)? });
        written.push(p);
    }
    let index = CorpusIndex { format_version: 1, sample_rate: rate, calibration, entries };
    let p = out.join(CORPUS_INDEX);
    fs::write(&p, serde_json::to_string_pretty(&index)?)?;
    written.push(p);
    Ok(written)
}

pub fn gen(cfg: &Loaded<GenConfig>, seed: Option<u64>, out: &Path) -> Result<Outcome, CliError> {
    match &cfg.config {
        GenConfig::Synth { count, duration_s, sample_rate, seed: s, .. } => {
            let seed = seed.or(*s).unwrap_or(0);
            let signals = (0..*count as u64)
                .map(|i| synth_speech_shaped_noise(*duration_s, utterance_seed(seed, i), *sample_rate))
                .collect::<Result<Vec<_>, _>>()?;
            info!("synthesised {count} utterances of {duration_s} s");
            Ok(Outcome { seed, inputs: Vec::new(), outputs: write_corpus(out, &signals, *sample_rate)? })
        }
        GenConfig::Ingest { files, sample_rate, calibration, seed: s, .. } => {
            let mut inputs = Vec::new();
            let mut signals = Vec::new();
            for f in files {
                let p = cfg.resolve(f);
                signals.push(read_wav(&p, *calibration, *sample_rate)?);
                inputs.push(Artifact::of(&p)?);
            }
            let seed = seed.or(*s).unwrap_or(0);
            Ok(Outcome { seed, inputs, outputs: write_corpus(out, &signals, *sample_rate)? })
        }
    }
}

pub fn weights(cfg: &Loaded<WeightsConfig>, seed: Option<u64>, out: &Path) -> Result<Outcome, CliError> {
    let c = &cfg.config;
    let seed = seed.or(c.seed).unwrap_or(0);
    let model = c.model.build(|p| cfg.resolve(p))?;
    let (corpus, inputs) = load_corpus(&cfg.resolve(&c.corpus))?;
    let grid = c.grid.build()?;
    let mut wc = WeightConfig { per_level: c.per_level, ..WeightConfig::default() };
    if let Some(f) = c.floor_per_sample {
        wc.floor_per_sample = f;
    }
    let table = estimate_weights(&model, &corpus, &grid, seed, &wc)?;
    fs::create_dir_all(out)?;
    let p = out.join(WEIGHTS_FILE);
    fs::write(&p, table.to_json())?;
    Ok(Outcome { seed, inputs, outputs: vec![p] })
}

pub fn train(cfg: &Loaded<TrainConfig>, seed: Option<u64>, out: &Path) -> Result<Outcome, CliError> {
    let c = &cfg.config;
    let seed = seed.or(c.seed).unwrap_or(0);
    let t = &c.training;
    let tc = TrainingConfig {
        objective: t.objective,
        epochs: t.epochs,
        batch_size: t.batch_size,
        lr: t.lr,
        seed,
        window: t.window,
        grid: t.grid.build()?,
        output_scale: t.output_scale,
        checkpoint_every: t.checkpoint_every,
    };
    tc.validate()?;
    let model = c.model.build(|p| cfg.resolve(p))?;
    let spec = c.network.build(model.num_channels())?;
    let (corpus, mut inputs) = load_corpus(&cfg.resolve(&c.corpus))?;
    let table = match &c.weights {
        Some(p) => {
            let p = cfg.resolve(p);
            if let Some(dir) = p.parent() {
                verify_dir(dir)?;
            }
            inputs.push(Artifact::of(&p)?);
            Some(WeightTable::from_json(&fs::read_to_string(&p)?)?)
        }
        None => None,
    };
    let run = train_emulator_in(&model, &corpus, &spec, &tc, table.as_ref(), Some(out))?;
    let mut outputs = run.save(out)?;
    let digests: Vec<String> = corpus.iter().map(Waveform::digest).collect();
    let p = out.join(TRAINING_CORPUS);
    fs::write(&p, serde_json::to_string_pretty(&digests)?)?;
    outputs.push(p);
    Ok(Outcome { seed, inputs, outputs })
}

/// Loads a run directory and the digests of the signals it was trained on.
fn load_run(dir: &Path, inputs: &mut Vec<Artifact>) -> Result<(TrainingRun, Vec<String>), CliError> {
    verify_dir(dir)?;
    let run = TrainingRun::load(dir)?;
    let p = dir.join(TRAINING_CORPUS);
    let digests = if p.exists() {
        inputs.push(Artifact::of(&p)?);
        serde_json::from_str(&fs::read_to_string(&p)?)?
    } else {
        Vec::new()
    };
    inputs.push(Artifact::of(&dir.join("run.json"))?);
    Ok((run, digests))
}

pub fn eval(cfg: &Loaded<EvalConfig>, seed: Option<u64>, out: &Path) -> Result<Outcome, CliError> {
    let c = &cfg.config;
    if c.runs.is_empty() {
        return Err(CliError::bad_config("runs", "at least one run directory is needed"));
    }
    let model = c.model.build(|p| cfg.resolve(p))?;
    let (test, mut inputs) = load_corpus(&cfg.resolve(&c.test_corpus))?;
    let grid = c.grid.build()?;
    let mut report = Report { deltas: c.deltas.clone(), ..Report::default() };
    for (name, dir) in &c.runs {
        let (run, train_digests) = load_run(&cfg.resolve(dir), &mut inputs)?;
        if run.model_digest != model.digest() {
            return Err(CliError::DigestMismatch(format!(
                "run {name} was trained against model {}, config describes {}",
                run.model_digest,
                model.digest()
            )));
        }
        let emu = run.emulator()?;
        report.ser.insert(name.clone(), ser_matrix(&model, &emu, &test, &grid, &train_digests, c.pooling)?);
        report.curves.insert(name.clone(), log_mae_curve(&model, &emu, &test, &grid, &train_digests)?);
    }
    let outputs = export_report(&report, out)?;
    Ok(Outcome { seed: seed.or(c.seed).unwrap_or(0), inputs, outputs })
}

pub fn excite(cfg: &Loaded<ExciteConfig>, seed: Option<u64>, out: &Path) -> Result<Outcome, CliError> {
    let c = &cfg.config;
    if c.freqs.is_empty() || c.levels.is_empty() {
        return Err(CliError::bad_config("freqs/levels", "need at least one tone frequency and level"));
    }
    let model = c.model.build(|p| cfg.resolve(p))?;
    let mut inputs = Vec::new();
    let mut models: Vec<(String, Box<dyn AuditoryModel>)> = vec![("reference".into(), Box::new(model))];
    for (name, dir) in &c.runs {
        let (run, _) = load_run(&cfg.resolve(dir), &mut inputs)?;
        models.push((name.clone(), Box::new(run.emulator()?)));
    }
    let mut report = Report::default();
    for (name, m) in &models {
        let mut patterns = Vec::new();
        for &f in &c.freqs {
            for &l in &c.levels {
                patterns.push(excitation_pattern(m.as_ref(), f, l, c.duration_s)?);
            }
        }
        report.excitation.insert(name.clone(), patterns);
    }
    let outputs = export_report(&report, out)?;
    Ok(Outcome { seed: seed.or(c.seed).unwrap_or(0), inputs, outputs })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnergySummary {
    pub max_min_ratio: f64,
    /// Channels whose energy rises strictly with level.
    pub monotone_channels: usize,
    pub channels: usize,
}

pub fn energymap(cfg: &Loaded<EnergyMapConfig>, seed: Option<u64>, out: &Path) -> Result<Outcome, CliError> {
    let c = &cfg.config;
    let model = c.model.build(|p| cfg.resolve(p))?;
    let (corpus, inputs) = load_corpus(&cfg.resolve(&c.corpus))?;
    let grid = c.grid.build()?;
    let m = energy_distribution(&model, &corpus, &grid)?;
    fs::create_dir_all(out)?;
    let mut csv = String::from("cf_hz");
    for l in grid.levels() {
        write!(csv, ",{l:?}").expect("writing to a String");
    }
    csv.push('\n');
    for (cf, row) in model.cfs().iter().zip(m.iter_rows()) {
        write!(csv, "{cf:?}").expect("writing to a String");
        for v in row {
            write!(csv, ",{v:?}").expect("writing to a String");
        }
        csv.push('\n');
    }
    let csv_path = out.join("energy.csv");
    fs::write(&csv_path, csv)?;
    let summary = EnergySummary {
        max_min_ratio: m.max() / m.min(),
        monotone_channels: m.iter_rows().filter(|r| r.windows(2).all(|w| w[1] > w[0])).count(),
        channels: m.rows(),
    };
    let summary_path = out.join("energy_summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    Ok(Outcome { seed: seed.or(c.seed).unwrap_or(0), inputs, outputs: vec![csv_path, summary_path] })
}

/// Loads the config for `command` and runs it.
pub fn dispatch(command: &str, config: &Path, seed: Option<u64>, out: &Path) -> Result<(Outcome, Vec<u8>), CliError> {
    fn go<T: serde::de::DeserializeOwned>(
        config: &Path,
        f: impl FnOnce(&Loaded<T>) -> Result<Outcome, CliError>,
    ) -> Result<(Outcome, Vec<u8>), CliError> {
        let loaded = config::load::<T>(config)?;
        let outcome = f(&loaded)?;
        Ok((outcome, loaded.bytes))
    }
    match command {
        "gen" => go(config, |c| gen(c, seed, out)),
        "weights" => go(config, |c| weights(c, seed, out)),
        "train" => go(config, |c| train(c, seed, out)),
        "eval" => go(config, |c| eval(c, seed, out)),
        "excite" => go(config, |c| excite(c, seed, out)),
        "energymap" => go(config, |c| energymap(c, seed, out)),
        other => Err(CliError::Usage(format!("unknown command {other}"))),
    }
}
