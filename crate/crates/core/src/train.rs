//! Training an emulator against a reference model.
//!
//! Utterances are normalised to a seeded level from the grid, passed through
//! the reference model once, and cut into context-extended windows whose
//! targets are slices of the full-utterance output. Every epoch visits the
//! windows in a fresh seeded order; gradients are averaged over each batch
//! and applied with one Adam step. Under FMAE the network learns `β ⊙ f` and
//! [`Emulator`] divides `β` back out.

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audmodel::{AuditoryModel, InnerRepresentation, ModelError};
use crate::digest::Hasher;
use crate::loss::{fmae_matrix, mae_matrix, LossError};
use crate::matrix::Matrix;
use crate::net::{
    adam_step, init_params, load_checkpoint, save_checkpoint, AdamConfig, AdamState, CompiledNet, NetError,
    NetworkSpec, ParameterSet, Tensor,
};
use crate::signals::{build_level_dataset, segment_level, window_with_context, LevelGrid, Segment, SignalError, Waveform, WindowSpec};
use crate::weights::{WeightError, WeightTable};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configurations differ in more than the objective: {0}")]
    ConfigMismatch(String),
    #[error("objective fmae needs a weight table; estimate one first")]
    MissingWeightTable,
    #[error("weight table does not fit this run: {0}")]
    WeightTableMismatch(String),
    #[error("loss became non-finite at step {step}")]
    DivergenceDetected { step: u64, checkpoint: Option<PathBuf> },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("run directory is incomplete or corrupt: {0}")]
    BadRun(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mae,
    Fmae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub window: WindowSpec,
    pub grid: LevelGrid,
    /// Extra factor applied to reference outputs before training; the emulator
    /// divides it back out. Leave at 1 when the model already scales its output.
    pub output_scale: f64,
    /// Keep a parameter snapshot every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl TrainingConfig {
    /// Desk-scale defaults: 30 epochs, batch 16, the standard window and grid.
    pub fn desk(objective: Objective, seed: u64) -> Self {
        Self {
            objective,
            epochs: 30,
            batch_size: 16,
            lr: AdamConfig::default().lr,
            seed,
            window: WindowSpec::standard(),
            grid: LevelGrid::standard(),
            output_scale: 1.0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return bad("output_scale must be positive");
        }
        Ok(())
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub segment: Segment,
    /// Reference output on the core window, `J × window_len`.
    pub target: Matrix,
    /// Level of the core window.
    pub l_star: f64,
    /// Level the source utterance was normalised to.
    pub level: f64,
}

/// Level-normalises the corpus, computes full-utterance targets, and windows them.
pub fn prepare_pairs(
    model: &dyn AuditoryModel,
    corpus: &[Waveform],
    grid: &LevelGrid,
    window: &WindowSpec,
    seed: u64,
) -> Result<Vec<TrainingPair>, TrainError> {
    prepare_scaled_pairs(model, corpus, grid, window, seed, 1.0)
}

fn prepare_scaled_pairs(
    model: &dyn AuditoryModel,
    corpus: &[Waveform],
    grid: &LevelGrid,
    window: &WindowSpec,
    seed: u64,
    scale: f64,
) -> Result<Vec<TrainingPair>, TrainError> {
    let dataset = build_level_dataset(corpus, grid, seed)?;
    let per_utterance = dataset
        .par_iter()
        .map(|(x, level)| -> Result<Vec<TrainingPair>, TrainError> {
            let y = model.forward(x)?;
            let y = if scale == 1.0 { y.into_channels() } else { y.channels().scale(scale) };
            window_with_context(x, window)?
                .into_iter()
                .map(|segment| {
                    let target = y.slice_cols(segment.core_in_source.start, segment.core_in_source.end);
                    let l_star = segment_level(segment.core(), x.len())?;
                    Ok(TrainingPair { segment, target, l_star, level: *level })
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_utterance.into_iter().flatten().collect())
}

/// Trained emulator and its history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub config: TrainingConfig,
    pub spec: NetworkSpec,
    pub weight_table: Option<WeightTable>,
    /// `(step, mean loss over the epoch)`, one entry per epoch.
    pub loss_curve: Vec<(u64, f64)>,
    pub params: ParameterSet<f64>,
    pub snapshots: Vec<(u64, ParameterSet<f64>)>,
    pub cfs: Vec<f64>,
    pub sample_rate: u32,
    pub model_digest: String,
    pub steps: u64,
}

/// Summary written next to the run artefacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub cfs: Vec<f64>,
    pub sample_rate: u32,
    pub model_digest: String,
    pub steps: u64,
    pub final_checkpoint: String,
    pub params_digest: String,
}

impl TrainingRun {
    /// Identifier of the final parameters.
    pub fn params_digest(&self) -> String {
        Hasher::new().str(&self.spec.to_json()).f64s(&self.params.values).finish()
    }

    pub fn final_checkpoint_name(&self) -> String {
        "final.ckpt".into()
    }

    /// Writes config, spec, weights, loss curve and checkpoints under `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>, TrainError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, text: String| -> Result<(), TrainError> {
            let p = dir.join(name);
            fs::write(&p, text)?;
            written.push(p);
            Ok(())
        };
        put("config.json", serde_json::to_string_pretty(&self.config)?)?;
        put("spec.json", serde_json::to_string_pretty(&self.spec)?)?;
        if let Some(t) = &self.weight_table {
            put("weights.json", t.to_json())?;
        }
        let mut csv = String::from("step,value\n");
        for (s, v) in &self.loss_curve {
            csv.push_str(&format!("{s},{v}\n"));
        }
        put("loss.csv", csv)?;
        let info = RunInfo {
            cfs: self.cfs.clone(),
            sample_rate: self.sample_rate,
            model_digest: self.model_digest.clone(),
            steps: self.steps,
            final_checkpoint: self.final_checkpoint_name(),
            params_digest: self.params_digest(),
        };
        put("run.json", serde_json::to_string_pretty(&info)?)?;
        for (step, p) in &self.snapshots {
            let path = dir.join(format!("step_{step:08}.ckpt"));
            save_checkpoint(&path, &self.spec, p, *step)?;
            written.push(path);
        }
        let path = dir.join(self.final_checkpoint_name());
        save_checkpoint(&path, &self.spec, &self.params, self.steps)?;
        written.push(path);
        Ok(written)
    }

    /// Reads a run written by [`TrainingRun::save`]. Snapshots are not reloaded.
    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let read = |name: &str| fs::read_to_string(dir.join(name));
        let config: TrainingConfig = serde_json::from_str(&read("config.json")?)?;
        let spec: NetworkSpec = serde_json::from_str(&read("spec.json")?)?;
        let info: RunInfo = serde_json::from_str(&read("run.json")?)?;
        let weight_table = match config.objective {
            Objective::Fmae => Some(WeightTable::from_json(&read("weights.json")?)?),
            Objective::Mae => None,
        };
        let mut loss_curve = Vec::new();
        for line in read("loss.csv")?.lines().skip(1) {
            let (s, v) = line.split_once(',').ok_or_else(|| TrainError::BadRun(format!("loss.csv line {line:?}")))?;
            let bad = || TrainError::BadRun(format!("loss.csv line {line:?}"));
            loss_curve.push((s.parse().map_err(|_| bad())?, v.parse().map_err(|_| bad())?));
        }
        let ckpt = load_checkpoint(&dir.join(&info.final_checkpoint), &spec)?;
        let run = Self {
            config,
            spec,
            weight_table,
            loss_curve,
            params: ckpt.params,
            snapshots: Vec::new(),
            cfs: info.cfs,
            sample_rate: info.sample_rate,
            model_digest: info.model_digest,
            steps: ckpt.step,
        };
        if run.params_digest() != info.params_digest {
            return Err(TrainError::BadRun("parameter digest does not match run.json".into()));
        }
        Ok(run)
    }

    pub fn emulator(&self) -> Result<Emulator, TrainError> {
        Emulator::new(self)
    }
}

fn check_table(table: &WeightTable, model: &dyn AuditoryModel, grid: &LevelGrid) -> Result<(), TrainError> {
    if table.model_digest() != model.digest() {
        return Err(TrainError::WeightTableMismatch("estimated for a different model".into()));
    }
    if table.cfs() != model.cfs() {
        return Err(TrainError::WeightTableMismatch("channel CFs differ".into()));
    }
    if table.grid() != grid {
        return Err(TrainError::WeightTableMismatch("level grid differs from the training grid".into()));
    }
    Ok(())
}

/// Trains one emulator. `table` is required for the FMAE objective.
pub fn train_emulator(
    model: &dyn AuditoryModel,
    corpus: &[Waveform],
    spec: &NetworkSpec,
    cfg: &TrainingConfig,
    table: Option<&WeightTable>,
) -> Result<TrainingRun, TrainError> {
    train_emulator_in(model, corpus, spec, cfg, table, None)
}

/// As [`train_emulator`]; on divergence the offending parameters are written to `scratch`.
pub fn train_emulator_in(
    model: &dyn AuditoryModel,
    corpus: &[Waveform],
    spec: &NetworkSpec,
    cfg: &TrainingConfig,
    table: Option<&WeightTable>,
    scratch: Option<&Path>,
) -> Result<TrainingRun, TrainError> {
    cfg.validate()?;
    let table = match (cfg.objective, table) {
        (Objective::Fmae, None) => return Err(TrainError::MissingWeightTable),
        (Objective::Fmae, Some(t)) => {
            check_table(t, model, &cfg.grid)?;
            Some(t)
        }
        (Objective::Mae, _) => None,
    };
    if spec.out_channels != model.num_channels() {
        return Err(TrainError::InvalidConfig(format!(
            "network emits {} channels, model has {}",
            spec.out_channels,
            model.num_channels()
        )));
    }
    let pairs = prepare_scaled_pairs(model, corpus, &cfg.grid, &cfg.window, cfg.seed, cfg.output_scale)?;
    let run = train_on_pairs(&pairs, spec, cfg, table, scratch)?;
    Ok(TrainingRun { cfs: model.cfs().to_vec(), sample_rate: model.sample_rate(), model_digest: model.digest(), ..run })
}

/// Loss and its gradient for one pair under the configured objective.
fn pair_loss(pair: &TrainingPair, pred: &Matrix, table: Option<&WeightTable>) -> Result<(f64, Matrix), LossError> {
    let l = match table {
        Some(t) => fmae_matrix(&pair.target, pred, t.beta(), &t.level_weights(pair.l_star))?,
        None => mae_matrix(&pair.target, pred)?,
    };
    Ok((l.value, l.gradient))
}

fn train_on_pairs(
    pairs: &[TrainingPair],
    spec: &NetworkSpec,
    cfg: &TrainingConfig,
    table: Option<&WeightTable>,
    scratch: Option<&Path>,
) -> Result<TrainingRun, TrainError> {
    if pairs.is_empty() {
        return Err(SignalError::EmptyCorpus.into());
    }
    let net = CompiledNet::new(spec.clone())?;
    for p in pairs {
        net.check_len(p.segment.waveform.len())?;
    }
    let mut params = init_params(spec, cfg.seed)?.cast::<f32>();
    let mut adam = AdamState::<f32>::new(params.values.len(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let inputs: Vec<Vec<f32>> =
        pairs.iter().map(|p| p.segment.waveform.samples().iter().map(|&v| v as f32).collect()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    let mut per_pair = vec![0.0f64; pairs.len()];
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0f32; params.values.len()];
            for &i in batch {
                let pair = &pairs[i];
                let core = &pair.segment.core_in_segment;
                let tape = net.forward(&params.values, &inputs[i])?;
                let out = tape.output();
                let pred = Matrix::from_vec(
                    out.channels,
                    core.len(),
                    (0..out.channels).flat_map(|c| out.row(c)[core.clone()].iter().map(|&v| v as f64)).collect(),
                );
                let (value, g) = pair_loss(pair, &pred, table)?;
                if !value.is_finite() {
                    let checkpoint = match scratch {
                        Some(dir) => {
                            fs::create_dir_all(dir)?;
                            let path = dir.join(format!("diverged_{step:08}.ckpt"));
                            save_checkpoint(&path, spec, &params.cast(), step)?;
                            Some(path)
                        }
                        None => None,
                    };
                    return Err(TrainError::DivergenceDetected { step, checkpoint });
                }
                per_pair[i] = value;
                let mut up = Tensor::<f32>::zeros(out.channels, out.len);
                for c in 0..out.channels {
                    for (d, &v) in up.data[c * out.len + core.start..c * out.len + core.end].iter_mut().zip(g.row(c)) {
                        *d = v as f32;
                    }
                }
                let gi = net.backward(&params.values, &tape, up)?;
                grad.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f32;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam_step(&mut adam, &mut params.values, &grad)?;
            step += 1;
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                snapshots.push((step, params.cast::<f64>()));
            }
        }
        let mean = per_pair.iter().sum::<f64>() / pairs.len() as f64;
        info!("epoch {} of {}: mean loss {mean:.6e}", epoch + 1, cfg.epochs);
        loss_curve.push((step, mean));
    }
    debug!("finished after {step} steps");
    Ok(TrainingRun {
        config: cfg.clone(),
        spec: spec.clone(),
        weight_table: table.cloned(),
        loss_curve,
        params: params.cast::<f64>(),
        snapshots,
        cfs: Vec::new(),
        sample_rate: 0,
        model_digest: String::new(),
        steps: step,
    })
}

/// Trains the MAE and FMAE emulators of one comparison from shared data and
/// a shared initialisation. Returns `(mae_run, fmae_run)`.
pub fn compare_objectives(
    model: &dyn AuditoryModel,
    corpus: &[Waveform],
    spec: &NetworkSpec,
    cfg_pair: (&TrainingConfig, &TrainingConfig),
    table: &WeightTable,
) -> Result<(TrainingRun, TrainingRun), TrainError> {
    let (a, b) = cfg_pair;
    if a.objective == b.objective {
        return Err(TrainError::ConfigMismatch("both configurations use the same objective".into()));
    }
    let same_otherwise = TrainingConfig { objective: a.objective, ..b.clone() } == *a;
    if !same_otherwise {
        return Err(TrainError::ConfigMismatch(format!("{a:?} vs {b:?}")));
    }
    let (mae_cfg, fmae_cfg) = if a.objective == Objective::Mae { (a, b) } else { (b, a) };
    mae_cfg.validate()?;
    check_table(table, model, &mae_cfg.grid)?;
    let pairs = prepare_scaled_pairs(model, corpus, &mae_cfg.grid, &mae_cfg.window, mae_cfg.seed, mae_cfg.output_scale)?;
    let finish = |run: TrainingRun| TrainingRun {
        cfs: model.cfs().to_vec(),
        sample_rate: model.sample_rate(),
        model_digest: model.digest(),
        ..run
    };
    let mae = finish(train_on_pairs(&pairs, spec, mae_cfg, None, None)?);
    let fmae = finish(train_on_pairs(&pairs, spec, fmae_cfg, Some(table), None)?);
    Ok((mae, fmae))
}

/// A trained network used as an auditory model.
///
/// Signals are processed in the training windows; the last partial window is
/// zero-padded and its padding discarded.
pub struct Emulator {
    net: CompiledNet,
    params: Vec<f32>,
    window: WindowSpec,
    beta: Option<Vec<f64>>,
    output_scale: f64,
    cfs: Vec<f64>,
    sample_rate: u32,
    digest: String,
}

impl Emulator {
    pub fn new(run: &TrainingRun) -> Result<Self, TrainError> {
        let net = CompiledNet::new(run.spec.clone())?;
        net.check_len(run.config.window.segment_len())?;
        let digest = Hasher::new().str("emulator").str(&run.params_digest()).finish();
        Ok(Self {
            net,
            params: run.params.cast::<f32>().values,
            window: run.config.window,
            beta: run.weight_table.as_ref().map(|t| t.beta().to_vec()),
            output_scale: run.config.output_scale,
            cfs: run.cfs.clone(),
            sample_rate: run.sample_rate,
            digest,
        })
    }

    /// Raw network output on the core windows, before `β` and scale removal.
    pub fn forward_normalized(&self, x: &Waveform) -> Result<Matrix, TrainError> {
        if x.sample_rate() != self.sample_rate {
            return Err(ModelError::RateMismatch { expected: self.sample_rate, got: x.sample_rate() }.into());
        }
        let w = self.window;
        let j = self.cfs.len();
        let windows = x.len().div_ceil(w.window_len);
        let mut out = Matrix::zeros(j, x.len());
        for i in 0..windows {
            let start = i * w.window_len;
            let seg = x.padded_slice(start as isize - w.left_context as isize, w.segment_len());
            let input: Vec<f32> = seg.samples().iter().map(|&v| v as f32).collect();
            let tape = self.net.forward(&self.params, &input)?;
            let y = tape.output();
            let keep = w.window_len.min(x.len() - start);
            for c in 0..j {
                let src = &y.row(c)[w.left_context..w.left_context + keep];
                for (d, &v) in out.row_mut(c)[start..start + keep].iter_mut().zip(src) {
                    *d = v as f64;
                }
            }
        }
        Ok(out)
    }
}

impl AuditoryModel for Emulator {
    fn forward(&self, x: &Waveform) -> Result<InnerRepresentation, ModelError> {
        let mut m = self.forward_normalized(x).map_err(|e| match e {
            TrainError::Model(m) => m,
            other => ModelError::InvalidRepresentation(other.to_string()),
        })?;
        for c in 0..m.rows() {
            let div = self.beta.as_ref().map_or(1.0, |b| b[c]) * self.output_scale;
            m.row_mut(c).iter_mut().for_each(|v| *v /= div);
        }
        InnerRepresentation::new(m, self.cfs.clone())
    }

    fn cfs(&self) -> &[f64] {
        &self.cfs
    }

    fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn digest(&self) -> String {
        self.digest.clone()
    }
}
