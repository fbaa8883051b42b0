//! Estimation of the loss weights.
//!
//! For every level `l` of the grid and channel `j`, the mean inverse L1 norm of
//! the reference output over the signals normalised to `l` gives `beta_bar[j][l]`.
//! Dividing each level column by its smallest entry and averaging over levels
//! yields the level-independent channel balance `beta[j]` (≥ 1). What is left,
//! `beta_bar[j][l] / beta[j]`, is rescaled so that its channel average at the
//! loudest level is one; that is `alpha[j][l]`. Between grid levels `alpha` is
//! interpolated linearly in `log10`, and clamped outside the grid.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audmodel::{AuditoryModel, ModelError};
use crate::matrix::Matrix;
use crate::signals::{normalize_to_spl, LevelGrid, SignalError, Waveform};

/// Tolerance on the loudest-level normalisation identity.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("no signals for level {0} dB")]
    EmptyLevelSet(f64),
    #[error("channel {channel} is silent across every signal at level {level} dB")]
    DegenerateChannel { channel: usize, level: f64 },
    #[error("non-positive or non-finite entry at ({row}, {col})")]
    NonPositiveEntry { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid weight table: {0}")]
    InvalidTable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Frozen loss weights for one reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct WeightTable {
    grid: LevelGrid,
    cfs: Vec<f64>,
    beta: Vec<f64>,
    alpha: Matrix,
    model_digest: String,
}

/// On-disk layout: `alpha` is stored as one row of levels per channel.
#[derive(Serialize, Deserialize)]
struct TableRepr {
    levels: Vec<f64>,
    cfs: Vec<f64>,
    beta: Vec<f64>,
    alpha: Vec<Vec<f64>>,
    model_digest: String,
}

impl TryFrom<TableRepr> for WeightTable {
    type Error = WeightError;
    fn try_from(r: TableRepr) -> Result<Self, WeightError> {
        if r.alpha.iter().any(|row| row.len() != r.levels.len()) {
            return Err(WeightError::ShapeMismatch("alpha rows must have one entry per level".into()));
        }
        WeightTable::new(LevelGrid::new(r.levels)?, r.cfs, r.beta, Matrix::from_rows(&r.alpha), r.model_digest)
    }
}

impl From<WeightTable> for TableRepr {
    fn from(t: WeightTable) -> Self {
        TableRepr {
            levels: t.grid.levels().to_vec(),
            cfs: t.cfs,
            beta: t.beta,
            alpha: t.alpha.iter_rows().map(<[f64]>::to_vec).collect(),
            model_digest: t.model_digest,
        }
    }
}

fn check_positive(m: &Matrix) -> Result<(), WeightError> {
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let v = m.get(r, c);
            if !(v > 0.0 && v.is_finite()) {
                return Err(WeightError::NonPositiveEntry { row: r, col: c });
            }
        }
    }
    Ok(())
}

impl WeightTable {
    pub fn new(
        grid: LevelGrid,
        cfs: Vec<f64>,
        beta: Vec<f64>,
        alpha: Matrix,
        model_digest: String,
    ) -> Result<Self, WeightError> {
        let j = beta.len();
        if j == 0 || cfs.len() != j || alpha.shape() != (j, grid.len()) {
            return Err(WeightError::ShapeMismatch(format!(
                "{} CFs, {} betas, alpha {:?}, {} levels",
                cfs.len(),
                j,
                alpha.shape(),
                grid.len()
            )));
        }
        check_positive(&Matrix::from_vec(1, j, beta.clone()))?;
        check_positive(&alpha)?;
        let top = grid.len() - 1;
        let mean_top = (0..j).map(|r| alpha.get(r, top)).sum::<f64>() / j as f64;
        if (mean_top - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(WeightError::InvalidTable(format!("mean alpha at the loudest level is {mean_top}, not 1")));
        }
        Ok(Self { grid, cfs, beta, alpha, model_digest })
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn cfs(&self) -> &[f64] {
        &self.cfs
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &Matrix {
        &self.alpha
    }

    pub fn model_digest(&self) -> &str {
        &self.model_digest
    }

    pub fn num_channels(&self) -> usize {
        self.beta.len()
    }

    /// `a_j(l*)` for every channel.
    pub fn level_weights(&self, l_star: f64) -> Vec<f64> {
        (0..self.num_channels()).map(|j| interp_alpha(self, j, l_star)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight table serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Signals normalised to one level.
#[derive(Debug, Clone)]
pub struct LevelSet {
    pub level: f64,
    pub signals: Vec<Waveform>,
}

/// Controls for [`estimate_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    /// Norm floor per output sample; a channel's L1 norm is floored at
    /// `floor_per_sample · T` before inversion.
    pub floor_per_sample: f64,
    /// Signals drawn per level; `None` uses every signal at every level.
    pub per_level: Option<usize>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { floor_per_sample: 1e-12, per_level: None }
    }
}

impl WeightConfig {
    /// Floor scaled to a model's output scale.
    pub fn for_output_scale(scale: f64) -> Self {
        Self { floor_per_sample: 1e-12 * scale, ..Self::default() }
    }
}

/// `beta_bar` plus the number of floored norms.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaBar {
    pub values: Matrix,
    pub floored: usize,
}

/// Mean inverse per-channel L1 norm of the reference output at each level.
pub fn estimate_beta_bar(
    model: &dyn AuditoryModel,
    corpus_by_level: &[LevelSet],
    floor_per_sample: f64,
) -> Result<BetaBar, WeightError> {
    let j = model.num_channels();
    let mut values = Matrix::zeros(j, corpus_by_level.len());
    let mut floored = 0;
    for (col, set) in corpus_by_level.iter().enumerate() {
        if set.signals.is_empty() {
            return Err(WeightError::EmptyLevelSet(set.level));
        }
        let norms = set
            .signals
            .par_iter()
            .map(|x| -> Result<(Vec<f64>, usize), WeightError> {
                let y = model.forward(x)?;
                Ok((y.channels().iter_rows().map(|r| r.iter().map(|v| v.abs()).sum()).collect(), y.len()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for ch in 0..j {
            let mut acc = 0.0;
            let mut live = 0;
            for (n, t) in &norms {
                let floor = floor_per_sample * *t as f64;
                let v = if n[ch] < floor {
                    floored += 1;
                    floor
                } else {
                    live += 1;
                    n[ch]
                };
                if !(v > 0.0) {
                    return Err(WeightError::DegenerateChannel { channel: ch, level: set.level });
                }
                acc += 1.0 / v;
            }
            if live == 0 {
                return Err(WeightError::DegenerateChannel { channel: ch, level: set.level });
            }
            values.set(ch, col, acc / set.signals.len() as f64);
        }
    }
    if floored > 0 {
        warn!("{floored} channel norms were floored during weight estimation");
    }
    Ok(BetaBar { values, floored })
}

/// Level-normalised, level-averaged channel balance.
pub fn estimate_beta(beta_bar: &Matrix) -> Result<Vec<f64>, WeightError> {
    check_positive(beta_bar)?;
    let (j, levels) = beta_bar.shape();
    let mut beta = vec![0.0; j];
    for l in 0..levels {
        let col_min = (0..j).map(|r| beta_bar.get(r, l)).fold(f64::INFINITY, f64::min);
        for (r, b) in beta.iter_mut().enumerate() {
            let normalised = beta_bar.get(r, l) / col_min;
            debug_assert!(normalised >= 1.0);
            *b += normalised;
        }
    }
    Ok(beta.into_iter().map(|b| b / levels as f64).collect())
}

/// Residual level-and-channel weights, unit channel mean at the loudest level.
pub fn estimate_alpha(beta: &[f64], beta_bar: &Matrix) -> Result<Matrix, WeightError> {
    let (j, levels) = beta_bar.shape();
    if beta.len() != j || levels == 0 {
        return Err(WeightError::ShapeMismatch(format!("{} betas for {:?} beta_bar", beta.len(), beta_bar.shape())));
    }
    check_positive(beta_bar)?;
    check_positive(&Matrix::from_vec(1, j, beta.to_vec()))?;
    let alpha_bar = Matrix::from_vec(
        j,
        levels,
        (0..j).flat_map(|r| (0..levels).map(move |l| (r, l))).map(|(r, l)| beta_bar.get(r, l) / beta[r]).collect(),
    );
    let top_sum: f64 = (0..j).map(|r| alpha_bar.get(r, levels - 1)).sum();
    Ok(alpha_bar.map(|v| j as f64 * v / top_sum))
}

/// `a_j(l*)`: log-domain interpolation of `alpha[j]` over the grid, clamped at the ends.
pub fn interp_alpha(table: &WeightTable, j: usize, l_star: f64) -> f64 {
    let levels = table.grid.levels();
    let row = table.alpha.row(j);
    let last = levels.len() - 1;
    if l_star <= levels[0] {
        return row[0];
    }
    if l_star >= levels[last] {
        return row[last];
    }
    let hi = levels.partition_point(|&l| l < l_star);
    if levels[hi] == l_star {
        return row[hi];
    }
    let lo = hi - 1;
    let m = (levels[hi] - l_star) / (levels[hi] - levels[lo]);
    10f64.powf(m * row[lo].log10() + (1.0 - m) * row[hi].log10())
}

/// Full estimation: normalise the corpus to every grid level, run the model,
/// and derive `beta` and `alpha`.
pub fn estimate_weights(
    model: &dyn AuditoryModel,
    corpus: &[Waveform],
    grid: &LevelGrid,
    seed: u64,
    config: &WeightConfig,
) -> Result<WeightTable, WeightError> {
    if corpus.is_empty() {
        return Err(SignalError::EmptyCorpus.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = grid
        .levels()
        .iter()
        .map(|&level| {
            let mut chosen: Vec<&Waveform> = corpus.iter().collect();
            if let Some(n) = config.per_level {
                if n < chosen.len() {
                    chosen.shuffle(&mut rng);
                    chosen.truncate(n.max(1));
                }
            }
            let signals = chosen.into_iter().map(|x| normalize_to_spl(x, level)).collect::<Result<Vec<_>, _>>()?;
            Ok(LevelSet { level, signals })
        })
        .collect::<Result<Vec<_>, WeightError>>()?;
    let bar = estimate_beta_bar(model, &sets, config.floor_per_sample)?;
    let beta = estimate_beta(&bar.values)?;
    let alpha = estimate_alpha(&beta, &bar.values)?;
    WeightTable::new(grid.clone(), model.cfs().to_vec(), beta, alpha, model.digest())
}
