//! Training laboratory for neural-network emulators of auditory models.
//!
//! The crate is organised along the data path:
//!
//! - [`signals`]: waveforms, SPL normalisation, level-grid datasets, windowing, WAV I/O.
//! - [`audmodel`]: the ground-truth side (surrogate cochlear model, audiograms,
//!   precomputed-corpus adapter).
//! - [`weights`]: estimation of the per-channel balance factors and the
//!   per-channel-per-level factors, and their log-domain level interpolation.
//! - [`loss`]: MAE, MSE and the frequency-and-level-weighted MAE with gradients.
//! - [`net`]: 1-D convolutional encoder-decoder emulators, backprop and Adam.
//! - [`train`]: pairing a reference model with an emulator under an objective.
//! - [`eval`]: signal-to-error ratios, log-MAE curves, excitation patterns, reports.

pub mod audmodel;
pub mod digest;
pub mod eval;
pub mod loss;
pub mod matrix;
pub mod net;
pub mod signals;
pub mod train;
pub mod weights;

pub use audmodel::{AuditoryModel, InnerRepresentation};
pub use matrix::Matrix;
pub use signals::{LevelGrid, WindowSpec, Waveform};
pub use weights::WeightTable;

use thiserror::Error;

/// Crate-level error for orchestration code that crosses module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Signal(#[from] signals::SignalError),
    #[error(transparent)]
    Model(#[from] audmodel::ModelError),
    #[error(transparent)]
    Weight(#[from] weights::WeightError),
    #[error(transparent)]
    Loss(#[from] loss::LossError),
    #[error(transparent)]
    Net(#[from] net::NetError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
