//! Training objectives and their gradients with respect to the prediction.
//!
//! All three losses average over `T·J`. The FMAE prediction lives in the
//! normalised domain `β ⊙ f`; [`recover_estimate`] divides `β` back out.

use thiserror::Error;

use crate::audmodel::InnerRepresentation;
use crate::matrix::Matrix;
use crate::weights::WeightTable;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: target {target:?}, prediction {pred:?}")]
    ShapeMismatch { target: (usize, usize), pred: (usize, usize) },
    #[error("weight table has {table} channels, representation has {repr}")]
    ChannelMismatch { table: usize, repr: usize },
}

/// Loss value and `∂loss/∂prediction`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Matrix,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_shapes(target: &Matrix, pred: &Matrix) -> Result<(), LossError> {
    if target.shape() != pred.shape() || target.cols() == 0 {
        return Err(LossError::ShapeMismatch { target: target.shape(), pred: pred.shape() });
    }
    Ok(())
}

/// Per-channel weighted absolute error: `(1/TJ) Σ_j w_j Σ_t |s_j p_jt − ... |`
/// with the target row scaled by `scale[j]`.
fn weighted_abs(target: &Matrix, pred: &Matrix, scale: &[f64], weight: &[f64]) -> LossValue {
    let (j, t) = target.shape();
    let norm = 1.0 / (j * t) as f64;
    let mut gradient = Matrix::zeros(j, t);
    let mut value = 0.0;
    for ch in 0..j {
        let (s, w) = (scale[ch], weight[ch]);
        let mut row_sum = 0.0;
        for ((g, &y), &p) in gradient.row_mut(ch).iter_mut().zip(target.row(ch)).zip(pred.row(ch)) {
            let e = p - s * y;
            row_sum += e.abs();
            *g = sign(e) * w * norm;
        }
        value += row_sum * w;
    }
    LossValue { value: value * norm, gradient }
}

/// Matrix form of [`mae`].
pub fn mae_matrix(target: &Matrix, pred: &Matrix) -> Result<LossValue, LossError> {
    check_shapes(target, pred)?;
    let ones = vec![1.0; target.rows()];
    Ok(weighted_abs(target, pred, &ones, &ones))
}

/// Mean absolute error.
pub fn mae(target: &InnerRepresentation, pred: &InnerRepresentation) -> Result<LossValue, LossError> {
    mae_matrix(target.channels(), pred.channels())
}

/// Matrix form of [`mse`].
pub fn mse_matrix(target: &Matrix, pred: &Matrix) -> Result<LossValue, LossError> {
    check_shapes(target, pred)?;
    let (j, t) = target.shape();
    let norm = 1.0 / (j * t) as f64;
    let mut gradient = Matrix::zeros(j, t);
    let mut value = 0.0;
    for ((g, &y), &p) in gradient.as_mut_slice().iter_mut().zip(target.as_slice()).zip(pred.as_slice()) {
        let e = p - y;
        value += e * e;
        *g = 2.0 * e * norm;
    }
    Ok(LossValue { value: value * norm, gradient })
}

/// Mean squared error.
pub fn mse(target: &InnerRepresentation, pred: &InnerRepresentation) -> Result<LossValue, LossError> {
    mse_matrix(target.channels(), pred.channels())
}

/// Matrix form of [`fmae`] with explicit `β` and level weights `a_j(l*)`.
pub fn fmae_matrix(target: &Matrix, pred_normalized: &Matrix, beta: &[f64], a: &[f64]) -> Result<LossValue, LossError> {
    check_shapes(target, pred_normalized)?;
    if beta.len() != target.rows() || a.len() != target.rows() {
        return Err(LossError::ChannelMismatch { table: beta.len().min(a.len()), repr: target.rows() });
    }
    Ok(weighted_abs(target, pred_normalized, beta, a))
}

/// Frequency-and-level-weighted MAE at segment level `l_star`.
pub fn fmae(
    target: &InnerRepresentation,
    pred_normalized: &InnerRepresentation,
    table: &WeightTable,
    l_star: f64,
) -> Result<LossValue, LossError> {
    if table.num_channels() != target.num_channels() {
        return Err(LossError::ChannelMismatch { table: table.num_channels(), repr: target.num_channels() });
    }
    fmae_matrix(target.channels(), pred_normalized.channels(), table.beta(), &table.level_weights(l_star))
}

/// `f̂_j = f̄_j / β_j`.
pub fn recover_estimate(
    pred_normalized: &InnerRepresentation,
    table: &WeightTable,
) -> Result<InnerRepresentation, LossError> {
    if table.num_channels() != pred_normalized.num_channels() {
        return Err(LossError::ChannelMismatch { table: table.num_channels(), repr: pred_normalized.num_channels() });
    }
    let mut m = pred_normalized.channels().clone();
    for (ch, &b) in table.beta().iter().enumerate() {
        m.row_mut(ch).iter_mut().for_each(|v| *v /= b);
    }
    Ok(pred_normalized.with_channels(m).expect("division by positive beta keeps values finite"))
}
