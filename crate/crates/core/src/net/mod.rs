//! 1-D convolutional encoder-decoder emulators.
//!
//! Two layout families are provided. The strided family downsamples with strided
//! convolutions and upsamples with their transposes. The U-net family convolves
//! at full resolution, then decimates; its decoder convolves and linearly
//! interpolates. Both concatenate encoder activations onto decoder outputs of
//! equal resolution, use "same" zero padding and carry no bias by default.
//!
//! Computation is generic over [`Real`]; training uses `f32`, gradient checks
//! and checkpoints use `f64`.

mod adam;
mod checkpoint;
mod graph;
pub mod ops;
mod real;
mod spec;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, spec_digest, Checkpoint, CHECKPOINT_MAGIC};
pub use graph::{CompiledNet, LayerSlots, Tape};
pub use ops::Tensor;
pub use real::Real;
pub use spec::{
    build_connear_spec, build_connear_spec_with, build_waveunet_spec, build_waveunet_spec_with, receptive_field,
    Activation, ConnearConfig, LayerKind, LayerSpec, NetworkSpec, WaveUNetConfig,
};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::signals::Segment;

/// Initial negative slope of every PReLU layer.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input length {len} is not a positive multiple of {multiple}")]
    BadLength { len: usize, multiple: usize },
    #[error("backward called before forward")]
    NoForwardCache,
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint was written for a different network spec")]
    SpecDigestMismatch,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Flat parameter vector in spec order, with the seed that initialised it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T = f64> {
    pub values: Vec<T>,
    pub rng_seed: u64,
}

impl<T: Real> ParameterSet<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self { values: vec![T::zero(); spec.param_count()], rng_seed: 0 }
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet { values: self.values.iter().map(|v| U::lit(v.widen())).collect(), rng_seed: self.rng_seed }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Kernels and biases ~ U(−b, b) with `b = sqrt(3 / fan_in)`; PReLU slopes at
/// [`PRELU_INIT`]. Biases start at zero.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParameterSet<f64>, NetError> {
    let net = CompiledNet::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; net.param_count()];
    for (l, s) in spec.layers().into_iter().zip(net.slots()) {
        let bound = (3.0 / l.fan_in() as f64).sqrt();
        for v in &mut values[s.weight.clone()] {
            *v = rng.gen_range(-bound..=bound);
        }
        if let Some(i) = s.slope {
            values[i] = PRELU_INIT;
        }
    }
    Ok(ParameterSet { values, rng_seed: seed })
}

fn input_of<T: Real>(segment: &Segment) -> Vec<T> {
    segment.waveform.samples().iter().map(|&v| T::lit(v)).collect()
}

fn crop<T: Real>(out: &Tensor<T>, core: &Range<usize>) -> Matrix {
    let data = (0..out.channels).flat_map(|c| out.row(c)[core.clone()].iter().map(|v| v.widen())).collect();
    Matrix::from_vec(out.channels, core.len(), data)
}

fn pad_upstream<T: Real>(upstream: &Matrix, core: &Range<usize>, len: usize) -> Tensor<T> {
    let mut g = Tensor::zeros(upstream.rows(), len);
    for c in 0..upstream.rows() {
        for (d, &u) in g.data[c * len + core.start..c * len + core.end].iter_mut().zip(upstream.row(c)) {
            *d = T::lit(u);
        }
    }
    g
}

/// Output on the core window of `segment`, `J × core_len`.
pub fn forward<T: Real>(spec: &NetworkSpec, params: &ParameterSet<T>, segment: &Segment) -> Result<Matrix, NetError> {
    let net = CompiledNet::new(spec.clone())?;
    let tape = net.forward(&params.values, &input_of::<T>(segment))?;
    Ok(crop(tape.output(), &segment.core_in_segment))
}

/// Parameter gradient of `Σ upstream ⊙ forward(segment)`.
pub fn backward<T: Real>(
    spec: &NetworkSpec,
    params: &ParameterSet<T>,
    segment: &Segment,
    upstream: &Matrix,
) -> Result<Vec<T>, NetError> {
    let mut n = Network::new(spec.clone(), params.clone())?;
    n.forward(segment)?;
    n.backward(upstream)
}

/// A network with its parameters and the tape of its last forward pass.
pub struct Network<T: Real = f64> {
    net: CompiledNet,
    pub params: ParameterSet<T>,
    cache: Option<(Tape<T>, Range<usize>)>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetworkSpec, params: ParameterSet<T>) -> Result<Self, NetError> {
        let net = CompiledNet::new(spec)?;
        if params.values.len() != net.param_count() {
            return Err(NetError::ShapeMismatch { expected: net.param_count(), got: params.values.len() });
        }
        Ok(Self { net, params, cache: None })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }

    pub fn compiled(&self) -> &CompiledNet {
        &self.net
    }

    pub fn forward(&mut self, segment: &Segment) -> Result<Matrix, NetError> {
        let tape = self.net.forward(&self.params.values, &input_of::<T>(segment))?;
        let out = crop(tape.output(), &segment.core_in_segment);
        self.cache = Some((tape, segment.core_in_segment.clone()));
        Ok(out)
    }

    /// Gradients for the cached forward pass; `upstream` covers the core window.
    pub fn backward(&self, upstream: &Matrix) -> Result<Vec<T>, NetError> {
        let (tape, core) = self.cache.as_ref().ok_or(NetError::NoForwardCache)?;
        let out = tape.output();
        if upstream.shape() != (out.channels, core.len()) {
            return Err(NetError::ShapeMismatch { expected: out.channels * core.len(), got: upstream.rows() * upstream.cols() });
        }
        self.net.backward(&self.params.values, tape, pad_upstream(upstream, core, tape.input_len()))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Input span that influences one sample of the encoder bottleneck, measured by
/// perturbing every input sample in turn. Returns `None` if no sample matters.
pub fn empirical_receptive_field(
    spec: &NetworkSpec,
    params: &ParameterSet<f64>,
    input: &[f64],
    probe: usize,
) -> Result<Option<usize>, NetError> {
    let net = CompiledNet::new(spec.clone())?;
    let base = net.forward(&params.values, input)?;
    let b = base.bottleneck();
    let pick = |t: &Tensor<f64>| (0..t.channels).map(|c| t.row(c)[probe]).collect::<Vec<_>>();
    let reference = pick(b);
    let (mut first, mut last) = (None, None);
    let mut x = input.to_vec();
    for s in 0..input.len() {
        x[s] += 1.0;
        let tape = net.forward(&params.values, &x)?;
        x[s] = input[s];
        if pick(tape.bottleneck()) != reference {
            first.get_or_insert(s);
            last = Some(s);
        }
    }
    Ok(first.zip(last).map(|(a, b)| b - a + 1))
}
