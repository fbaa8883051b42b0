//! Forward evaluation on a tape and reverse-mode gradients.

use std::collections::BTreeMap;
use std::ops::Range;

use super::ops::{self, ConvCache, Tensor};
use super::real::Real;
use super::spec::{Activation, LayerKind, LayerSpec, NetworkSpec};
use super::NetError;

/// Parameter ranges of one layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlots {
    pub weight: Range<usize>,
    pub bias: Option<Range<usize>>,
    pub slope: Option<usize>,
}

/// A validated spec with its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledNet {
    spec: NetworkSpec,
    slots: Vec<LayerSlots>,
    total: usize,
}

enum Node<T> {
    Input,
    Conv { layer: usize, src: usize, cache: ConvCache<T> },
    TConv { layer: usize, src: usize },
    Act { layer: usize, src: usize },
    Decimate { factor: usize, src: usize },
    Interp { factor: usize, src: usize },
    Concat { a: usize, b: usize },
}

/// Every intermediate value of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    values: Vec<Tensor<T>>,
    bottleneck: usize,
    output: usize,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.values[self.output]
    }

    /// Activation of the last encoder block, before any decimation.
    pub fn bottleneck(&self) -> &Tensor<T> {
        &self.values[self.bottleneck]
    }

    pub fn input_len(&self) -> usize {
        self.values[0].len
    }

    fn push(&mut self, node: Node<T>, value: Tensor<T>) -> usize {
        self.nodes.push(node);
        self.values.push(value);
        self.values.len() - 1
    }
}

impl CompiledNet {
    pub fn new(spec: NetworkSpec) -> Result<Self, NetError> {
        spec.validate()?;
        let mut slots = Vec::new();
        let mut at = 0;
        for l in spec.layers() {
            let weight = at..at + l.weight_count();
            at = weight.end;
            let bias = l.bias.then(|| {
                let r = at..at + l.out_ch;
                at = r.end;
                r
            });
            let slope = (l.activation == Activation::Prelu).then(|| {
                at += 1;
                at - 1
            });
            slots.push(LayerSlots { weight, bias, slope });
        }
        Ok(Self { spec, slots, total: at })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn slots(&self) -> &[LayerSlots] {
        &self.slots
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    fn layer(&self, i: usize) -> &LayerSpec {
        let n = self.spec.encoder.len();
        if i < n {
            &self.spec.encoder[i]
        } else if i == n {
            &self.spec.embedding
        } else if i <= 2 * n {
            &self.spec.decoder[i - n - 1]
        } else {
            &self.spec.output
        }
    }

    pub fn check_len(&self, len: usize) -> Result<(), NetError> {
        let multiple = self.spec.total_factor();
        if len == 0 || len % multiple != 0 {
            return Err(NetError::BadLength { len, multiple });
        }
        Ok(())
    }

    /// Convolution plus bias and activation for layer `i`; returns the activation node.
    fn layer_forward<T: Real>(&self, tape: &mut Tape<T>, params: &[T], i: usize, src: usize) -> usize {
        let l = self.layer(i);
        let s = &self.slots[i];
        let w = &params[s.weight.clone()];
        let x = &tape.values[src];
        let (mut z, node) = match l.kind {
            LayerKind::StridedConv => {
                let (z, cache) = ops::conv_forward(x, w, l.out_ch, l.kernel, l.factor);
                (z, Node::Conv { layer: i, src, cache })
            }
            LayerKind::TransposedConv => (ops::tconv_forward(x, w, l.out_ch, l.kernel, l.factor), Node::TConv { layer: i, src }),
            _ => {
                let (z, cache) = ops::conv_forward(x, w, l.out_ch, l.kernel, 1);
                (z, Node::Conv { layer: i, src, cache })
            }
        };
        if let Some(b) = &s.bias {
            ops::add_bias(&mut z, &params[b.clone()]);
        }
        let pre = tape.push(node, z);
        let y = match l.activation {
            Activation::Linear => return pre,
            Activation::Tanh => {
                let z = &tape.values[pre];
                Tensor::from_vec(z.channels, z.len, z.data.iter().map(|v| v.tanh()).collect())
            }
            Activation::Prelu => {
                let a = params[s.slope.expect("prelu layer has a slope")];
                let z = &tape.values[pre];
                Tensor::from_vec(z.channels, z.len, z.data.iter().map(|&v| if v > T::zero() { v } else { a * v }).collect())
            }
        };
        tape.push(Node::Act { layer: i, src: pre }, y)
    }

    /// Runs the network on a single-channel input of valid length.
    pub fn forward<T: Real>(&self, params: &[T], input: &[T]) -> Result<Tape<T>, NetError> {
        if params.len() != self.total {
            return Err(NetError::ShapeMismatch { expected: self.total, got: params.len() });
        }
        self.check_len(input.len())?;
        let mut tape = Tape { nodes: vec![Node::Input], values: vec![Tensor::from_vec(1, input.len(), input.to_vec())], bottleneck: 0, output: 0 };
        let n = self.spec.encoder.len();
        let mut h = 0;
        let mut res = 1;
        let mut skips: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..n {
            let l = self.layer(i);
            let a = self.layer_forward(&mut tape, params, i, h);
            tape.bottleneck = a;
            h = match l.kind {
                LayerKind::StridedConv => {
                    res *= l.factor;
                    skips.insert(res, a);
                    a
                }
                LayerKind::DecimConv => {
                    skips.insert(res, a);
                    res *= l.factor;
                    let v = ops::decimate(&tape.values[a], l.factor);
                    tape.push(Node::Decimate { factor: l.factor, src: a }, v)
                }
                _ => a,
            };
        }
        h = self.layer_forward(&mut tape, params, n, h);
        for i in n + 1..=2 * n {
            let l = self.layer(i);
            let a = self.layer_forward(&mut tape, params, i, h);
            h = match l.kind {
                LayerKind::InterpConv => {
                    let v = ops::interpolate(&tape.values[a], l.factor);
                    tape.push(Node::Interp { factor: l.factor, src: a }, v)
                }
                _ => a,
            };
            res /= l.factor;
            if self.spec.skips {
                if let Some(s) = skips.remove(&res) {
                    let v = ops::concat(&tape.values[h], &tape.values[s]);
                    h = tape.push(Node::Concat { a: h, b: s }, v);
                }
            }
        }
        tape.output = self.layer_forward(&mut tape, params, 2 * n + 1, h);
        Ok(tape)
    }

    /// Gradient of `Σ upstream ⊙ output` with respect to every parameter.
    pub fn backward<T: Real>(&self, params: &[T], tape: &Tape<T>, upstream: Tensor<T>) -> Result<Vec<T>, NetError> {
        let out = tape.output();
        if (upstream.channels, upstream.len) != (out.channels, out.len) {
            return Err(NetError::ShapeMismatch { expected: out.data.len(), got: upstream.data.len() });
        }
        let mut grads = vec![T::zero(); self.total];
        let mut adj: Vec<Option<Tensor<T>>> = (0..tape.nodes.len()).map(|_| None).collect();
        adj[tape.output] = Some(upstream);
        let add = |adj: &mut Vec<Option<Tensor<T>>>, at: usize, g: Tensor<T>| match &mut adj[at] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        };
        for id in (1..tape.nodes.len()).rev() {
            let Some(g) = adj[id].take() else { continue };
            match &tape.nodes[id] {
                Node::Input => {}
                Node::Conv { layer, src, cache } => {
                    let l = self.layer(*layer);
                    let s = &self.slots[*layer];
                    if let Some(b) = &s.bias {
                        ops::bias_backward(&g, &mut grads[b.clone()]);
                    }
                    let stride = if l.kind == LayerKind::StridedConv { l.factor } else { 1 };
                    let x = &tape.values[*src];
                    let w = &params[s.weight.clone()];
                    let dx = ops::conv_backward(&g, cache, w, &mut grads[s.weight.clone()], x.channels, x.len, l.kernel, stride, *src != 0);
                    if let Some(dx) = dx {
                        add(&mut adj, *src, dx);
                    }
                }
                Node::TConv { layer, src } => {
                    let l = self.layer(*layer);
                    let s = &self.slots[*layer];
                    if let Some(b) = &s.bias {
                        ops::bias_backward(&g, &mut grads[b.clone()]);
                    }
                    let w = &params[s.weight.clone()];
                    let dx = ops::tconv_backward(&g, &tape.values[*src], w, &mut grads[s.weight.clone()], l.kernel, l.factor, *src != 0);
                    if let Some(dx) = dx {
                        add(&mut adj, *src, dx);
                    }
                }
                Node::Act { layer, src } => {
                    let l = self.layer(*layer);
                    let dz = match l.activation {
                        Activation::Tanh => {
                            let y = &tape.values[id];
                            g.data.iter().zip(&y.data).map(|(&d, &v)| d * (T::one() - v * v)).collect()
                        }
                        Activation::Prelu => {
                            let slot = self.slots[*layer].slope.expect("prelu layer has a slope");
                            let a = params[slot];
                            let z = &tape.values[*src];
                            let mut da = T::zero();
                            let dz = g
                                .data
                                .iter()
                                .zip(&z.data)
                                .map(|(&d, &v)| {
                                    if v > T::zero() {
                                        d
                                    } else {
                                        da += d * v;
                                        d * a
                                    }
                                })
                                .collect();
                            grads[slot] += da;
                            dz
                        }
                        Activation::Linear => g.data,
                    };
                    add(&mut adj, *src, Tensor::from_vec(g.channels, g.len, dz));
                }
                Node::Decimate { factor, src } => add(&mut adj, *src, ops::decimate_backward(&g, *factor)),
                Node::Interp { factor, src } => add(&mut adj, *src, ops::interpolate_backward(&g, *factor)),
                Node::Concat { a, b } => {
                    let (ga, gb) = ops::split(&g, tape.values[*a].channels);
                    add(&mut adj, *a, ga);
                    add(&mut adj, *b, gb);
                }
            }
        }
        Ok(grads)
    }
}
