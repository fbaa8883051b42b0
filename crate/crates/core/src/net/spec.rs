use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Convolution evaluated every `factor` samples.
    StridedConv,
    /// Adjoint of a strided convolution; upsamples by `factor`.
    TransposedConv,
    /// Convolution, activation, then keep every `factor`-th sample.
    DecimConv,
    /// Convolution, activation, then linear interpolation by `factor`.
    InterpConv,
    PlainConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Leaky rectifier with one learned negative slope per layer.
    Prelu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub factor: usize,
    pub activation: Activation,
    #[serde(default)]
    pub bias: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, kernel: usize, in_ch: usize, out_ch: usize, factor: usize, activation: Activation) -> Self {
        Self { kind, kernel, in_ch, out_ch, factor, activation, bias: false }
    }

    pub fn weight_count(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.out_ch } else { 0 } + usize::from(self.activation == Activation::Prelu)
    }

    /// Fan-in used by the initialiser.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::TransposedConv => (self.in_ch * self.kernel / self.factor).max(1),
            _ => self.in_ch * self.kernel,
        }
    }
}

/// Encoder-decoder emulator layout. The input has one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub encoder: Vec<LayerSpec>,
    pub embedding: LayerSpec,
    pub decoder: Vec<LayerSpec>,
    /// Final projection onto the output channels.
    pub output: LayerSpec,
    /// Concatenate encoder activations onto decoder outputs of equal resolution.
    pub skips: bool,
    pub out_channels: usize,
}

impl NetworkSpec {
    /// All layers in parameter order.
    pub fn layers(&self) -> Vec<&LayerSpec> {
        self.encoder.iter().chain(std::iter::once(&self.embedding)).chain(&self.decoder).chain(std::iter::once(&self.output)).collect()
    }

    /// Product of the encoder factors; input lengths must be multiples of it.
    pub fn total_factor(&self) -> usize {
        self.encoder.iter().map(|l| l.factor).product()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidSpec(m));
        if self.encoder.len() != self.decoder.len() {
            return bad(format!("{} encoder blocks but {} decoder blocks", self.encoder.len(), self.decoder.len()));
        }
        let down: usize = self.total_factor();
        let up: usize = self.decoder.iter().map(|l| l.factor).product();
        if down != up {
            return bad(format!("encoder downsamples by {down} but decoder upsamples by {up}"));
        }
        for l in self.layers() {
            if l.kernel == 0 || l.factor == 0 || l.in_ch == 0 || l.out_ch == 0 {
                return bad("kernel, factor and channel counts must be at least 1".into());
            }
        }
        let mut ch = 1;
        let mut res = 1;
        let mut skips = BTreeMap::new();
        for (n, l) in self.encoder.iter().enumerate() {
            if !matches!(l.kind, LayerKind::StridedConv | LayerKind::DecimConv | LayerKind::PlainConv) {
                return bad(format!("encoder block {n} has decoder kind {:?}", l.kind));
            }
            if l.kind == LayerKind::PlainConv && l.factor != 1 {
                return bad(format!("plain encoder block {n} must have factor 1"));
            }
            if l.in_ch != ch {
                return bad(format!("encoder block {n} expects {} channels, receives {ch}", l.in_ch));
            }
            ch = l.out_ch;
            match l.kind {
                LayerKind::StridedConv => {
                    res *= l.factor;
                    skips.insert(res, ch);
                }
                LayerKind::DecimConv => {
                    skips.insert(res, ch);
                    res *= l.factor;
                }
                _ => {}
            }
        }
        let e = &self.embedding;
        if e.kind != LayerKind::PlainConv || e.factor != 1 || e.in_ch != ch {
            return bad("embedding must be a factor-1 plain convolution matching the encoder depth".into());
        }
        ch = e.out_ch;
        for (n, l) in self.decoder.iter().enumerate() {
            if !matches!(l.kind, LayerKind::TransposedConv | LayerKind::InterpConv | LayerKind::PlainConv) {
                return bad(format!("decoder block {n} has encoder kind {:?}", l.kind));
            }
            if l.kind == LayerKind::PlainConv && l.factor != 1 {
                return bad(format!("plain decoder block {n} must have factor 1"));
            }
            if l.in_ch != ch {
                return bad(format!("decoder block {n} expects {} channels, receives {ch}", l.in_ch));
            }
            if res % l.factor != 0 {
                return bad(format!("decoder block {n} upsamples past the input resolution"));
            }
            res /= l.factor;
            ch = l.out_ch;
            if self.skips {
                if let Some(s) = skips.remove(&res) {
                    ch += s;
                }
            }
        }
        let o = &self.output;
        if o.kind != LayerKind::PlainConv || o.factor != 1 || o.in_ch != ch || o.out_ch != self.out_channels {
            return bad(format!(
                "output projection must be a factor-1 plain convolution from {ch} to {} channels",
                self.out_channels
            ));
        }
        Ok(())
    }

    /// Canonical JSON, the basis of the spec digest.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network spec serialises")
    }
}

/// Hyper-parameters of the strided-convolution family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnearConfig {
    pub blocks: usize,
    pub kernel: usize,
    pub depth: usize,
    pub factor: usize,
}

impl Default for ConnearConfig {
    fn default() -> Self {
        Self { blocks: 4, kernel: 64, depth: 128, factor: 2 }
    }
}

/// Hyper-parameters of the decimation/interpolation family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveUNetConfig {
    pub blocks: usize,
    pub kernel: usize,
    pub decoder_kernel: usize,
    pub depth: usize,
    pub factor: usize,
    pub encoder_activation: Activation,
    pub decoder_activation: Activation,
}

impl Default for WaveUNetConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            kernel: 21,
            decoder_kernel: 21,
            depth: 128,
            factor: 2,
            encoder_activation: Activation::Tanh,
            decoder_activation: Activation::Prelu,
        }
    }
}

/// Four strided-conv blocks, kernel 64, 128 channels, tanh throughout.
pub fn build_connear_spec(j: usize) -> NetworkSpec {
    build_connear_spec_with(j, &ConnearConfig::default())
}

pub fn build_connear_spec_with(j: usize, cfg: &ConnearConfig) -> NetworkSpec {
    use LayerKind::*;
    let d = cfg.depth;
    let encoder = (0..cfg.blocks)
        .map(|n| LayerSpec::new(StridedConv, cfg.kernel, if n == 0 { 1 } else { d }, d, cfg.factor, Activation::Tanh))
        .collect();
    let embedding = LayerSpec::new(PlainConv, cfg.kernel, d, d, 1, Activation::Tanh);
    // skips sit at resolutions f, f², …, f^N; decoder block n lands on f^(N-n-1)
    let decoder = (0..cfg.blocks)
        .map(|n| {
            let in_ch = if n == 0 { d } else { 2 * d };
            LayerSpec::new(TransposedConv, cfg.kernel, in_ch, d, cfg.factor, Activation::Tanh)
        })
        .collect();
    let spec = NetworkSpec {
        encoder,
        embedding,
        decoder,
        output: LayerSpec::new(PlainConv, 1, d, j, 1, Activation::Linear),
        skips: true,
        out_channels: j,
    };
    debug_assert!(spec.validate().is_ok());
    spec
}

/// Six decimating blocks, kernel 21, 128 channels, tanh encoder, PReLU decoder.
pub fn build_waveunet_spec(j: usize) -> NetworkSpec {
    build_waveunet_spec_with(j, &WaveUNetConfig::default())
}

pub fn build_waveunet_spec_with(j: usize, cfg: &WaveUNetConfig) -> NetworkSpec {
    use LayerKind::*;
    let d = cfg.depth;
    let encoder = (0..cfg.blocks)
        .map(|n| LayerSpec::new(DecimConv, cfg.kernel, if n == 0 { 1 } else { d }, d, cfg.factor, cfg.encoder_activation))
        .collect();
    let embedding = LayerSpec::new(PlainConv, cfg.kernel, d, d, 1, cfg.encoder_activation);
    let decoder = (0..cfg.blocks)
        .map(|n| {
            let in_ch = if n == 0 { d } else { 2 * d };
            LayerSpec::new(InterpConv, cfg.decoder_kernel, in_ch, d, cfg.factor, cfg.decoder_activation)
        })
        .collect();
    let spec = NetworkSpec {
        encoder,
        embedding,
        decoder,
        output: LayerSpec::new(PlainConv, 1, 2 * d, j, 1, Activation::Linear),
        skips: true,
        out_channels: j,
    };
    debug_assert!(spec.validate().is_ok());
    spec
}

/// `RF = Σ_n (k_n − 1)·Π_{i<n} d_i + 1` over the encoder blocks.
pub fn receptive_field(spec: &NetworkSpec) -> usize {
    let mut rf = 1;
    let mut stride = 1;
    for l in &spec.encoder {
        rf += (l.kernel - 1) * stride;
        stride *= l.factor;
    }
    rf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(kernels: &[usize], factor: usize) -> NetworkSpec {
        let cfg = WaveUNetConfig { blocks: kernels.len(), kernel: 1, depth: 2, factor, ..Default::default() };
        let mut spec = build_waveunet_spec_with(1, &cfg);
        for (l, &k) in spec.encoder.iter_mut().zip(kernels) {
            l.kernel = k;
        }
        spec
    }

    #[test]
    fn receptive_field_examples() {
        assert_eq!(receptive_field(&chain(&[1], 2)), 1);
        assert_eq!(receptive_field(&chain(&[3, 3], 2)), 7);
        // 63·(1+2+4+8)+1 and 20·(1+2+4+8+16+32)+1
        assert_eq!(receptive_field(&build_connear_spec(32)), 63 * 15 + 1);
        assert_eq!(receptive_field(&build_waveunet_spec(32)), 20 * 63 + 1);
    }

    #[test]
    fn builders_validate() {
        let c = build_connear_spec(32);
        c.validate().unwrap();
        assert_eq!((c.encoder.len(), c.encoder[0].kernel, c.encoder[1].in_ch), (4, 64, 128));
        assert!(c.layers().iter().all(|l| !l.bias));
        let w = build_waveunet_spec(32);
        w.validate().unwrap();
        assert_eq!(w.encoder.len(), 6);
        assert!(w.decoder.iter().all(|l| l.activation == Activation::Prelu));
        assert!(w.encoder.iter().all(|l| l.activation == Activation::Tanh));
        assert_eq!(w.total_factor(), 64);
    }

    #[test]
    fn inconsistent_specs_are_rejected() {
        let mut s = build_waveunet_spec_with(4, &WaveUNetConfig { blocks: 2, depth: 3, ..Default::default() });
        s.decoder[1].in_ch = 5;
        assert!(matches!(s.validate(), Err(NetError::InvalidSpec(_))));
        let mut s = build_connear_spec_with(4, &ConnearConfig { blocks: 2, depth: 3, kernel: 3, factor: 2 });
        s.decoder.pop();
        assert!(s.validate().is_err());
    }
}
