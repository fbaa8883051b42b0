//! Tensor kernels. Every tensor is `channels × len`, row-major.

use super::real::{gemm, Operand, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self { channels, len, data: vec![T::zero(); channels * len] }
    }

    pub fn from_vec(channels: usize, len: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * len);
        Self { channels, len, data }
    }

    pub fn row(&self, c: usize) -> &[T] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!((self.channels, self.len), (other.channels, other.len));
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }
}

/// Padding placing a `k`-tap kernel around its output position.
pub fn same_pad(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// `col[(c·k + i), t] = x[c, s·t + i − p]`, zero outside the signal.
pub fn im2col<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize, out_len: usize) -> Vec<T> {
    let p = same_pad(kernel) as isize;
    let mut col = vec![T::zero(); x.channels * kernel * out_len];
    for c in 0..x.channels {
        let row = x.row(c);
        for i in 0..kernel {
            let dst = &mut col[(c * kernel + i) * out_len..(c * kernel + i + 1) * out_len];
            let offset = i as isize - p;
            if stride == 1 {
                // contiguous copy of the overlapping span
                let lo = (-offset).max(0) as usize;
                let hi = ((x.len as isize - offset).min(out_len as isize)).max(lo as isize) as usize;
                if hi > lo {
                    let src_lo = (lo as isize + offset) as usize;
                    dst[lo..hi].copy_from_slice(&row[src_lo..src_lo + hi - lo]);
                }
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    let s = (stride * t) as isize + offset;
                    if s >= 0 && (s as usize) < x.len {
                        *d = row[s as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters columns back onto a `channels × len` tensor.
pub fn col2im<T: Real>(col: &[T], channels: usize, len: usize, kernel: usize, stride: usize, col_len: usize) -> Tensor<T> {
    let p = same_pad(kernel) as isize;
    let mut x = Tensor::zeros(channels, len);
    for c in 0..channels {
        let row = &mut x.data[c * len..(c + 1) * len];
        for i in 0..kernel {
            let src = &col[(c * kernel + i) * col_len..(c * kernel + i + 1) * col_len];
            let offset = i as isize - p;
            if stride == 1 {
                let lo = (-offset).max(0) as usize;
                let hi = ((len as isize - offset).min(col_len as isize)).max(lo as isize) as usize;
                if hi > lo {
                    let dst_lo = (lo as isize + offset) as usize;
                    row[dst_lo..dst_lo + hi - lo].iter_mut().zip(&src[lo..hi]).for_each(|(d, &s)| *d += s);
                }
            } else {
                for (t, &v) in src.iter().enumerate() {
                    let s = (stride * t) as isize + offset;
                    if s >= 0 && (s as usize) < len {
                        row[s as usize] += v;
                    }
                }
            }
        }
    }
    x
}

/// Cached state of a forward convolution.
pub struct ConvCache<T> {
    pub col: Vec<T>,
}

/// `y[o, t] = Σ_{c,i} w[o, c, i]·x[c, s·t + i − p]`. Input length must be a
/// multiple of the stride.
pub fn conv_forward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    out_ch: usize,
    kernel: usize,
    stride: usize,
) -> (Tensor<T>, ConvCache<T>) {
    let out_len = x.len / stride;
    let col = im2col(x, kernel, stride, out_len);
    let mut y = Tensor::zeros(out_ch, out_len);
    gemm(Operand::new(w, out_ch, x.channels * kernel), Operand::new(&col, x.channels * kernel, out_len), &mut y.data, false);
    (y, ConvCache { col })
}

/// Gradients of [`conv_forward`]. Accumulates into `dw`, returns `dx`.
pub fn conv_backward<T: Real>(
    dy: &Tensor<T>,
    cache: &ConvCache<T>,
    w: &[T],
    dw: &mut [T],
    in_ch: usize,
    in_len: usize,
    kernel: usize,
    stride: usize,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let rows = in_ch * kernel;
    gemm(Operand::new(&dy.data, dy.channels, dy.len), Operand::new(&cache.col, rows, dy.len).t(), dw, true);
    if !need_dx {
        return None;
    }
    let mut dcol = vec![T::zero(); rows * dy.len];
    gemm(Operand::new(w, dy.channels, rows).t(), Operand::new(&dy.data, dy.channels, dy.len), &mut dcol, false);
    Some(col2im(&dcol, in_ch, in_len, kernel, stride, dy.len))
}

/// Transposed strided convolution, the adjoint of [`conv_forward`] with the
/// same kernel, stride and padding. `w` is `in_ch × out_ch × kernel`.
pub fn tconv_forward<T: Real>(x: &Tensor<T>, w: &[T], out_ch: usize, kernel: usize, stride: usize) -> Tensor<T> {
    let rows = out_ch * kernel;
    let mut z = vec![T::zero(); rows * x.len];
    gemm(Operand::new(w, x.channels, rows).t(), Operand::new(&x.data, x.channels, x.len), &mut z, false);
    col2im(&z, out_ch, x.len * stride, kernel, stride, x.len)
}

/// Gradients of [`tconv_forward`]. Accumulates into `dw`, returns `dx`.
pub fn tconv_backward<T: Real>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &[T],
    dw: &mut [T],
    kernel: usize,
    stride: usize,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let rows = dy.channels * kernel;
    let dz = im2col(dy, kernel, stride, x.len);
    gemm(Operand::new(&x.data, x.channels, x.len), Operand::new(&dz, rows, x.len).t(), dw, true);
    if !need_dx {
        return None;
    }
    let mut dx = Tensor::zeros(x.channels, x.len);
    gemm(Operand::new(w, x.channels, rows), Operand::new(&dz, rows, x.len), &mut dx.data, false);
    Some(dx)
}

pub fn add_bias<T: Real>(y: &mut Tensor<T>, b: &[T]) {
    for (c, &bc) in b.iter().enumerate() {
        y.data[c * y.len..(c + 1) * y.len].iter_mut().for_each(|v| *v += bc);
    }
}

pub fn bias_backward<T: Real>(dy: &Tensor<T>, db: &mut [T]) {
    for (c, d) in db.iter_mut().enumerate() {
        *d += dy.row(c).iter().copied().sum::<T>();
    }
}

/// Keeps every `factor`-th sample starting at 0.
pub fn decimate<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let len = x.len / factor;
    let data = (0..x.channels).flat_map(|c| (0..len).map(move |t| x.data[c * x.len + t * factor])).collect();
    Tensor::from_vec(x.channels, len, data)
}

pub fn decimate_backward<T: Real>(dy: &Tensor<T>, factor: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.channels, dy.len * factor);
    for c in 0..dy.channels {
        for t in 0..dy.len {
            dx.data[c * dx.len + t * factor] = dy.data[c * dy.len + t];
        }
    }
    dx
}

/// Linear interpolation by `factor`: `y[d·t + r] = x[t]·(1 − r/d) + x[t+1]·(r/d)`,
/// holding the last sample.
pub fn interpolate<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let mut y = Tensor::zeros(x.channels, x.len * factor);
    let d = T::lit(factor as f64);
    for c in 0..x.channels {
        let src = x.row(c);
        let dst = &mut y.data[c * x.len * factor..(c + 1) * x.len * factor];
        for t in 0..x.len {
            let (a, b) = (src[t], src[(t + 1).min(x.len - 1)]);
            for r in 0..factor {
                let w = T::lit(r as f64) / d;
                dst[t * factor + r] = a * (T::one() - w) + b * w;
            }
        }
    }
    y
}

pub fn interpolate_backward<T: Real>(dy: &Tensor<T>, factor: usize) -> Tensor<T> {
    let len = dy.len / factor;
    let mut dx = Tensor::zeros(dy.channels, len);
    let d = T::lit(factor as f64);
    for c in 0..dy.channels {
        let src = dy.row(c);
        let dst = &mut dx.data[c * len..(c + 1) * len];
        for t in 0..len {
            let next = (t + 1).min(len - 1);
            for r in 0..factor {
                let w = T::lit(r as f64) / d;
                let g = src[t * factor + r];
                dst[t] += g * (T::one() - w);
                dst[next] += g * w;
            }
        }
    }
    dx
}

/// Stacks `b` below `a` along the channel axis.
pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.len, b.len, "concatenated tensors must share a length");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.channels + b.channels, a.len, data)
}

pub fn split<T: Real>(d: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first * d.len;
    (
        Tensor::from_vec(first, d.len, d.data[..cut].to_vec()),
        Tensor::from_vec(d.channels - first, d.len, d.data[cut..].to_vec()),
    )
}
