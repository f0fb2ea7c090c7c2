//! Layer kernels as free functions: forward and backward for each op.
//!
//! Tensors are NCHW for spatial ops and `[N, D]` for dense ops.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::scalar::gemm;
use super::{Scalar, Tensor};

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(format!("{what} must be 4-D, got {s:?}"))),
    }
}

pub fn conv_output_dim(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

struct ConvGeometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new(input: [usize; 4], kernel: [usize; 4], stride: usize) -> Result<Self> {
        let [_, c, h, w] = input;
        let [_, kc, kh, kw] = kernel;
        if c != kc {
            return Err(Error::shape(format!("input has {c} channels, kernel expects {kc}")));
        }
        let oh = conv_output_dim(h, kh, stride);
        let ow = conv_output_dim(w, kw, stride);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(ConvGeometry { channels: c, h, w, kh, kw, stride, oh, ow }),
            _ => Err(Error::shape(format!("kernel {kh}x{kw} (stride {stride}) does not fit {h}x{w}"))),
        }
    }

    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one `[C, H, W]` item into `[C·kh·kw, oh·ow]`.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let out = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let src = &plane[(oy * self.stride + i) * self.w + j..];
                        let dst = &mut out[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 {
                            dst.copy_from_slice(&src[..self.ow]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = src[ox * self.stride];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): accumulates columns back into `dx`.
    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let base = (oy * self.stride + i) * self.w + j;
                        for ox in 0..self.ow {
                            let idx = base + ox * self.stride;
                            plane[idx] = plane[idx] + src[oy * self.ow + ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Valid cross-correlation (no kernel flip) plus bias.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let ishape = dims4(input, "conv2d input")?;
    let kshape = dims4(kernel, "conv2d kernel")?;
    let filters = kshape[0];
    if bias.len() != filters {
        return Err(Error::shape(format!("bias has {} entries for {filters} filters", bias.len())));
    }
    let g = ConvGeometry::new(ishape, kshape, stride)?;
    let (n, p, patch) = (ishape[0], g.positions(), g.patch());
    let mut out = Tensor::zeros(&[n, filters, g.oh, g.ow]);
    let mut cols = vec![T::zero(); patch * p];
    let out_len = filters * p;
    for s in 0..n {
        g.im2col(input.item(s), &mut cols);
        let o = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
        for (f, row) in o.chunks_mut(p).enumerate() {
            row.fill(bias.data()[f]);
        }
        gemm(filters, patch, p, kernel.data(), false, &cols, false, o, true);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let ishape = dims4(input, "conv2d input")?;
    let kshape = dims4(kernel, "conv2d kernel")?;
    let g = ConvGeometry::new(ishape, kshape, stride)?;
    let (n, filters, p, patch) = (ishape[0], kshape[0], g.positions(), g.patch());
    if grad_out.shape() != [n, filters, g.oh, g.ow] {
        return Err(Error::shape(format!("conv2d grad_out has shape {:?}", grad_out.shape())));
    }
    let mut dx = Tensor::zeros(input.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    let mut db = Tensor::zeros(&[filters]);
    let mut cols = vec![T::zero(); patch * p];
    let mut dcols = vec![T::zero(); patch * p];
    let in_len = input.item_len();
    for s in 0..n {
        let go = grad_out.item(s);
        g.im2col(input.item(s), &mut cols);
        // dK[F, patch] += dOut[F, P] · colsᵀ
        gemm(filters, p, patch, go, false, &cols, true, dk.data_mut(), true);
        // dcols[patch, P] = Kᵀ · dOut
        gemm(patch, filters, p, kernel.data(), true, go, false, &mut dcols, false);
        g.col2im(&dcols, &mut dx.data_mut()[s * in_len..(s + 1) * in_len]);
        for (f, row) in go.chunks(p).enumerate() {
            let acc: T = row.iter().copied().sum();
            db.data_mut()[f] = db.data()[f] + acc;
        }
    }
    Ok((dx, dk, db))
}

pub fn pool_output_dim(input: usize, pool: usize) -> usize {
    input.div_ceil(pool)
}

/// Max pooling with non-overlapping `pool_h × pool_w` windows. Spatial
/// dims that are not multiples of the pool are padded with −∞. Returns the
/// output and, per output element, the flat index of the winning input.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, pool_h: usize, pool_w: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    let [n, c, h, w] = dims4(input, "maxpool input")?;
    if pool_h == 0 || pool_w == 0 {
        return Err(Error::invalid("pool dims must be positive"));
    }
    let (oh, ow) = (pool_output_dim(h, pool_h), pool_output_dim(w, pool_w));
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let x = input.data();
    let o = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = base + oy * pool_h * w + ox * pool_w;
                for y in oy * pool_h..((oy + 1) * pool_h).min(h) {
                    for xx in ox * pool_w..((ox + 1) * pool_w).min(w) {
                        let idx = base + y * w + xx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let oi = plane * oh * ow + oy * ow + ox;
                o[oi] = best;
                arg[oi] = best_idx as u32;
            }
        }
    }
    Ok((out, arg))
}

/// Routes each output gradient to the input element that won the max.
pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("maxpool argmax/grad length mismatch"));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i as usize] = d[i as usize] + g;
    }
    Ok(dx)
}

/// `input[N, D] · weight[D, U] + bias[U]`; trailing input dims are flattened.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = (input.batch(), input.item_len());
    let [wd, units] = *weight.shape() else {
        return Err(Error::shape("dense weight must be 2-D"));
    };
    if wd != d || bias.len() != units {
        return Err(Error::shape(format!(
            "dense expects {wd} inputs / {} biases, got {d} inputs / {} biases",
            units,
            bias.len()
        )));
    }
    let mut out = Tensor::zeros(&[n, units]);
    for row in out.data_mut().chunks_mut(units) {
        row.copy_from_slice(bias.data());
    }
    gemm(n, d, units, input.data(), false, weight.data(), false, out.data_mut(), true);
    Ok(out)
}

/// Gradients of [`dense`]; the input gradient keeps the input's shape.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d) = (input.batch(), input.item_len());
    let units = weight.shape()[1];
    if grad_out.shape() != [n, units] {
        return Err(Error::shape(format!("dense grad_out has shape {:?}", grad_out.shape())));
    }
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[units]);
    gemm(d, n, units, input.data(), true, grad_out.data(), false, dw.data_mut(), false);
    gemm(n, units, d, grad_out.data(), false, weight.data(), true, dx.data_mut(), false);
    for row in grad_out.data().chunks(units) {
        for (b, &g) in db.data_mut().iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    Ok((dx, dw, db))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("relu grad shape")
}

/// Inverted dropout. With `rng = None` (eval mode) the input passes through
/// unchanged and the returned mask is empty. In train mode each element is
/// zeroed with probability `rate` and survivors are scaled by `1/(1-rate)`.
pub fn dropout<T: Scalar>(input: &Tensor<T>, rate: f64, rng: Option<&mut Rng>) -> (Tensor<T>, Vec<T>) {
    match rng {
        None => (input.clone(), Vec::new()),
        Some(rng) => {
            let keep = T::from_f64(1.0 / (1.0 - rate));
            let mask: Vec<T> =
                (0..input.len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
            let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
            (Tensor::from_vec(input.shape(), data).expect("dropout shape"), mask)
        }
    }
}

pub fn dropout_backward<T: Scalar>(mask: &[T], grad_out: &Tensor<T>) -> Tensor<T> {
    if mask.is_empty() {
        return grad_out.clone();
    }
    let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Tensor::from_vec(grad_out.shape(), data).expect("dropout grad shape")
}

/// Row-wise `exp(x - max) / Σ exp(x - max)` over the last dimension.
pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let k = *input.shape().last().unwrap_or(&1);
    let mut out = input.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Backward through softmax given its output `s`: `s ⊙ (g − ⟨g, s⟩)`.
pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let k = *output.shape().last().unwrap_or(&1);
    let mut dx = grad_out.clone();
    for (d, s) in dx.data_mut().chunks_mut(k.max(1)).zip(output.data().chunks(k.max(1))) {
        let dot: T = d.iter().zip(s).map(|(&g, &sv)| g * sv).sum();
        for (g, &sv) in d.iter_mut().zip(s) {
            *g = sv * (*g - dot);
        }
    }
    dx
}
