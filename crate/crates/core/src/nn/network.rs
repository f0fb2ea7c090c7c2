use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, Rng};

use super::loss::euclid_softmax_loss;
use super::ops;
use super::{xavier_init, Architecture, LayerSpec, Scalar, Tensor};

/// Architecture plus parameters, in [`Architecture::param_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    params: Vec<Tensor<T>>,
    /// Index into `params` of each layer's weight (bias follows it).
    param_index: Vec<Option<usize>>,
}

/// Per-layer state saved by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    inputs: Vec<Tensor<T>>,
    pool_argmax: Vec<Vec<u32>>,
    dropout_masks: Vec<Vec<T>>,
}

fn param_index(arch: &Architecture) -> Vec<Option<usize>> {
    let mut next = 0;
    arch.layers
        .iter()
        .map(|l| {
            l.param_shapes().map(|_| {
                let i = next;
                next += 2;
                i
            })
        })
        .collect()
}

impl<T: Scalar> Network<T> {
    /// Xavier-uniform weights and zero biases drawn from the `INIT` stream
    /// of `seed`, layer by layer.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream_rng(seed, stream::INIT, 0);
        let params = arch
            .param_specs()
            .into_iter()
            .map(|(name, shape)| if name.ends_with(".bias") { Tensor::zeros(&shape) } else { xavier_init(&shape, &mut rng) })
            .collect();
        let param_index = param_index(&arch);
        Ok(Network { arch, params, param_index })
    }

    pub fn from_params(arch: Architecture, params: Vec<Tensor<T>>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.param_specs();
        if specs.len() != params.len() {
            return Err(Error::Integrity(format!("architecture has {} parameter tensors, got {}", specs.len(), params.len())));
        }
        for ((name, shape), p) in specs.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Integrity(format!("{name}: expected shape {shape:?}, got {:?}", p.shape())));
            }
        }
        let param_index = param_index(&arch);
        Ok(Network { arch, params, param_index })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network { arch: self.arch.clone(), params: self.params.iter().map(Tensor::cast).collect(), param_index: self.param_index.clone() }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[1..] != self.arch.input_shape {
            return Err(Error::shape(format!("network expects [N, {:?}], got {s:?}", self.arch.input_shape)));
        }
        Ok(())
    }

    /// Index of the last layer that produces logits (the layer before a
    /// trailing softmax).
    pub fn logits_layer(&self) -> usize {
        let n = self.arch.layers.len();
        if matches!(self.arch.layers.last(), Some(LayerSpec::Softmax)) && n > 1 {
            n - 2
        } else {
            n - 1
        }
    }

    fn apply(&self, i: usize, x: &Tensor<T>, rng: Option<&mut Rng>, cache: Option<&mut ForwardCache<T>>) -> Result<Tensor<T>> {
        let layer = &self.arch.layers[i];
        let out = match *layer {
            LayerSpec::Conv2d { stride, .. } => {
                let w = self.param_index[i].expect("conv has params");
                ops::conv2d(x, &self.params[w], &self.params[w + 1], stride)?
            }
            LayerSpec::Maxpool2d { pool_h, pool_w } => {
                let (y, arg) = ops::maxpool2d(x, pool_h, pool_w)?;
                if let Some(c) = cache {
                    c.pool_argmax[i] = arg;
                }
                y
            }
            LayerSpec::Relu => ops::relu(x),
            LayerSpec::Dense { .. } => {
                let w = self.param_index[i].expect("dense has params");
                ops::dense(x, &self.params[w], &self.params[w + 1])?
            }
            LayerSpec::Dropout { rate } => {
                let (y, mask) = ops::dropout(x, rate, rng);
                if let Some(c) = cache {
                    c.dropout_masks[i] = mask;
                }
                y
            }
            LayerSpec::Softmax => ops::softmax(x),
        };
        if cfg!(debug_assertions) && !out.is_finite() {
            return Err(Error::NonFinite { layer: i, kind: layer.name() });
        }
        Ok(out)
    }

    /// Runs layers `0..=until`. `dropout_rng = None` is eval mode.
    pub fn forward(&self, input: &Tensor<T>, until: usize, mut dropout_rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        if until >= self.arch.layers.len() {
            return Err(Error::invalid(format!("layer {until} out of range for {} layers", self.arch.layers.len())));
        }
        let mut x = self.apply(0, input, dropout_rng.as_deref_mut(), None)?;
        for i in 1..=until {
            x = self.apply(i, &x, dropout_rng.as_deref_mut(), None)?;
        }
        Ok(x)
    }

    /// Eval-mode class scores (output of the full stack).
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward(input, self.arch.layers.len() - 1, None)?;
        if matches!(self.arch.layers.last(), Some(LayerSpec::Softmax)) {
            Ok(y)
        } else {
            Ok(ops::softmax(&y))
        }
    }

    /// Eval-mode output of `layer`, flattened to `[N, len]`.
    pub fn embed(&self, input: &Tensor<T>, layer: usize) -> Result<Tensor<T>> {
        let y = self.forward(input, layer, None)?;
        let (n, len) = (y.batch(), y.item_len());
        y.reshape(&[n, len])
    }

    pub fn forward_cached(
        &self,
        input: &Tensor<T>,
        until: usize,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let n = self.arch.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(until + 1),
            pool_argmax: vec![Vec::new(); n],
            dropout_masks: vec![Vec::new(); n],
        };
        let mut x = input.clone();
        for i in 0..=until {
            let y = self.apply(i, &x, dropout_rng.as_deref_mut(), Some(&mut cache))?;
            cache.inputs.push(x);
            x = y;
        }
        Ok((x, cache))
    }

    /// Backpropagates `grad_out` (gradient at the output of the last cached
    /// layer) and returns gradients for every parameter tensor.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut g = grad_out;
        for i in (0..cache.inputs.len()).rev() {
            let x = &cache.inputs[i];
            g = match self.arch.layers[i] {
                LayerSpec::Conv2d { stride, .. } => {
                    let w = self.param_index[i].expect("conv has params");
                    let (dx, dk, db) = ops::conv2d_backward(x, &self.params[w], &g, stride)?;
                    grads[w] = dk;
                    grads[w + 1] = db;
                    dx
                }
                LayerSpec::Maxpool2d { .. } => ops::maxpool2d_backward(x.shape(), &cache.pool_argmax[i], &g)?,
                LayerSpec::Relu => ops::relu_backward(x, &g.reshape(x.shape())?),
                LayerSpec::Dense { .. } => {
                    let w = self.param_index[i].expect("dense has params");
                    let (dx, dw, db) = ops::dense_backward(x, &self.params[w], &g)?;
                    grads[w] = dw;
                    grads[w + 1] = db;
                    dx
                }
                LayerSpec::Dropout { .. } => ops::dropout_backward(&cache.dropout_masks[i], &g.reshape(x.shape())?),
                LayerSpec::Softmax => ops::softmax_backward(&ops::softmax(x), &g),
            };
        }
        Ok(grads)
    }

    /// Squared-distance-to-softmax loss on a batch and its parameter
    /// gradients. `dropout_rng = None` disables dropout.
    pub fn loss_and_grad(
        &self,
        input: &Tensor<T>,
        targets: &Tensor<T>,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        let (logits, cache) = self.forward_cached(input, self.logits_layer(), dropout_rng)?;
        let (loss, g) = euclid_softmax_loss(&logits, targets)?;
        Ok((loss, self.backward(&cache, g)?))
    }

    /// Eval-mode loss plus a hash of every ReLU sign and max-pool winner.
    /// Equal hashes at two parameter settings mean both lie in the same
    /// piecewise-smooth region.
    pub fn loss_and_kink_pattern(&self, input: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, u64)> {
        use std::hash::{Hash, Hasher};
        let (logits, cache) = self.forward_cached(input, self.logits_layer(), None)?;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, layer) in self.arch.layers.iter().enumerate().take(cache.inputs.len()) {
            match layer {
                LayerSpec::Relu => {
                    for chunk in cache.inputs[i].data().chunks(64) {
                        let bits = chunk.iter().enumerate().fold(0u64, |b, (k, &v)| b | (((v > T::zero()) as u64) << k));
                        bits.hash(&mut h);
                    }
                }
                LayerSpec::Maxpool2d { .. } => cache.pool_argmax[i].hash(&mut h),
                _ => {}
            }
        }
        Ok((euclid_softmax_loss(&logits, targets)?.0, h.finish()))
    }

    pub fn loss(&self, input: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
        let logits = self.forward(input, self.logits_layer(), None)?;
        Ok(euclid_softmax_loss(&logits, targets)?.0)
    }
}
