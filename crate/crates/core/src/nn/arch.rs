use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ops::{conv_output_dim, pool_output_dim};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize, stride: usize },
    Maxpool2d { pool_h: usize, pool_w: usize },
    Relu,
    /// Affine map over the flattened input.
    Dense { in_features: usize, units: usize },
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn conv3x3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d { in_channels, out_channels, kernel_h: 3, kernel_w: 3, stride: 1 }
    }

    pub fn pool(pool_h: usize, pool_w: usize) -> Self {
        LayerSpec::Maxpool2d { pool_h, pool_w }
    }

    /// Weight and bias shapes, if the layer has parameters.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, .. } => {
                Some((vec![out_channels, in_channels, kernel_h, kernel_w], vec![out_channels]))
            }
            LayerSpec::Dense { in_features, units } => Some((vec![in_features, units], vec![units])),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool2d { .. } => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// A sequential layer stack over `[channels, height, width]` inputs.
///
/// Height is the frequency axis and width the time axis of a spectrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose (flattened) output is the embedding.
    pub embedding_layer: usize,
}

/// Spectrogram input used by the presets: 129 bins × 200 frames.
pub const SPECTROGRAM_INPUT: [usize; 3] = [1, 129, 200];

impl Architecture {
    /// Desk-scale classifier: a 2×2 input pool, three pairs of 3×3 convs
    /// (8-8, 16-16, 32-32) each followed by a pool (2×1 after the first pair
    /// so time is kept longer), a ReLU dense embedding of `embedding_units`,
    /// dropout 0.5 and a dense softmax head.
    pub fn desk(n_classes: usize, embedding_units: usize) -> Self {
        use LayerSpec::*;
        let mut layers = vec![LayerSpec::pool(2, 2)];
        let mut channels = 1;
        for (width, pool) in [(8, (2, 1)), (16, (2, 2)), (32, (2, 2))] {
            layers.extend([LayerSpec::conv3x3(channels, width), Relu, LayerSpec::conv3x3(width, width), Relu]);
            layers.push(LayerSpec::pool(pool.0, pool.1));
            channels = width;
        }
        let mut arch = Architecture {
            name: format!("desk-{embedding_units}"),
            input_shape: SPECTROGRAM_INPUT,
            layers,
            embedding_layer: 0,
        };
        let flat = arch.flat_output_len().expect("desk preset shapes are valid");
        arch.layers.extend([
            Dense { in_features: flat, units: embedding_units },
            Relu,
            Dropout { rate: 0.5 },
            Dense { in_features: embedding_units, units: n_classes },
            Softmax,
        ]);
        arch.embedding_layer = arch.layers.len() - 4;
        arch
    }

    /// Reconstruction of a 19-weight-layer VGG-style network on the
    /// 129×200 spectrogram (16 convs in blocks of 2-2-4-4-4 plus 3 dense
    /// layers). Channel widths are divided by `width_divisor`; `1` gives the
    /// full-width shape, larger values give a cheap stand-in with identical
    /// topology for verification.
    pub fn deep19(n_classes: usize, width_divisor: usize) -> Self {
        use LayerSpec::*;
        let d = width_divisor.max(1);
        let w = |c: usize| (c / d).max(1);
        // Block 5 sees only three frequency rows, so it uses 1×3 kernels.
        let blocks: [(usize, usize, (usize, usize), (usize, usize)); 5] = [
            (2, w(64), (3, 3), (2, 2)),
            (2, w(128), (3, 3), (2, 2)),
            (4, w(256), (3, 3), (2, 1)),
            (4, w(512), (3, 3), (1, 2)),
            (4, w(512), (1, 3), (1, 2)),
        ];
        let mut layers = Vec::new();
        let mut channels = 1;
        for (convs, width, (kh, kw), (ph, pw)) in blocks {
            for _ in 0..convs {
                layers.push(Conv2d { in_channels: channels, out_channels: width, kernel_h: kh, kernel_w: kw, stride: 1 });
                layers.push(Relu);
                channels = width;
            }
            layers.push(LayerSpec::pool(ph, pw));
        }
        let mut arch = Architecture {
            name: if d == 1 { "deep-19".into() } else { format!("deep-19/{d}") },
            input_shape: SPECTROGRAM_INPUT,
            layers,
            embedding_layer: 0,
        };
        let flat = arch.flat_output_len().expect("deep-19 preset shapes are valid");
        let (hidden, embed) = (w(4096), w(2000));
        arch.layers.extend([
            Dense { in_features: flat, units: hidden },
            Relu,
            Dropout { rate: 0.5 },
            Dense { in_features: hidden, units: embed },
            Relu,
            Dropout { rate: 0.5 },
            Dense { in_features: embed, units: n_classes },
            Softmax,
        ]);
        arch.embedding_layer = arch.layers.len() - 4;
        arch
    }

    /// Small two-conv network for tests and gradient checks.
    pub fn toy(input_shape: [usize; 3], n_classes: usize) -> Self {
        use LayerSpec::*;
        let mut arch = Architecture {
            name: "toy".into(),
            input_shape,
            layers: vec![
                LayerSpec::conv3x3(input_shape[0], 3),
                Relu,
                LayerSpec::pool(2, 1),
                LayerSpec::conv3x3(3, 4),
                Relu,
                LayerSpec::pool(2, 2),
            ],
            embedding_layer: 0,
        };
        let flat = arch.flat_output_len().expect("toy input too small");
        arch.layers.extend([
            Dense { in_features: flat, units: 6 },
            Relu,
            Dropout { rate: 0.5 },
            Dense { in_features: 6, units: n_classes },
            Softmax,
        ]);
        arch.embedding_layer = arch.layers.len() - 4;
        arch
    }

    fn flat_output_len(&self) -> Result<usize> {
        Ok(self.output_shapes()?.last().map_or(self.input_shape.iter().product(), |s| s.iter().product()))
    }

    /// Per-item output shape after every layer; validates the stack.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (*layer, shape.as_slice()) {
                (LayerSpec::Conv2d { in_channels, out_channels, kernel_h, kernel_w, stride }, &[c, h, w]) => {
                    if c != in_channels {
                        return Err(Error::shape(format!("layer {i}: conv expects {in_channels} channels, got {c}")));
                    }
                    if out_channels == 0 {
                        return Err(Error::shape(format!("layer {i}: conv needs at least one filter")));
                    }
                    match (conv_output_dim(h, kernel_h, stride), conv_output_dim(w, kernel_w, stride)) {
                        (Some(oh), Some(ow)) => vec![out_channels, oh, ow],
                        _ => {
                            return Err(Error::shape(format!(
                                "layer {i}: {kernel_h}x{kernel_w} kernel does not fit {h}x{w}"
                            )))
                        }
                    }
                }
                (LayerSpec::Maxpool2d { pool_h, pool_w }, &[c, h, w]) => {
                    if pool_h == 0 || pool_w == 0 {
                        return Err(Error::shape(format!("layer {i}: pool dims must be positive")));
                    }
                    vec![c, pool_output_dim(h, pool_h), pool_output_dim(w, pool_w)]
                }
                (LayerSpec::Conv2d { .. } | LayerSpec::Maxpool2d { .. }, s) => {
                    return Err(Error::shape(format!("layer {i}: spatial layer applied to shape {s:?}")))
                }
                (LayerSpec::Dense { in_features, units }, s) => {
                    let flat: usize = s.iter().product();
                    if flat != in_features {
                        return Err(Error::shape(format!("layer {i}: dense expects {in_features} inputs, got {flat}")));
                    }
                    if units == 0 {
                        return Err(Error::shape(format!("layer {i}: dense needs at least one unit")));
                    }
                    vec![units]
                }
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::shape(format!("layer {i}: dropout rate {rate} outside [0, 1)")));
                    }
                    s.to_vec()
                }
                (LayerSpec::Relu, s) => s.to_vec(),
                (LayerSpec::Softmax, s) => {
                    if s.len() != 1 {
                        return Err(Error::shape(format!("layer {i}: softmax expects a flat input")));
                    }
                    s.to_vec()
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.output_shapes()?;
        if self.embedding_layer >= self.layers.len() {
            return Err(Error::invalid(format!(
                "embedding layer {} out of range for {} layers",
                self.embedding_layer,
                self.layers.len()
            )));
        }
        if shapes.last().map(Vec::len) != Some(1) {
            return Err(Error::shape("network must end in a flat output"));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.output_shapes().ok().and_then(|s| s.last().map(|v| v.iter().product())).unwrap_or(0)
    }

    /// Flattened size of the output of `layer`.
    pub fn layer_output_len(&self, layer: usize) -> Result<usize> {
        let shapes = self.output_shapes()?;
        shapes.get(layer).map(|s| s.iter().product()).ok_or_else(|| {
            Error::invalid(format!("layer index {layer} out of range for {} layers", self.layers.len()))
        })
    }

    pub fn embedding_size(&self) -> usize {
        self.layer_output_len(self.embedding_layer).unwrap_or(0)
    }

    /// `(name, shape)` of every parameter tensor in order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((w, b)) = layer.param_shapes() {
                out.push((format!("layer{i}.{}.weight", layer.name()), w));
                out.push((format!("layer{i}.{}.bias", layer.name()), b));
            }
        }
        out
    }

    pub fn weight_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.param_shapes().is_some()).count()
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}
