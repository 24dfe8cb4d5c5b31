//! Minimal dense/convolutional network engine with exact forward and
//! backward passes and an activation record sufficient for relevance
//! propagation.

mod checkpoint;
mod init;
pub(crate) mod layers;
mod loss;

pub use checkpoint::{load_model, save_model};
pub use init::{fan_in, he_init};
pub use loss::{softmax_probs, softmax_xent};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use layers::{
    conv3x3_backward_data, conv3x3_backward_params, conv3x3_forward, dense_backward_data,
    dense_backward_params, dense_forward, dims4, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward, relu_forward, ConvScratch,
};

#[derive(Debug, Clone)]
pub enum Layer {
    /// Same-padded 3x3 cross-correlation, stride 1. Weights (O,C,3,3), bias (O).
    Conv3x3 { weights: Tensor, bias: Tensor },
    Relu,
    /// 2x2 window, stride 2, floor semantics on odd extents.
    MaxPool2x2,
    /// (N,C,H,W) -> (N, C*H*W).
    Flatten,
    /// Affine map. Weights (O,F), bias (O).
    Dense { weights: Tensor, bias: Tensor },
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv3x3 { .. } => "conv3x3",
            Layer::Relu => "relu",
            Layer::MaxPool2x2 => "maxpool2x2",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }

    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv3x3 { weights, bias } | Layer::Dense { weights, bias } => {
                Some((weights, bias))
            }
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv3x3 { weights, bias } | Layer::Dense { weights, bias } => {
                Some((weights, bias))
            }
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.params().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    /// Image input (channel, height, width); batches are (N,C,H,W).
    Chw { channels: usize, height: usize, width: usize },
    /// Flat feature input; batches are (N,F).
    Flat { features: usize },
}

impl InputShape {
    pub fn batch_dims(&self, n: usize) -> Vec<usize> {
        match *self {
            InputShape::Chw { channels, height, width } => vec![n, channels, height, width],
            InputShape::Flat { features } => vec![n, features],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub init_scheme: String,
    pub trained_epochs: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub layers: Vec<Layer>,
    pub input_shape: InputShape,
    pub meta: ModelMeta,
}

/// Activations of one forward pass. Layer i's input is layer i-1's output
/// (or the network input), so only the output chain is stored; replaying
/// any layer on its recorded input reproduces its recorded output.
#[derive(Debug, Clone)]
pub struct ActivationRecord {
    input: Tensor,
    outputs: Vec<Tensor>,
    pool_argmax: Vec<Option<Vec<u32>>>,
}

impl ActivationRecord {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input_of(&self, layer: usize) -> &Tensor {
        if layer == 0 {
            &self.input
        } else {
            &self.outputs[layer - 1]
        }
    }

    pub fn output_of(&self, layer: usize) -> &Tensor {
        &self.outputs[layer]
    }

    pub fn argmax_of(&self, layer: usize) -> Option<&[u32]> {
        self.pool_argmax[layer].as_deref()
    }

    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("record is never empty")
    }

    pub fn batch_len(&self) -> usize {
        self.input.dims()[0]
    }
}

/// Per-layer parameter gradients, aligned with `model.layers`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub per_layer: Vec<Option<LayerGrads>>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Gradients {
    pub fn zeros_like(model: &NetworkModel) -> Gradients {
        let per_layer = model
            .layers
            .iter()
            .map(|l| {
                l.params().map(|(w, b)| LayerGrads {
                    weights: Tensor::zeros(w.dims()),
                    bias: Tensor::zeros(b.dims()),
                })
            })
            .collect();
        Gradients { per_layer }
    }

    /// Element-wise accumulate (fixed order across chunks keeps training
    /// deterministic for any thread count).
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                    *x += y;
                }
                for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                    *x += y;
                }
            }
        }
    }
}

impl NetworkModel {
    /// VGG-style classifier: per block two same-padded 3x3 convs with ReLU
    /// and a trailing 2x2 max pool; then flatten, dense(dense_units)+ReLU,
    /// dense(classes). Softmax lives in the loss/predict path.
    pub fn conv_classifier(
        input_hw: (usize, usize),
        block_filters: &[usize],
        dense_units: usize,
        classes: usize,
        seed: u64,
    ) -> Result<NetworkModel> {
        if block_filters.is_empty() {
            return Err(Error::Config("at least one conv block required".into()));
        }
        let (height, width) = input_hw;
        let root = crate::rng::CounterRng::new(seed);
        let mut layers = Vec::new();
        let mut channels = 1usize;
        let (mut h, mut w) = (height, width);
        let mut layer_seed = 0u64;
        let next_seed = |layer_seed: &mut u64| {
            *layer_seed += 1;
            root.derive(*layer_seed).key()
        };
        for &filters in block_filters {
            for _ in 0..2 {
                layers.push(Layer::Conv3x3 {
                    weights: he_init(&[filters, channels, 3, 3], next_seed(&mut layer_seed)),
                    bias: Tensor::zeros(&[filters]),
                });
                layers.push(Layer::Relu);
                channels = filters;
            }
            if h / 2 == 0 || w / 2 == 0 {
                return Err(Error::Config(format!(
                    "input {height}x{width} too small for {} blocks",
                    block_filters.len()
                )));
            }
            layers.push(Layer::MaxPool2x2);
            h /= 2;
            w /= 2;
        }
        layers.push(Layer::Flatten);
        let features = channels * h * w;
        layers.push(Layer::Dense {
            weights: he_init(&[dense_units, features], next_seed(&mut layer_seed)),
            bias: Tensor::zeros(&[dense_units]),
        });
        layers.push(Layer::Relu);
        layers.push(Layer::Dense {
            weights: he_init(&[classes, dense_units], next_seed(&mut layer_seed)),
            bias: Tensor::zeros(&[classes]),
        });
        Ok(NetworkModel {
            layers,
            input_shape: InputShape::Chw { channels: 1, height, width },
            meta: ModelMeta { seed, init_scheme: "he".into(), trained_epochs: 0 },
        })
    }

    /// Dense-only model over flat features (tests, pattern oracles).
    pub fn dense_stack(layers: Vec<Layer>, features: usize, seed: u64) -> NetworkModel {
        NetworkModel {
            layers,
            input_shape: InputShape::Flat { features },
            meta: ModelMeta { seed, init_scheme: "he".into(), trained_epochs: 0 },
        }
    }

    pub fn logit_count(&self) -> usize {
        for layer in self.layers.iter().rev() {
            if let Some((w, _)) = layer.params() {
                return w.dims()[0];
            }
        }
        0
    }

    /// Largest im2col buffer any conv layer of this model needs for a
    /// single sample.
    fn scratch_len(&self) -> usize {
        let mut len = 1;
        let (mut h, mut w) = match self.input_shape {
            InputShape::Chw { height, width, .. } => (height, width),
            InputShape::Flat { .. } => return 1,
        };
        for layer in &self.layers {
            match layer {
                Layer::Conv3x3 { weights, .. } => {
                    len = len.max(weights.dims()[1] * 9 * h * w);
                }
                Layer::MaxPool2x2 => {
                    h /= 2;
                    w /= 2;
                }
                _ => {}
            }
        }
        len
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let ok = match self.input_shape {
            InputShape::Chw { channels, height, width } => {
                batch.dims().len() == 4
                    && batch.dims()[1] == channels
                    && batch.dims()[2] == height
                    && batch.dims()[3] == width
            }
            InputShape::Flat { features } => {
                batch.dims().len() == 2 && batch.dims()[1] == features
            }
        };
        if !ok {
            return Err(Error::Shape(format!(
                "batch {:?} does not match model input {:?}",
                batch.dims(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Full forward pass with activation record.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ActivationRecord)> {
        self.check_input(batch)?;
        let mut scratch = ConvScratch::with_capacity(self.scratch_len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut pool_argmax: Vec<Option<Vec<u32>>> = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, argmax) = self.apply_layer(layer, &current, &mut scratch)?;
            if !out.all_finite() {
                return Err(Error::Numeric(format!("layer {i} ({})", layer.kind_name())));
            }
            pool_argmax.push(argmax);
            outputs.push(out.clone());
            current = out;
        }
        Ok((current, ActivationRecord { input: batch.clone(), outputs, pool_argmax }))
    }

    /// Forward pass keeping only the logits.
    pub fn forward_logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut scratch = ConvScratch::with_capacity(self.scratch_len());
        let mut current = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, _) = self.apply_layer(layer, &current, &mut scratch)?;
            if !out.all_finite() {
                return Err(Error::Numeric(format!("layer {i} ({})", layer.kind_name())));
            }
            current = out;
        }
        Ok(current)
    }

    fn apply_layer(
        &self,
        layer: &Layer,
        input: &Tensor,
        scratch: &mut ConvScratch,
    ) -> Result<(Tensor, Option<Vec<u32>>)> {
        match layer {
            Layer::Conv3x3 { weights, bias } => {
                Ok((conv3x3_forward(input, weights, bias, scratch)?, None))
            }
            Layer::Relu => Ok((relu_forward(input), None)),
            Layer::MaxPool2x2 => {
                let (out, argmax) = maxpool2x2_forward(input)?;
                Ok((out, Some(argmax)))
            }
            Layer::Flatten => {
                let [n, c, h, w] = dims4(input, "flatten input")?;
                Ok((input.clone().reshaped(&[n, c * h * w])?, None))
            }
            Layer::Dense { weights, bias } => {
                Ok((dense_forward(input, weights, bias)?, None))
            }
        }
    }

    /// Argmax class labels (1-based); ties resolve to the lower class.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<u8>> {
        let logits = self.forward_logits(batch)?;
        Ok(argmax_labels(&logits))
    }

    /// Exact parameter gradients (and the input gradient) for a recorded
    /// batch, given upstream gradients on the logits.
    pub fn backward(
        &self,
        record: &ActivationRecord,
        logit_grad: &Tensor,
    ) -> Result<(Gradients, Tensor)> {
        let mut scratch = ConvScratch::with_capacity(self.scratch_len());
        let mut grads = Gradients::zeros_like(self);
        let mut g = logit_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = record.input_of(i);
            g = match layer {
                Layer::Conv3x3 { weights, .. } => {
                    let lg = grads.per_layer[i].as_mut().unwrap();
                    conv3x3_backward_params(input, &g, &mut lg.weights, &mut lg.bias, &mut scratch)?;
                    conv3x3_backward_data(&g, weights, input.dims(), &mut scratch)?
                }
                Layer::Relu => relu_backward(input, &g),
                Layer::MaxPool2x2 => {
                    let argmax = record.argmax_of(i).expect("pool layer recorded argmax");
                    maxpool2x2_backward(&g, argmax, input.dims())?
                }
                Layer::Flatten => g.reshaped(input.dims())?,
                Layer::Dense { weights, .. } => {
                    let lg = grads.per_layer[i].as_mut().unwrap();
                    dense_backward_params(input, &g, &mut lg.weights, &mut lg.bias)?;
                    dense_backward_data(&g, weights, input.dims())?
                }
            };
        }
        Ok((grads, g))
    }

    /// Replay every recorded layer and compare bit-exactly.
    pub fn replay_matches(&self, record: &ActivationRecord) -> Result<bool> {
        let mut scratch = ConvScratch::with_capacity(self.scratch_len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, _) = self.apply_layer(layer, record.input_of(i), &mut scratch)?;
            if out.data() != record.output_of(i).data() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Argmax over logit rows, 1-based labels, ties to the lower class.
pub fn argmax_labels(logits: &Tensor) -> Vec<u8> {
    let k = logits.dims()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            (best + 1) as u8
        })
        .collect()
}
