//! Per-layer backward rules.
//!
//! Every rule maps an upstream signal on a layer's outputs to a signal on
//! its inputs. Gradient-style rules pull back through the chain rule
//! (possibly with substituted kernels); the LRP family redistributes
//! relevance proportionally to signed input contributions with
//! sign-matched epsilon stabilizers. Inputs to linear layers are
//! nonnegative throughout this architecture (pixels, ReLU or pool
//! outputs); the positive/negative splits rely on that.

use super::{MethodKind, MethodSpec, PatternSet};
use crate::error::{Error, Result};
use crate::netcore::layers::{
    conv3x3_backward_data, conv3x3_forward, dense_backward_data, dense_forward, maxpool2x2_backward,
    ConvScratch,
};
use crate::netcore::{ActivationRecord, InputShape, Layer, NetworkModel};
use crate::tensor::Tensor;

pub(crate) fn scratch_for(model: &NetworkModel) -> ConvScratch {
    let mut len = 1usize;
    if let InputShape::Chw { height, width, .. } = model.input_shape {
        let (mut h, mut w) = (height, width);
        for layer in &model.layers {
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
    }
    ConvScratch::with_capacity(len)
}

/// Pull a signal back through a linear layer with an arbitrary kernel.
fn backward_data(
    layer: &Layer,
    kernel: &Tensor,
    signal: &Tensor,
    input_dims: &[usize],
    scratch: &mut ConvScratch,
) -> Result<Tensor> {
    match layer {
        Layer::Conv3x3 { .. } => conv3x3_backward_data(signal, kernel, input_dims, scratch),
        Layer::Dense { .. } => dense_backward_data(signal, kernel, input_dims),
        _ => unreachable!("linear rule on non-linear layer"),
    }
}

/// Forward an input through a linear layer with an arbitrary kernel/bias.
fn forward_with(
    layer: &Layer,
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    scratch: &mut ConvScratch,
) -> Result<Tensor> {
    match layer {
        Layer::Conv3x3 { .. } => conv3x3_forward(input, kernel, bias, scratch),
        Layer::Dense { .. } => dense_forward(input, kernel, bias),
        _ => unreachable!("linear rule on non-linear layer"),
    }
}

fn split_positive(t: &Tensor) -> (Tensor, Tensor) {
    let mut pos = t.clone();
    let mut neg = t.clone();
    for v in pos.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    for v in neg.data_mut() {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    (pos, neg)
}

/// signal / (denom + eps * sign(denom)); sign(0) counts as positive.
fn stabilized_ratio(signal: &Tensor, denom: &Tensor, epsilon: f32) -> Tensor {
    let mut out = signal.clone();
    for (s, &d) in out.data_mut().iter_mut().zip(denom.data()) {
        let stab = if d >= 0.0 { d + epsilon } else { d - epsilon };
        *s /= stab;
    }
    out
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (x, &y) in out.data_mut().iter_mut().zip(b.data()) {
        *x *= y;
    }
    out
}

fn scaled_add(a: Tensor, sa: f32, b: &Tensor, sb: f32) -> Tensor {
    let mut out = a;
    for (x, &y) in out.data_mut().iter_mut().zip(b.data()) {
        *x = sa * *x + sb * y;
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_rule(
    layer: &Layer,
    record: &ActivationRecord,
    layer_idx: usize,
    signal: &Tensor,
    method: &MethodSpec,
    patterns: Option<&PatternSet>,
    is_first_linear: bool,
    scratch: &mut ConvScratch,
) -> Result<Tensor> {
    let input = record.input_of(layer_idx);
    let (weights, bias) = layer.params().expect("linear layer has params");
    match method.kind {
        MethodKind::Gradient | MethodKind::DeconvNet | MethodKind::GuidedBackprop => {
            backward_data(layer, weights, signal, input.dims(), scratch)
        }
        MethodKind::PatternNet => {
            let pattern = pattern_for(patterns, layer_idx, method.kind)?;
            backward_data(layer, pattern, signal, input.dims(), scratch)
        }
        MethodKind::PatternAttribution => {
            let pattern = pattern_for(patterns, layer_idx, method.kind)?;
            let kernel = hadamard(weights, pattern);
            backward_data(layer, &kernel, signal, input.dims(), scratch)
        }
        MethodKind::LrpZ => {
            // z_i comes straight from the recorded pre-activation
            let z = record.output_of(layer_idx);
            let s = stabilized_ratio(signal, z, method.epsilon);
            let c = backward_data(layer, weights, &s, input.dims(), scratch)?;
            Ok(hadamard(&c, input))
        }
        MethodKind::LrpAlphaBeta => {
            alpha_beta(layer, input, weights, bias, signal, method.alpha, method.beta, method.epsilon, scratch)
        }
        MethodKind::DeepTaylor => {
            if is_first_linear {
                z_box_rule(layer, record, layer_idx, signal, method, scratch)
            } else {
                // hidden layers use the z+ rule, i.e. alpha-beta with (1, 0)
                alpha_beta(layer, input, weights, bias, signal, 1.0, 0.0, method.epsilon, scratch)
            }
        }
    }
}

/// Positive/negative contribution split. With nonnegative inputs the sign
/// of a_j * w_ij is the sign of w_ij, so z+/z- are forwards through the
/// sign-split kernels; the bias joins the denominator matching its sign.
#[allow(clippy::too_many_arguments)]
fn alpha_beta(
    layer: &Layer,
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    signal: &Tensor,
    alpha: f32,
    beta: f32,
    epsilon: f32,
    scratch: &mut ConvScratch,
) -> Result<Tensor> {
    debug_assert!(input.data().iter().all(|&v| v >= 0.0), "alpha-beta expects nonnegative inputs");
    let (w_pos, w_neg) = split_positive(weights);
    let (b_pos, b_neg) = split_positive(bias);
    let z_pos = forward_with(layer, input, &w_pos, &b_pos, scratch)?;
    let s_pos = stabilized_ratio(signal, &z_pos, epsilon);
    let c_pos = backward_data(layer, &w_pos, &s_pos, input.dims(), scratch)?;
    let mut combined = c_pos;
    if beta != 0.0 {
        let z_neg = forward_with(layer, input, &w_neg, &b_neg, scratch)?;
        let s_neg = stabilized_ratio(signal, &z_neg, epsilon);
        let c_neg = backward_data(layer, &w_neg, &s_neg, input.dims(), scratch)?;
        combined = scaled_add(combined, alpha, &c_neg, -beta);
    } else if alpha != 1.0 {
        for v in combined.data_mut() {
            *v *= alpha;
        }
    }
    Ok(hadamard(&combined, input))
}

/// Deep-Taylor z^B rule for the pixel layer with box bounds [l, u]:
/// R_j = sum_i (z_ij - l w+_ij - u w-_ij) / D_i * R_i with the denominator
/// summing the same terms over the receptive field (bias excluded).
fn z_box_rule(
    layer: &Layer,
    record: &ActivationRecord,
    layer_idx: usize,
    signal: &Tensor,
    method: &MethodSpec,
    scratch: &mut ConvScratch,
) -> Result<Tensor> {
    let input = record.input_of(layer_idx);
    let (weights, bias) = layer.params().expect("linear layer");
    let (low, high) = method.input_bounds;
    let (w_pos, w_neg) = split_positive(weights);

    // denominator: (z - b) - l * (1 * w+) - u * (1 * w-); the all-ones
    // forward respects zero padding, so border terms shrink correctly
    let zero_bias = Tensor::zeros(bias.dims());
    let ones = Tensor::from_vec(input.dims(), vec![1.0; input.len()])?;
    let mut denom = record.output_of(layer_idx).clone();
    subtract_bias(layer, &mut denom, bias);
    let ones_pos = forward_with(layer, &ones, &w_pos, &zero_bias, scratch)?;
    let ones_neg = forward_with(layer, &ones, &w_neg, &zero_bias, scratch)?;
    for ((d, &op), &on) in denom.data_mut().iter_mut().zip(ones_pos.data()).zip(ones_neg.data()) {
        *d -= low * op + high * on;
    }

    let s = stabilized_ratio(signal, &denom, method.epsilon);
    let c = backward_data(layer, weights, &s, input.dims(), scratch)?;
    let c_pos = backward_data(layer, &w_pos, &s, input.dims(), scratch)?;
    let c_neg = backward_data(layer, &w_neg, &s, input.dims(), scratch)?;
    let mut out = hadamard(&c, input);
    for ((o, &cp), &cn) in out.data_mut().iter_mut().zip(c_pos.data()).zip(c_neg.data()) {
        *o -= low * cp + high * cn;
    }
    Ok(out)
}

fn subtract_bias(layer: &Layer, t: &mut Tensor, bias: &Tensor) {
    match layer {
        Layer::Conv3x3 { .. } => {
            let dims = t.dims().to_vec();
            let (n, o, p) = (dims[0], dims[1], dims[2] * dims[3]);
            for s in 0..n {
                for oc in 0..o {
                    let b = bias.data()[oc];
                    for v in &mut t.data_mut()[(s * o + oc) * p..(s * o + oc + 1) * p] {
                        *v -= b;
                    }
                }
            }
        }
        Layer::Dense { .. } => {
            let o = bias.len();
            let n = t.len() / o;
            for s in 0..n {
                for (v, &b) in t.data_mut()[s * o..(s + 1) * o].iter_mut().zip(bias.data()) {
                    *v -= b;
                }
            }
        }
        _ => unreachable!(),
    }
}

fn pattern_for<'a>(
    patterns: Option<&'a PatternSet>,
    layer_idx: usize,
    kind: MethodKind,
) -> Result<&'a Tensor> {
    patterns
        .and_then(|p| p.layer_patterns.get(layer_idx))
        .and_then(|p| p.as_ref())
        .ok_or_else(|| {
            Error::Unsupported(format!("{} has no pattern for layer {layer_idx}", kind.name()))
        })
}

/// ReLU rules. The LRP family passes relevance unchanged (the activation
/// is already part of the next layer's recorded input); gradient-style
/// rules differ in which masks they apply.
pub(crate) fn relu_rule(kind: MethodKind, input: &Tensor, signal: &Tensor) -> Tensor {
    let mut out = signal.clone();
    match kind {
        MethodKind::Gradient | MethodKind::PatternNet | MethodKind::PatternAttribution => {
            for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        MethodKind::DeconvNet => {
            for g in out.data_mut() {
                if *g < 0.0 {
                    *g = 0.0;
                }
            }
        }
        MethodKind::GuidedBackprop => {
            for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
                if x <= 0.0 || *g < 0.0 {
                    *g = 0.0;
                }
            }
        }
        MethodKind::LrpZ | MethodKind::LrpAlphaBeta | MethodKind::DeepTaylor => {}
    }
    out
}

/// Pooling routes winner-take-all for every method.
pub(crate) fn pool_rule(signal: &Tensor, argmax: &[u32], input_dims: &[usize]) -> Result<Tensor> {
    maxpool2x2_backward(signal, argmax, input_dims)
}
