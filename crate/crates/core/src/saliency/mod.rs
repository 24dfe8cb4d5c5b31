//! Relevance-propagation engine: eight attribution methods implemented as
//! per-layer backward rules over a recorded forward pass.

mod patterns;
pub mod render;
mod rules;

pub use patterns::{estimate_patterns, load_patterns, save_patterns, PatternSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{ActivationRecord, Layer, NetworkModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Gradient,
    LrpZ,
    LrpAlphaBeta,
    DeepTaylor,
    GuidedBackprop,
    DeconvNet,
    PatternNet,
    PatternAttribution,
}

impl MethodKind {
    pub const ALL: [MethodKind; 8] = [
        MethodKind::Gradient,
        MethodKind::LrpZ,
        MethodKind::LrpAlphaBeta,
        MethodKind::DeepTaylor,
        MethodKind::GuidedBackprop,
        MethodKind::DeconvNet,
        MethodKind::PatternNet,
        MethodKind::PatternAttribution,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Gradient => "gradient",
            MethodKind::LrpZ => "lrp_z",
            MethodKind::LrpAlphaBeta => "lrp_alpha_beta",
            MethodKind::DeepTaylor => "deep_taylor",
            MethodKind::GuidedBackprop => "guided_backprop",
            MethodKind::DeconvNet => "deconvnet",
            MethodKind::PatternNet => "pattern_net",
            MethodKind::PatternAttribution => "pattern_attribution",
        }
    }

    pub fn parse(s: &str) -> Result<MethodKind> {
        MethodKind::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown saliency method '{s}'")))
    }

    pub fn needs_patterns(&self) -> bool {
        matches!(self, MethodKind::PatternNet | MethodKind::PatternAttribution)
    }

    /// Gradient-style methods start the backward signal at 1; the
    /// conservation-style methods start it at the target logit value.
    fn seeds_with_logit(&self) -> bool {
        matches!(
            self,
            MethodKind::LrpZ
                | MethodKind::LrpAlphaBeta
                | MethodKind::DeepTaylor
                | MethodKind::PatternAttribution
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub alpha: f32,
    pub beta: f32,
    /// Sign-matched denominator stabilizer.
    pub epsilon: f32,
    /// Pixel-value box for the deep-Taylor input-layer rule.
    pub input_bounds: (f32, f32),
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> MethodSpec {
        MethodSpec { kind, alpha: 2.0, beta: 1.0, epsilon: 1e-7, input_bounds: (0.0, 1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::Config("stabilizer epsilon must be positive".into()));
        }
        if self.kind == MethodKind::LrpAlphaBeta && (self.alpha - self.beta - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "alpha - beta must equal 1, got {} - {}",
                self.alpha, self.beta
            )));
        }
        if self.input_bounds.0 >= self.input_bounds.1 {
            return Err(Error::Config("input bounds must satisfy low < high".into()));
        }
        Ok(())
    }
}

/// Signed per-pixel relevance raster aligned with an input sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub relevance: Vec<f32>,
    pub method: String,
    pub target_class: u8,
    pub sample_id: String,
}

/// Propagate the method's backward signal through every layer and return
/// the input-layer signal (model-input shaped, batch preserved).
pub fn explain_signal(
    model: &NetworkModel,
    record: &ActivationRecord,
    method: &MethodSpec,
    target_class: u8,
    patterns: Option<&PatternSet>,
) -> Result<Tensor> {
    method.validate()?;
    let logits = record.logits();
    let k = model.logit_count();
    let target = target_class as usize;
    if target < 1 || target > k {
        return Err(Error::Config(format!("target class {target} outside 1..={k}")));
    }
    if method.kind.needs_patterns() && patterns.is_none() {
        return Err(Error::Unsupported(format!(
            "{} requires an estimated pattern set",
            method.kind.name()
        )));
    }

    let n = record.batch_len();
    let mut signal = Tensor::zeros(&[n, k]);
    for s in 0..n {
        let value = if method.kind.seeds_with_logit() {
            logits.data()[s * k + (target - 1)]
        } else {
            1.0
        };
        signal.data_mut()[s * k + (target - 1)] = value;
    }

    let first_linear = model
        .layers
        .iter()
        .position(|l| l.is_linear())
        .ok_or_else(|| Error::Unsupported("model has no linear layers".into()))?;

    let mut scratch = rules::scratch_for(model);
    for (i, layer) in model.layers.iter().enumerate().rev() {
        signal = match layer {
            Layer::Conv3x3 { .. } | Layer::Dense { .. } => rules::linear_rule(
                layer,
                record,
                i,
                &signal,
                method,
                patterns,
                i == first_linear,
                &mut scratch,
            )?,
            Layer::Relu => rules::relu_rule(method.kind, record.input_of(i), &signal),
            Layer::MaxPool2x2 => {
                let argmax = record.argmax_of(i).expect("pool recorded argmax");
                rules::pool_rule(&signal, argmax, record.input_of(i).dims())?
            }
            Layer::Flatten => signal.reshaped(record.input_of(i).dims())?,
        };
    }
    Ok(signal)
}

/// Explain a recorded batch of image samples; the input-layer signal is
/// summed over channels into one heatmap per sample.
pub fn explain_batch(
    model: &NetworkModel,
    record: &ActivationRecord,
    method: &MethodSpec,
    target_class: u8,
    patterns: Option<&PatternSet>,
    sample_ids: &[String],
) -> Result<Vec<Heatmap>> {
    let signal = explain_signal(model, record, method, target_class, patterns)?;
    let dims = signal.dims().to_vec();
    if dims.len() != 4 {
        return Err(Error::Unsupported(
            "heatmaps need an image-input model; use explain_signal for flat models".into(),
        ));
    }
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    if sample_ids.len() != n {
        return Err(Error::Shape(format!("{} sample ids for {n} samples", sample_ids.len())));
    }
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        let mut relevance = vec![0.0f32; h * w];
        for ci in 0..c {
            let plane = &signal.data()[(s * c + ci) * h * w..(s * c + ci + 1) * h * w];
            for (r, &v) in relevance.iter_mut().zip(plane) {
                *r += v;
            }
        }
        if !relevance.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("heatmap for sample {}", sample_ids[s])));
        }
        out.push(Heatmap {
            height: h,
            width: w,
            relevance,
            method: method.kind.name().to_string(),
            target_class,
            sample_id: sample_ids[s].clone(),
        });
    }
    Ok(out)
}

/// Single-sample convenience wrapper.
pub fn explain(
    model: &NetworkModel,
    record: &ActivationRecord,
    method: &MethodSpec,
    target_class: u8,
    patterns: Option<&PatternSet>,
    sample_id: &str,
) -> Result<Heatmap> {
    let mut maps = explain_batch(
        model,
        record,
        method,
        target_class,
        patterns,
        &[sample_id.to_string()],
    )?;
    Ok(maps.pop().expect("one sample in, one heatmap out"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub method: String,
    pub target_class: u8,
    pub sample_id: String,
    pub height: usize,
    pub width: usize,
}

/// Write `<stem>.ten1` plus a `<stem>.json` sidecar.
pub fn write_heatmap(dir: &std::path::Path, stem: &str, map: &Heatmap) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let tensor = Tensor::from_vec(&[map.height, map.width], map.relevance.clone())?;
    let ten_path = dir.join(format!("{stem}.ten1"));
    crate::tensor::write_tensor_file(&ten_path, &tensor)?;
    let sidecar = HeatmapSidecar {
        method: map.method.clone(),
        target_class: map.target_class,
        sample_id: map.sample_id.clone(),
        height: map.height,
        width: map.width,
    };
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(vec![ten_path, json_path])
}

pub fn read_heatmap(dir: &std::path::Path, stem: &str) -> Result<Heatmap> {
    let tensor = crate::tensor::read_tensor_file(&dir.join(format!("{stem}.ten1")))?;
    let text = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
    let sidecar: HeatmapSidecar = serde_json::from_str(&text)?;
    if tensor.dims() != [sidecar.height, sidecar.width] {
        return Err(Error::Format(format!("heatmap {stem}: tensor/sidecar shape mismatch")));
    }
    Ok(Heatmap {
        height: sidecar.height,
        width: sidecar.width,
        relevance: tensor.into_vec(),
        method: sidecar.method,
        target_class: sidecar.target_class,
        sample_id: sidecar.sample_id,
    })
}
