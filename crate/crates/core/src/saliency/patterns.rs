//! Pattern estimation for PatternNet / PatternAttribution.
//!
//! For each linear neuron with weights w the estimator computes, over
//! training inputs x and pre-activations y (conv neurons pool statistics
//! over all spatial positions, sharing weights):
//!
//!   c = E+[x y] - E+[x] E+[y],   a = c / (w^T c)
//!
//! where E+ averages over (sample, position) pairs with y > 0. A neuron
//! that never fires falls back to the same moments taken over all pairs,
//! with a warning. One streaming pass, f64 accumulators, chunk partials
//! merged in index order.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::layers::{dims2, dims4, im2col3x3};
use crate::netcore::{Layer, NetworkModel};
use crate::tensor::Tensor;

pub const PATTERNS_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct PatternSet {
    /// One pattern tensor per linear layer, aligned with `model.layers`.
    pub layer_patterns: Vec<Option<Tensor>>,
    pub warnings: Vec<String>,
}

/// Moment accumulators for one linear layer (O neurons, K kernel inputs).
#[derive(Debug, Clone)]
struct LayerAcc {
    o: usize,
    k: usize,
    pos_count: Vec<f64>,
    pos_sum_y: Vec<f64>,
    pos_sum_x: Vec<f64>,
    pos_sum_xy: Vec<f64>,
    all_count: f64,
    all_sum_y: Vec<f64>,
    all_sum_x: Vec<f64>,
    all_sum_xy: Vec<f64>,
}

impl LayerAcc {
    fn new(o: usize, k: usize) -> LayerAcc {
        LayerAcc {
            o,
            k,
            pos_count: vec![0.0; o],
            pos_sum_y: vec![0.0; o],
            pos_sum_x: vec![0.0; o * k],
            pos_sum_xy: vec![0.0; o * k],
            all_count: 0.0,
            all_sum_y: vec![0.0; o],
            all_sum_x: vec![0.0; k],
            all_sum_xy: vec![0.0; o * k],
        }
    }

    fn merge(&mut self, other: &LayerAcc) {
        for (a, b) in self.pos_count.iter_mut().zip(&other.pos_count) {
            *a += b;
        }
        for (a, b) in self.pos_sum_y.iter_mut().zip(&other.pos_sum_y) {
            *a += b;
        }
        for (a, b) in self.pos_sum_x.iter_mut().zip(&other.pos_sum_x) {
            *a += b;
        }
        for (a, b) in self.pos_sum_xy.iter_mut().zip(&other.pos_sum_xy) {
            *a += b;
        }
        self.all_count += other.all_count;
        for (a, b) in self.all_sum_y.iter_mut().zip(&other.all_sum_y) {
            *a += b;
        }
        for (a, b) in self.all_sum_x.iter_mut().zip(&other.all_sum_x) {
            *a += b;
        }
        for (a, b) in self.all_sum_xy.iter_mut().zip(&other.all_sum_xy) {
            *a += b;
        }
    }

    /// Accumulate one (x patch, y vector) pair set: patches (K x P) and
    /// pre-activations (O x P) for P positions.
    fn accumulate(&mut self, patches: &[f32], preacts: &[f32], p: usize) {
        let (o, k) = (self.o, self.k);
        self.all_count += p as f64;
        for kk in 0..k {
            let row = &patches[kk * p..(kk + 1) * p];
            let mut s = 0.0f64;
            for &v in row {
                s += v as f64;
            }
            self.all_sum_x[kk] += s;
        }
        for oc in 0..o {
            let yrow = &preacts[oc * p..(oc + 1) * p];
            let mut sum_y = 0.0f64;
            let mut pos_y = 0.0f64;
            let mut pos_n = 0.0f64;
            for &y in yrow {
                sum_y += y as f64;
                if y > 0.0 {
                    pos_y += y as f64;
                    pos_n += 1.0;
                }
            }
            self.all_sum_y[oc] += sum_y;
            self.pos_sum_y[oc] += pos_y;
            self.pos_count[oc] += pos_n;
            let all_xy = &mut self.all_sum_xy[oc * k..(oc + 1) * k];
            let pos_xy = &mut self.pos_sum_xy[oc * k..(oc + 1) * k];
            let pos_x = &mut self.pos_sum_x[oc * k..(oc + 1) * k];
            for kk in 0..k {
                let xrow = &patches[kk * p..(kk + 1) * p];
                let mut axy = 0.0f64;
                let mut pxy = 0.0f64;
                let mut px = 0.0f64;
                for (&x, &y) in xrow.iter().zip(yrow) {
                    let xy = x as f64 * y as f64;
                    axy += xy;
                    if y > 0.0 {
                        pxy += xy;
                        px += x as f64;
                    }
                }
                all_xy[kk] += axy;
                pos_xy[kk] += pxy;
                pos_x[kk] += px;
            }
        }
    }
}

/// Estimate patterns for every linear layer from the given training
/// images ((N,H,W) rasters or (N,F) feature rows). Deterministic for a
/// fixed model and split order.
pub fn estimate_patterns(model: &NetworkModel, images: &Tensor, chunk: usize) -> Result<PatternSet> {
    let n = images.dims()[0];
    if n == 0 {
        return Err(Error::Config("pattern estimation needs a nonempty split".into()));
    }
    let linear_dims: Vec<Option<(usize, usize)>> = model
        .layers
        .iter()
        .map(|l| {
            l.params().map(|(w, _)| match w.dims() {
                [o, c, _, _] => (*o, c * 9),
                [o, f] => (*o, *f),
                _ => unreachable!(),
            })
        })
        .collect();

    let indices: Vec<usize> = (0..n).collect();
    let chunks: Vec<&[usize]> = indices.chunks(chunk.max(1)).collect();
    let partials: Result<Vec<Vec<Option<LayerAcc>>>> = chunks
        .par_iter()
        .map(|chunk_indices| {
            let mut accs: Vec<Option<LayerAcc>> = linear_dims
                .iter()
                .map(|d| d.map(|(o, k)| LayerAcc::new(o, k)))
                .collect();
            let (batch, _) = gather(images, chunk_indices);
            let (_, record) = model.forward(&batch)?;
            let bn = chunk_indices.len();
            let mut col = Vec::new();
            for (li, layer) in model.layers.iter().enumerate() {
                let Some(acc) = accs[li].as_mut() else { continue };
                let input = record.input_of(li);
                let preact = record.output_of(li);
                match layer {
                    Layer::Conv3x3 { .. } => {
                        let [_, c, h, w] = dims4(input, "pattern conv input")?;
                        let p = h * w;
                        col.resize(c * 9 * p, 0.0);
                        for s in 0..bn {
                            im2col3x3(&input.data()[s * c * p..(s + 1) * c * p], c, h, w, &mut col);
                            let y = &preact.data()[s * acc.o * p..(s + 1) * acc.o * p];
                            acc.accumulate(&col, y, p);
                        }
                    }
                    Layer::Dense { .. } => {
                        let [_, f] = dims2(input, "pattern dense input")?;
                        for s in 0..bn {
                            let x = &input.data()[s * f..(s + 1) * f];
                            let y = &preact.data()[s * acc.o..(s + 1) * acc.o];
                            acc.accumulate(x, y, 1);
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Ok(accs)
        })
        .collect();
    let partials = partials?;

    let mut totals: Vec<Option<LayerAcc>> =
        linear_dims.iter().map(|d| d.map(|(o, k)| LayerAcc::new(o, k))).collect();
    for part in &partials {
        for (t, p) in totals.iter_mut().zip(part) {
            if let (Some(t), Some(p)) = (t.as_mut(), p.as_ref()) {
                t.merge(p);
            }
        }
    }

    let mut warnings = Vec::new();
    let mut layer_patterns = Vec::with_capacity(model.layers.len());
    for (li, layer) in model.layers.iter().enumerate() {
        let Some(acc) = totals[li].as_ref() else {
            layer_patterns.push(None);
            continue;
        };
        let (weights, _) = layer.params().unwrap();
        let (o, k) = (acc.o, acc.k);
        let mut pattern = vec![0.0f32; o * k];
        for oc in 0..o {
            let w_row: Vec<f64> =
                weights.data()[oc * k..(oc + 1) * k].iter().map(|&v| v as f64).collect();
            let c: Vec<f64> = if acc.pos_count[oc] > 0.0 {
                let np = acc.pos_count[oc];
                let ey = acc.pos_sum_y[oc] / np;
                (0..k)
                    .map(|kk| {
                        acc.pos_sum_xy[oc * k + kk] / np
                            - (acc.pos_sum_x[oc * k + kk] / np) * ey
                    })
                    .collect()
            } else {
                warnings.push(format!(
                    "layer {li} neuron {oc} never active; linear-regime estimator used"
                ));
                let na = acc.all_count;
                let ey = acc.all_sum_y[oc] / na;
                (0..k)
                    .map(|kk| {
                        acc.all_sum_xy[oc * k + kk] / na - (acc.all_sum_x[kk] / na) * ey
                    })
                    .collect()
            };
            let denom: f64 = w_row.iter().zip(&c).map(|(w, c)| w * c).sum();
            if denom.abs() > 1e-30 {
                for kk in 0..k {
                    pattern[oc * k + kk] = (c[kk] / denom) as f32;
                }
            } else {
                // degenerate covariance: fall back to w / (w^T w), which
                // still satisfies the w^T a = 1 normalization
                warnings.push(format!(
                    "layer {li} neuron {oc} has a degenerate covariance; using normalized weights"
                ));
                let ww: f64 = w_row.iter().map(|w| w * w).sum();
                for kk in 0..k {
                    pattern[oc * k + kk] = (w_row[kk] / ww) as f32;
                }
            }
        }
        layer_patterns.push(Some(Tensor::from_vec(weights.dims(), pattern)?));
    }
    Ok(PatternSet { layer_patterns, warnings })
}

fn gather(images: &Tensor, indices: &[usize]) -> (Tensor, Vec<usize>) {
    let dims = images.dims();
    let row: usize = dims[1..].iter().product();
    let mut data = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        data.extend_from_slice(&images.data()[i * row..(i + 1) * row]);
    }
    let batch_dims: Vec<usize> = if dims.len() == 3 {
        vec![indices.len(), 1, dims[1], dims[2]]
    } else {
        vec![indices.len(), dims[1]]
    };
    (Tensor::from_vec(&batch_dims, data).expect("gathered batch"), indices.to_vec())
}

#[derive(Debug, Serialize, Deserialize)]
struct PatternsHeader {
    format_version: u32,
    layer_indices: Vec<usize>,
}

pub fn save_patterns(set: &PatternSet, path: &Path) -> Result<()> {
    let layer_indices: Vec<usize> = set
        .layer_patterns
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|_| i))
        .collect();
    let header = PatternsHeader { format_version: PATTERNS_VERSION, layer_indices };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for p in set.layer_patterns.iter().flatten() {
        p.write_ten1(&mut w)?;
    }
    Ok(())
}

pub fn load_patterns(path: &Path, n_layers: usize) -> Result<PatternSet> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: PatternsHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("patterns header: {e}")))?;
    if header.format_version != PATTERNS_VERSION {
        return Err(Error::Format(format!(
            "patterns version {} not supported",
            header.format_version
        )));
    }
    let mut layer_patterns = vec![None; n_layers];
    for i in header.layer_indices {
        if i >= n_layers {
            return Err(Error::Format(format!("pattern layer index {i} out of range")));
        }
        layer_patterns[i] = Some(Tensor::read_ten1(&mut r)?);
    }
    Ok(PatternSet { layer_patterns, warnings: Vec::new() })
}
