//! Model checkpoints: one-line JSON header describing the architecture,
//! followed by concatenated TEN1 weight tensors in layer order (weights
//! then bias per parameterized layer).

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{InputShape, Layer, ModelMeta, NetworkModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    input_shape: InputShape,
    layers: Vec<LayerSpec>,
    meta: ModelMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerSpec {
    Conv3x3 { out_channels: usize, in_channels: usize },
    Relu,
    Maxpool2x2,
    Flatten,
    Dense { out_features: usize, in_features: usize },
}

pub fn save_model(model: &NetworkModel, path: &Path) -> Result<()> {
    let layers = model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv3x3 { weights, .. } => LayerSpec::Conv3x3 {
                out_channels: weights.dims()[0],
                in_channels: weights.dims()[1],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2x2 => LayerSpec::Maxpool2x2,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense { weights, .. } => LayerSpec::Dense {
                out_features: weights.dims()[0],
                in_features: weights.dims()[1],
            },
        })
        .collect();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        input_shape: model.input_shape,
        layers,
        meta: model.meta.clone(),
    };
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for layer in &model.layers {
        if let Some((weights, bias)) = layer.params() {
            weights.write_ten1(&mut w)?;
            bias.write_ten1(&mut w)?;
        }
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} not supported",
            header.format_version
        )));
    }
    let mut layers = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        let layer = match *spec {
            LayerSpec::Conv3x3 { out_channels, in_channels } => {
                let weights = Tensor::read_ten1(&mut r)?;
                let bias = Tensor::read_ten1(&mut r)?;
                if weights.dims() != [out_channels, in_channels, 3, 3]
                    || bias.dims() != [out_channels]
                {
                    return Err(Error::Format("conv tensor dims disagree with header".into()));
                }
                Layer::Conv3x3 { weights, bias }
            }
            LayerSpec::Dense { out_features, in_features } => {
                let weights = Tensor::read_ten1(&mut r)?;
                let bias = Tensor::read_ten1(&mut r)?;
                if weights.dims() != [out_features, in_features] || bias.dims() != [out_features]
                {
                    return Err(Error::Format("dense tensor dims disagree with header".into()));
                }
                Layer::Dense { weights, bias }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Maxpool2x2 => Layer::MaxPool2x2,
            LayerSpec::Flatten => Layer::Flatten,
        };
        layers.push(layer);
    }
    Ok(NetworkModel { layers, input_shape: header.input_shape, meta: header.meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = NetworkModel::conv_classifier((16, 16), &[4, 8], 16, 2, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.layers.len(), model.layers.len());
        for (a, b) in model.layers.iter().zip(&back.layers) {
            match (a.params(), b.params()) {
                (Some((wa, ba)), Some((wb, bb))) => {
                    assert_eq!(wa.data(), wb.data());
                    assert_eq!(ba.data(), bb.data());
                }
                (None, None) => {}
                _ => panic!("layer kind mismatch"),
            }
        }
        assert_eq!(back.input_shape, model.input_shape);
        assert_eq!(back.meta.seed, 99);
    }

    #[test]
    fn truncated_checkpoint_errors() {
        let model = NetworkModel::conv_classifier((16, 16), &[4], 8, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(load_model(&path).is_err());
    }
}
