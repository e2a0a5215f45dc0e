//! Model files: a JSON manifest (`model.json`) describing the layer list,
//! parameter shapes and blob offsets, plus a raw blob (`model.bin`) of
//! little-endian `f32` values, row-major, in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Layer, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value of the manifest's `format` field.
pub const MODEL_FORMAT: &str = "blrp-model/v1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    input_shape: Vec<usize>,
    class_count: usize,
    blob: String,
    blob_floats: usize,
    layers: Vec<serde_json::Value>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
struct ParamEntry {
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerEntry {
    Dense {
        out_features: usize,
        weight: ParamEntry,
        bias: ParamEntry,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: ParamEntry,
        bias: ParamEntry,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d { kernel: usize, stride: usize },
    Dropout { rate: f32 },
    Flatten,
}

/// Path of the blob that accompanies a manifest: same stem, `.bin`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (the manifest) and its sibling `.bin` blob.
pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let blob_file = blob_path(path);
    let mut blob: Vec<f32> = Vec::with_capacity(net.param_count());
    let param = |t: &Tensor, blob: &mut Vec<f32>| {
        let entry = ParamEntry {
            shape: t.shape().to_vec(),
            offset: blob.len(),
        };
        blob.extend_from_slice(t.data());
        entry
    };
    let layers = net
        .layers()
        .iter()
        .map(|l| {
            let entry = match l {
                Layer::Dense { weight, bias } => LayerEntry::Dense {
                    out_features: weight.shape()[0],
                    weight: param(weight, &mut blob),
                    bias: param(bias, &mut blob),
                },
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => LayerEntry::Conv2d {
                    out_channels: weight.shape()[0],
                    kernel: weight.shape()[2],
                    stride: *stride,
                    padding: *padding,
                    weight: param(weight, &mut blob),
                    bias: param(bias, &mut blob),
                },
                Layer::Relu => LayerEntry::Relu,
                Layer::MaxPool2d { kernel, stride } => LayerEntry::MaxPool2d {
                    kernel: *kernel,
                    stride: *stride,
                },
                Layer::Dropout { rate } => LayerEntry::Dropout { rate: *rate },
                Layer::Flatten => LayerEntry::Flatten,
            };
            serde_json::to_value(entry).expect("layer entry serializes")
        })
        .collect();
    let manifest = Manifest {
        format: MODEL_FORMAT.to_string(),
        dtype: "f32le".to_string(),
        input_shape: net.input_shape().to_vec(),
        class_count: net.class_count(),
        blob: blob_file
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_floats: blob.len(),
        layers,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = blob.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&blob_file, bytes).map_err(|e| Error::io(&blob_file, e))?;
    Ok(())
}

/// Reads a manifest and its blob back into a network.
pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::format(
            "format",
            format!("expected {MODEL_FORMAT:?}, found {:?}", manifest.format),
        ));
    }
    if manifest.dtype != "f32le" {
        return Err(Error::format(
            "dtype",
            format!("unsupported dtype {:?}", manifest.dtype),
        ));
    }
    let blob_file = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            "blob",
            format!("{} bytes is not a whole number of f32 values", bytes.len()),
        ));
    }
    let blob: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if blob.len() != manifest.blob_floats {
        return Err(Error::format(
            "blob_floats",
            format!(
                "manifest declares {} floats, blob holds {}",
                manifest.blob_floats,
                blob.len()
            ),
        ));
    }

    let mut shape = manifest.input_shape.clone();
    let mut layers = Vec::with_capacity(manifest.layers.len());
    let mut expected_offset = 0usize;
    for (i, raw) in manifest.layers.into_iter().enumerate() {
        let field = format!("layers[{i}]");
        let entry: LayerEntry = serde_json::from_value(raw)
            .map_err(|e| Error::format(field.clone(), e.to_string()))?;
        let mut take = |name: &str, p: &ParamEntry, want: Vec<usize>| -> Result<Tensor> {
            let f = format!("{field}.{name}");
            if p.shape != want {
                return Err(Error::format(
                    f,
                    format!("shape {:?}, expected {want:?}", p.shape),
                ));
            }
            if p.offset != expected_offset {
                return Err(Error::format(
                    f,
                    format!("offset {}, expected {expected_offset}", p.offset),
                ));
            }
            let n: usize = want.iter().product();
            let end = p.offset + n;
            if end > blob.len() {
                return Err(Error::format(
                    f,
                    format!(
                        "size mismatch: needs floats {}..{end}, blob holds {}",
                        p.offset,
                        blob.len()
                    ),
                ));
            }
            expected_offset = end;
            Tensor::new(want, blob[p.offset..end].to_vec())
        };
        let layer = match entry {
            LayerEntry::Dense {
                out_features,
                weight,
                bias,
            } => {
                let fan_in: usize = shape.iter().product();
                Layer::Dense {
                    weight: take("weight", &weight, vec![out_features, fan_in])?,
                    bias: take("bias", &bias, vec![out_features])?,
                }
            }
            LayerEntry::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                weight,
                bias,
            } => {
                let c = *shape.first().unwrap_or(&0);
                Layer::Conv2d {
                    weight: take("weight", &weight, vec![out_channels, c, kernel, kernel])?,
                    bias: take("bias", &bias, vec![out_channels])?,
                    stride,
                    padding,
                }
            }
            LayerEntry::Relu => Layer::Relu,
            LayerEntry::MaxPool2d { kernel, stride } => Layer::MaxPool2d { kernel, stride },
            LayerEntry::Dropout { rate } => Layer::Dropout { rate },
            LayerEntry::Flatten => Layer::Flatten,
        };
        shape = layer
            .output_shape(i, &shape)
            .map_err(|e| Error::format(field.clone(), e.to_string()))?;
        layers.push(layer);
    }
    if expected_offset != blob.len() {
        return Err(Error::format(
            "blob",
            format!(
                "size mismatch: layers use {expected_offset} floats, blob holds {}",
                blob.len()
            ),
        ));
    }
    let net = Network::new(manifest.input_shape, layers)?;
    if net.class_count() != manifest.class_count {
        return Err(Error::format(
            "class_count",
            format!(
                "manifest says {}, layers produce {}",
                manifest.class_count,
                net.class_count()
            ),
        ));
    }
    Ok(net)
}
