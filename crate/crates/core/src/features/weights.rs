//! Weights bundles in safetensors format.
//!
//! Convolution tensors use the sequential layer naming of common VGG
//! exports: `features.{i}.weight` (`[out, in, 3, 3]`) and
//! `features.{i}.bias` (`[out]`). Input normalization travels with the
//! weights as `normalization.mean` and `normalization.std` (three values
//! each, applied to `[0, 1]` RGB).

use std::collections::BTreeMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use super::network::{Architecture, ConvLayer};
use crate::error::{Error, Result};

pub const MEAN_TENSOR: &str = "normalization.mean";
pub const STD_TENSOR: &str = "normalization.std";

/// Normalization constants of the ImageNet-trained torchvision exports.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone)]
pub struct WeightsBundle {
    pub architecture: Architecture,
    pub layers: Vec<ConvLayer>,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tensor_f32(view: &TensorView<'_>, name: &str) -> Result<Vec<f32>> {
    if view.dtype() != Dtype::F32 {
        return Err(Error::InvalidWeights(format!(
            "{name} has dtype {:?}, expected F32",
            view.dtype()
        )));
    }
    Ok(view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn triple(st: &SafeTensors<'_>, name: &str) -> Result<Option<[f32; 3]>> {
    match st.tensor(name) {
        Ok(view) => {
            let v = tensor_f32(&view, name)?;
            if v.len() != 3 {
                return Err(Error::InvalidWeights(format!("{name} must hold 3 values")));
            }
            Ok(Some([v[0], v[1], v[2]]))
        }
        Err(_) => Ok(None),
    }
}

impl WeightsBundle {
    /// Decodes a bundle from raw safetensors bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::InvalidWeights(e.to_string()))?;
        let mut convs: BTreeMap<usize, (Option<Vec<usize>>, bool)> = BTreeMap::new();
        for name in st.names() {
            let Some(rest) = name.strip_prefix("features.") else { continue };
            let mut parts = rest.split('.');
            let (Some(idx), Some(kind), None) = (parts.next(), parts.next(), parts.next()) else {
                continue;
            };
            let Ok(idx) = idx.parse::<usize>() else { continue };
            let entry = convs.entry(idx).or_insert((None, false));
            let view = st.tensor(name).map_err(|e| Error::InvalidWeights(e.to_string()))?;
            match kind {
                "weight" => entry.0 = Some(view.shape().to_vec()),
                "bias" => entry.1 = true,
                _ => {}
            }
        }
        let mut seq = Vec::new();
        for (idx, (shape, has_bias)) in &convs {
            let shape = shape
                .as_ref()
                .ok_or_else(|| Error::InvalidWeights(format!("features.{idx} lacks a weight")))?;
            if !has_bias {
                return Err(Error::InvalidWeights(format!("features.{idx} lacks a bias")));
            }
            if shape.len() != 4 || shape[2] != 3 || shape[3] != 3 {
                return Err(Error::InvalidWeights(format!(
                    "features.{idx}.weight has shape {shape:?}, expected [out, in, 3, 3]"
                )));
            }
            seq.push((*idx, shape[0]));
        }
        let architecture = Architecture::from_sequential(&seq)?;
        let mut layers = Vec::with_capacity(seq.len());
        let mut in_c = 3;
        for (idx, out_c) in &seq {
            let wname = format!("features.{idx}.weight");
            let bname = format!("features.{idx}.bias");
            let wv = st.tensor(&wname).map_err(|e| Error::InvalidWeights(e.to_string()))?;
            if wv.shape()[1] != in_c {
                return Err(Error::InvalidWeights(format!(
                    "{wname} expects {} input channels, previous layer gives {in_c}",
                    wv.shape()[1]
                )));
            }
            let bv = st.tensor(&bname).map_err(|e| Error::InvalidWeights(e.to_string()))?;
            layers.push(ConvLayer::new(
                in_c,
                *out_c,
                tensor_f32(&wv, &wname)?,
                tensor_f32(&bv, &bname)?,
            )?);
            in_c = *out_c;
        }
        let mean = triple(&st, MEAN_TENSOR)?
            .ok_or_else(|| Error::InvalidWeights(format!("missing {MEAN_TENSOR}")))?;
        let std = triple(&st, STD_TENSOR)?
            .ok_or_else(|| Error::InvalidWeights(format!("missing {STD_TENSOR}")))?;
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidWeights("normalization std must be positive".into()));
        }
        Ok(Self {
            architecture,
            layers,
            mean,
            std,
        })
    }

    /// Reads a bundle, verifying its SHA-256 when `expected_sha256` is given.
    pub fn load(path: &Path, expected_sha256: Option<&str>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingWeights {
                path: path.to_path_buf(),
                checksum: expected_sha256.unwrap_or("<unpinned>").to_string(),
            });
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if let Some(expected) = expected_sha256 {
            let found = sha256_hex(&bytes);
            if !found.eq_ignore_ascii_case(expected) {
                return Err(Error::ChecksumMismatch {
                    path: path.to_path_buf(),
                    expected: expected.to_string(),
                    found,
                });
            }
        }
        Self::from_bytes(&bytes)
    }

    /// Serializes to safetensors bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let seq = self.architecture.sequential_indices();
        let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (layer, idx) in self.layers.iter().zip(seq) {
            owned.push((
                format!("features.{idx}.weight"),
                vec![layer.out_channels, layer.in_channels, 3, 3],
                f32_bytes(&layer.weight),
            ));
            owned.push((format!("features.{idx}.bias"), vec![layer.out_channels], f32_bytes(&layer.bias)));
        }
        owned.push((MEAN_TENSOR.into(), vec![3], f32_bytes(&self.mean)));
        owned.push((STD_TENSOR.into(), vec![3], f32_bytes(&self.std)));
        let views = owned
            .iter()
            .map(|(n, shape, data)| {
                TensorView::new(Dtype::F32, shape.clone(), data)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::InvalidWeights(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, None).map_err(|e| Error::InvalidWeights(e.to_string()))
    }
}

/// Appends normalization tensors to a safetensors file that lacks them.
/// Returns the new bytes, or the input unchanged when both are present.
pub fn with_normalization(bytes: &[u8], mean: [f32; 3], std: [f32; 3]) -> Result<Vec<u8>> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::InvalidWeights(e.to_string()))?;
    if triple(&st, MEAN_TENSOR)?.is_some() && triple(&st, STD_TENSOR)?.is_some() {
        return Ok(bytes.to_vec());
    }
    let mut views: Vec<(String, TensorView<'_>)> = st
        .tensors()
        .into_iter()
        .filter(|(n, _)| n != MEAN_TENSOR && n != STD_TENSOR)
        .collect();
    let (mb, sb) = (f32_bytes(&mean), f32_bytes(&std));
    for (name, data) in [(MEAN_TENSOR, &mb), (STD_TENSOR, &sb)] {
        let view = TensorView::new(Dtype::F32, vec![3], data).map_err(|e| Error::InvalidWeights(e.to_string()))?;
        views.push((name.into(), view));
    }
    safetensors::serialize(views, None).map_err(|e| Error::InvalidWeights(e.to_string()))
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}
