//! Checkpoints: a JSON manifest next to a blob of little-endian `f32`s.
//!
//! ```json
//! {
//!   "format": "textstyle-network",
//!   "version": 1,
//!   "network": { "base_width": 8, "...": "..." },
//!   "extractor": null,
//!   "metadata": {},
//!   "blob": "model.bin",
//!   "blob_bytes": 12345,
//!   "blob_sha256": "…",
//!   "params": [ { "name": "in.weight", "shape": [8, 3, 9, 9], "offset": 0, "length": 648 } ]
//! }
//! ```
//!
//! `offset` is in bytes from the start of the blob, `length` in values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::perceptual::{ExtractorConfig, FeatureExtractor};
use crate::style_net::{NetworkConfig, Param, StyleNetwork};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const NETWORK_FORMAT: &str = "textstyle-network";
pub const EXTRACTOR_FORMAT: &str = "textstyle-extractor";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
    #[serde(default)]
    pub extractor: Option<ExtractorConfig>,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub blob: String,
    pub blob_bytes: usize,
    pub blob_sha256: String,
    pub params: Vec<ParamEntry>,
}

/// A loaded network together with the manifest fields around it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: StyleNetwork,
    pub extractor: Option<ExtractorConfig>,
    pub metadata: serde_json::Value,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn write_tensors<'a>(
    path: &Path,
    format: &str,
    tensors: impl Iterator<Item = (&'a str, &'a [usize], Vec<f32>)>,
    network: Option<NetworkConfig>,
    extractor: Option<ExtractorConfig>,
    metadata: serde_json::Value,
) -> Result<()> {
    let mut blob = Vec::new();
    let mut params = Vec::new();
    for (name, shape, data) in tensors {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: blob.len(),
            length: data.len(),
        });
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bpath = blob_path(path);
    let manifest = CheckpointManifest {
        format: format.to_string(),
        version: CHECKPOINT_VERSION,
        network,
        extractor,
        metadata,
        blob: bpath
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("cannot derive a blob name from {}", path.display())))?
            .to_string(),
        blob_bytes: blob.len(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        params,
    };
    std::fs::write(&bpath, &blob).map_err(|e| Error::io(&bpath, e))?;
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads and checks the manifest and blob; returns each tensor in table order.
fn read_tensors(path: &Path, format: &str) -> Result<(CheckpointManifest, Vec<(ParamEntry, Vec<f32>)>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let found_format = raw.get("format").and_then(|v| v.as_str());
    if found_format != Some(format) {
        return Err(Error::Incompatible(format!(
            "{} has format {found_format:?}, expected {format:?}",
            path.display()
        )));
    }
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        other => {
            return Err(Error::Incompatible(format!(
                "{} has version {other:?}, this build reads version {CHECKPOINT_VERSION}",
                path.display()
            )))
        }
    }
    let manifest: CheckpointManifest = serde_json::from_value(raw).map_err(|e| Error::json(path, e))?;

    let bpath = path.parent().unwrap_or(Path::new("")).join(&manifest.blob);
    let blob = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Integrity(format!(
            "{} holds {} bytes, manifest declares {}",
            bpath.display(),
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let digest = hex::encode(Sha256::digest(&blob));
    if !digest.eq_ignore_ascii_case(&manifest.blob_sha256) {
        return Err(Error::Integrity(format!("{} checksum mismatch", bpath.display())));
    }
    let mut out = Vec::with_capacity(manifest.params.len());
    for entry in &manifest.params {
        if entry.shape.iter().product::<usize>() != entry.length {
            return Err(Error::Integrity(format!(
                "{} declares shape {:?} but {} values",
                entry.name, entry.shape, entry.length
            )));
        }
        let end = entry
            .length
            .checked_mul(4)
            .and_then(|n| n.checked_add(entry.offset))
            .filter(|&end| end <= blob.len())
            .ok_or_else(|| Error::Integrity(format!("{} lies outside the blob", entry.name)))?;
        let data = blob[entry.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((entry.clone(), data));
    }
    Ok((manifest, out))
}

pub fn save_checkpoint(net: &StyleNetwork, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint_with(net, path, None, serde_json::Value::Object(Default::default()))
}

/// Saves with an extractor config and free-form training metadata.
pub fn save_checkpoint_with(
    net: &StyleNetwork,
    path: impl AsRef<Path>,
    extractor: Option<&ExtractorConfig>,
    metadata: serde_json::Value,
) -> Result<()> {
    let params = net.params();
    write_tensors(
        path.as_ref(),
        NETWORK_FORMAT,
        params.iter().map(|p| (p.name.as_str(), p.shape.as_slice(), p.data.clone())),
        Some(net.config().clone()),
        extractor.cloned(),
        metadata,
    )
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<StyleNetwork> {
    load_checkpoint_full(path).map(|c| c.network)
}

pub fn load_checkpoint_full(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let (manifest, tensors) = read_tensors(path, NETWORK_FORMAT)?;
    let config = manifest
        .network
        .ok_or_else(|| Error::Incompatible(format!("{} has no network config", path.display())))?;
    let params = tensors
        .into_iter()
        .map(|(e, data)| Param::new(e.name, e.shape, data))
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        network: StyleNetwork::from_params(config, params)?,
        extractor: manifest.extractor,
        metadata: manifest.metadata,
    })
}

/// Stores extractor kernels and biases, e.g. weights imported from elsewhere.
pub fn save_extractor(fx: &FeatureExtractor, path: impl AsRef<Path>) -> Result<()> {
    let names: Vec<String> = (0..fx.stages())
        .flat_map(|i| [format!("stage{i}.weight"), format!("stage{i}.bias")])
        .collect();
    let tensors: Vec<&Tensor> = fx.weights().iter().zip(fx.biases()).flat_map(|(w, b)| [w, b]).collect();
    write_tensors(
        path.as_ref(),
        EXTRACTOR_FORMAT,
        names
            .iter()
            .zip(tensors)
            .map(|(n, t)| (n.as_str(), t.shape(), t.data().iter().map(|&v| v as f32).collect())),
        None,
        Some(fx.config().clone()),
        serde_json::Value::Object(Default::default()),
    )
}

pub fn load_extractor(path: impl AsRef<Path>) -> Result<FeatureExtractor> {
    let path = path.as_ref();
    let (manifest, tensors) = read_tensors(path, EXTRACTOR_FORMAT)?;
    let config = manifest
        .extractor
        .ok_or_else(|| Error::Incompatible(format!("{} has no extractor config", path.display())))?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (i, (e, data)) in tensors.into_iter().enumerate() {
        let t = Tensor::new(e.shape, data.into_iter().map(f64::from).collect())?;
        if i % 2 == 0 {
            weights.push(t);
        } else {
            biases.push(t);
        }
    }
    FeatureExtractor::from_weights(config, weights, biases)
}
