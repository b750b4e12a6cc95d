use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::fit::ModelParams;
use super::normalize::Normalizer;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, Network};
use crate::taxonomy::Taxonomy;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT: &str = "hierintent-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weight blob.
    pub offset: usize,
}

/// Text half of a checkpoint; the weights live in a little-endian `f32` blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub taxonomy_hash: String,
    pub arch: ArchConfig,
    pub normalizer: Normalizer,
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: usize,
    pub blob_sha256: String,
    pub config: TrainConfig,
}

/// Writes `manifest.json` and `weights.bin` into `dir`, creating it if needed.
pub fn save_checkpoint(params: &ModelParams, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if !params.net.is_finite() {
        return Err(Error::Numeric("refusing to save non-finite weights".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(params.net.param_count() * 4);
    let mut tensors = Vec::new();
    for t in params.net.tensors() {
        tensors.push(TensorEntry {
            name: t.name,
            shape: t.shape,
            offset: blob.len(),
        });
        for x in t.data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        taxonomy_hash: params.taxonomy_hash.clone(),
        arch: params.net.arch.clone(),
        normalizer: params.normalizer.clone(),
        tensors,
        blob_bytes: blob.len(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        config: params.config.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mpath = dir.join(MANIFEST_FILE);
    std::fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    std::fs::write(&wpath, &blob).map_err(|e| Error::io(&wpath, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let mpath = dir.as_ref().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", mpath.display())))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported checkpoint format `{}`", manifest.format)));
    }
    Ok(manifest)
}

/// Loads a checkpoint built for `tax`; any other taxonomy is refused.
pub fn load_checkpoint(dir: impl AsRef<Path>, tax: &Taxonomy) -> Result<ModelParams> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let found = tax.content_hash();
    if manifest.taxonomy_hash != found {
        return Err(Error::TaxonomyMismatch {
            expected: manifest.taxonomy_hash,
            found,
        });
    }
    let arch = &manifest.arch;
    arch.validate()?;
    if (arch.n_tasks, arch.n_actions) != (tax.n_tasks(), tax.n_actions()) {
        return Err(Error::Checkpoint("architecture output sizes disagree with the taxonomy".into()));
    }
    if manifest.normalizer.n_features() != arch.input_dim || manifest.normalizer.std.len() != arch.input_dim {
        return Err(Error::Checkpoint("normalizer width disagrees with the input dimension".into()));
    }

    let wpath = dir.join(WEIGHTS_FILE);
    let blob = std::fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "weight blob has {} bytes, manifest declares {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(Error::Checkpoint("weight blob checksum mismatch".into()));
    }

    let mut net = Network::<f32>::zeros(arch.clone());
    let expected: Vec<(String, Vec<usize>)> = net.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, architecture has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for ((dst, (name, shape)), entry) in net.tensors_mut().into_iter().zip(&expected).zip(&manifest.tensors) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                entry.name, entry.shape
            )));
        }
        let end = entry.offset + dst.len() * 4;
        let bytes = blob
            .get(entry.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` runs past the end of the blob")))?;
        for (d, b) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
            *d = f32::from_le_bytes(b.try_into().expect("4-byte chunk"));
        }
    }
    if !net.is_finite() {
        return Err(Error::Checkpoint("checkpoint holds non-finite weights".into()));
    }
    Ok(ModelParams {
        net,
        normalizer: manifest.normalizer,
        taxonomy_hash: manifest.taxonomy_hash,
        config: manifest.config,
    })
}
