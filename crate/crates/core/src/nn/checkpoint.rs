//! Weight checkpoints: a JSON manifest next to a little-endian `f64` blob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_FORMAT: &str = "voxseg-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: NetworkConfig,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
    pub len: usize,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_checkpoint(net: &Network, stem: &Path) -> Result<()> {
    let (manifest_path, blob_path) = paths(stem);
    let mut params = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, view) in net.params() {
        params.push(ParamEntry {
            name,
            shape: view.shape.to_vec(),
            offset,
            len: view.data.len(),
        });
        offset += view.data.len();
        for v in view.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        config: net.config().clone(),
        blob: blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string(),
        params,
    };
    write_atomic(&blob_path, &blob)?;
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    write_atomic(&manifest_path, &text)
}

/// Reads a checkpoint written by [`save_checkpoint`]; `path` may be the stem
/// or the manifest itself.
pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let (manifest_path, _) = paths(path);
    let fmt = |m: String| Error::Format {
        path: manifest_path.clone(),
        message: m,
    };
    let manifest: CheckpointManifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)
        .map_err(|e| fmt(format!("bad manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(fmt(format!("unknown format {:?}", manifest.format)));
    }
    let blob_path = manifest_path.with_file_name(&manifest.blob);
    let bytes = std::fs::read(&blob_path)?;
    let mut net = Network::build(manifest.config.clone())?;
    let expected: usize = net.param_count() * 8;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            path: blob_path,
            expected,
            found: bytes.len(),
        });
    }
    let layout: Vec<(String, Vec<usize>)> = net
        .params()
        .into_iter()
        .map(|(n, v)| (n, v.shape.to_vec()))
        .collect();
    if layout.len() != manifest.params.len() {
        return Err(fmt(format!(
            "{} parameter arrays listed, network has {}",
            manifest.params.len(),
            layout.len()
        )));
    }
    for ((name, shape), (entry, dst)) in layout
        .iter()
        .zip(manifest.params.iter().zip(net.params_mut()))
    {
        if &entry.name != name || &entry.shape != shape || entry.len != dst.len() {
            return Err(fmt(format!(
                "parameter {} {:?} does not match network layout {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let end = entry.offset + entry.len;
        if end * 8 > bytes.len() {
            return Err(fmt(format!("parameter {} runs past the blob", entry.name)));
        }
        for (k, v) in dst.iter_mut().enumerate() {
            let at = (entry.offset + k) * 8;
            *v = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("net");
        let net = Network::build(NetworkConfig { seed: 42, ..NetworkConfig::toy() }).unwrap();
        save_checkpoint(&net, &stem).unwrap();
        let back = load_checkpoint(&stem).unwrap();
        assert_eq!(back, net);
        for ((_, a), (_, b)) in net.params().iter().zip(back.params().iter()) {
            assert!(a.data.iter().zip(b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // the manifest path works too
        assert_eq!(load_checkpoint(&stem.with_extension("json")).unwrap(), net);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("net");
        let net = Network::build(NetworkConfig::toy()).unwrap();
        save_checkpoint(&net, &stem).unwrap();
        let blob = stem.with_extension("bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&stem), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn foreign_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("net");
        std::fs::write(stem.with_extension("json"), b"{\"format\": \"other\"}").unwrap();
        assert!(matches!(load_checkpoint(&stem), Err(Error::Format { .. })));
    }
}
