//! Binary weight files.
//!
//! Layout: the magic `LBW1`, a little-endian `u32` header length, a JSON
//! header (`tag`, tensor names and shapes, SHA-256 of the payload), then
//! every tensor as little-endian `f32` in header order.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::Network;
use crate::error::{io_at, Error, Result};
use crate::seeding::sha256_hex;

const MAGIC: &[u8; 4] = b"LBW1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tag: String,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

#[derive(Debug, Clone)]
pub struct WeightFile {
    pub tag: String,
    pub tensors: Vec<(TensorEntry, Vec<f32>)>,
}

impl WeightFile {
    pub fn from_network(net: &Network, tag: &str) -> Result<Self> {
        let mut tensors = Vec::new();
        for (name, p) in net.params() {
            if !p.is_allocated() {
                return Err(Error::BadWeights(format!("{name} is not initialized")));
            }
            tensors.push((
                TensorEntry {
                    name,
                    shape: p.shape.clone(),
                },
                p.value.clone(),
            ));
        }
        Ok(WeightFile {
            tag: tag.to_string(),
            tensors,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let count: usize = self.tensors.iter().map(|(_, v)| v.len()).sum();
        let mut payload = Vec::with_capacity(count * 4);
        for (_, values) in &self.tensors {
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            tag: self.tag.clone(),
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
            payload_sha256: sha256_hex(&payload),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::BadWeights(format!("{}: {m}", origin.display()));
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("not a weight file"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let payload = &bytes[8 + hlen..];
        if sha256_hex(payload) != header.payload_sha256 {
            return Err(Error::ChecksumMismatch(origin.to_path_buf()));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut off = 0usize;
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = payload.get(off..off + 4 * n).ok_or_else(|| bad("payload shorter than header"))?;
            off += 4 * n;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((entry, values));
        }
        if off != payload.len() {
            return Err(bad("payload longer than header"));
        }
        Ok(WeightFile { tag: header.tag, tensors })
    }

    /// Copies every tensor into the matching parameter of `net`. Every
    /// parameter of `net` must be present with the same shape.
    pub fn apply(&self, net: &mut Network) -> Result<()> {
        let by_name: HashMap<&str, &(TensorEntry, Vec<f32>)> =
            self.tensors.iter().map(|t| (t.0.name.as_str(), t)).collect();
        for (name, p) in net.params_mut() {
            let (entry, values) = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::BadWeights(format!("missing tensor {name}")))?;
            if entry.shape != p.shape {
                return Err(Error::BadWeights(format!(
                    "{name}: file shape {:?}, network shape {:?}",
                    entry.shape, p.shape
                )));
            }
            p.value = values.clone();
            p.grad = Vec::new();
        }
        Ok(())
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("weights");
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_at(path, e));
    }
    Ok(())
}

pub fn save_weights(path: &Path, net: &Network, tag: &str) -> Result<()> {
    write_atomic(path, &WeightFile::from_network(net, tag)?.encode())
}

pub fn read_weights(path: &Path) -> Result<WeightFile> {
    let bytes = fs::read(path).map_err(|e| io_at(path, e))?;
    WeightFile::decode(&bytes, path)
}
