//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"STPPCKPT"            8-byte magic
//! version: u32           currently 1
//! manifest_len: u32      byte length of the manifest
//! manifest: [u8]         UTF-8 JSON: {"params": [names...], "meta": {...}}
//! tensors                one tensor record per name, in manifest order
//! ```
//!
//! Each tensor record is `rank:u32, extents:u32*, data:f64*`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"STPPCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    params: Vec<String>,
    meta: serde_json::Value,
}

/// Parameters plus free-form metadata (model variant, configuration).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(w: &mut W, params: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let manifest = Manifest {
        params: params.names().to_vec(),
        meta: meta.clone(),
    };
    let bytes = serde_json::to_vec(&manifest)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    for t in params.tensors() {
        t.write_to(w)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::input("not a checkpoint file (bad magic)"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::input(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut word)?;
    let mut bytes = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut bytes)?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    let mut params = ParamStore::new();
    for name in manifest.params {
        params.add(name, Tensor::read_from(r)?);
    }
    Ok(Checkpoint {
        params,
        meta: manifest.meta,
    })
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_and_values() {
        let mut p = ParamStore::new();
        p.add("a.kernel", Tensor::new(vec![2, 1], vec![0.25, -3.0]).unwrap());
        p.add("a.bias", Tensor::scalar(1.0));
        let meta = serde_json::json!({"variant": "sync"});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, &meta).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.meta, meta);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(read_checkpoint(&mut &b"NOTACKPT\x01\0\0\0"[..]).is_err());
    }
}
