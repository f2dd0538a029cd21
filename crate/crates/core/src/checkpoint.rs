//! Checkpoint container: one binary file holding named f64 parameter arrays
//! plus the full configuration as JSON.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8    magic "DVTCKPT1"
//! bytes 8..16   header length (u64, little-endian)
//! then          header JSON (UTF-8)
//! then          parameter data: f64 little-endian, row-major,
//!               in the order listed by the header
//! ```
//!
//! The header is `{"kind": ..., "config": ..., "params": [{"name", "rows",
//! "cols"}, ...]}`. `kind` distinguishes stage-1 generator checkpoints from
//! prior checkpoints; `config` round-trips the serialized configuration.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{DvtError, Result};
use crate::params::ParamStore;

const MAGIC: &[u8; 8] = b"DVTCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    params: Vec<ParamMeta>,
}

/// Raw contents of a checkpoint file.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: Vec<(String, Array2<f64>)>,
}

pub fn save(path: &Path, kind: &str, config: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let metas: Vec<ParamMeta> = store
        .iter()
        .map(|(name, v)| ParamMeta { name: name.to_string(), rows: v.nrows(), cols: v.ncols() })
        .collect();
    let header = Header { kind: kind.to_string(), config: config.clone(), params: metas };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for (_, v) in store.iter() {
        for &x in v.as_standard_layout().as_slice().expect("standard layout") {
            f.write_all(&x.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(
        std::fs::File::open(path)
            .map_err(|e| DvtError::Checkpoint(format!("cannot open {}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|_| bad(path, "file too short"))?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic (not a checkpoint file)"));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(|_| bad(path, "truncated header length"))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes).map_err(|_| bad(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| bad(path, &format!("bad header JSON: {e}")))?;
    let mut params = Vec::with_capacity(header.params.len());
    for meta in &header.params {
        let n = meta.rows * meta.cols;
        let mut buf = vec![0u8; n * 8];
        f.read_exact(&mut buf)
            .map_err(|_| bad(path, &format!("truncated data for parameter {}", meta.name)))?;
        let data: Vec<f64> =
            buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let arr = Array2::from_shape_vec((meta.rows, meta.cols), data)
            .map_err(|e| bad(path, &format!("bad shape for {}: {e}", meta.name)))?;
        params.push((meta.name.clone(), arr));
    }
    Ok(Checkpoint { kind: header.kind, config: header.config, params })
}

/// Overwrite every parameter of `store` from the checkpoint. Fails if any
/// parameter is missing or has a different shape (config/architecture
/// mismatch), or if the checkpoint carries unknown parameters.
pub fn restore_into(ckpt: &Checkpoint, store: &mut ParamStore) -> Result<()> {
    if ckpt.params.len() != store.len() {
        return Err(DvtError::Checkpoint(format!(
            "checkpoint has {} parameters but the model has {}",
            ckpt.params.len(),
            store.len()
        )));
    }
    for (name, value) in &ckpt.params {
        let pid = store.id_of(name).ok_or_else(|| {
            DvtError::Checkpoint(format!("checkpoint parameter {name} not present in the model"))
        })?;
        if store.value(pid).dim() != value.dim() {
            return Err(DvtError::Checkpoint(format!(
                "parameter {name} has shape {:?} in the checkpoint but {:?} in the model",
                value.dim(),
                store.value(pid).dim()
            )));
        }
        store.set(pid, value.clone());
    }
    Ok(())
}

fn bad(path: &Path, what: &str) -> DvtError {
    DvtError::Checkpoint(format!("{}: {what}", path.display()))
}
