//! Checkpoints: a JSON index (name -> offset/shape), one BDTF f32 payload
//! holding every parameter back to back, and the model config JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{Model, ModelConfig};
use crate::nn::Parameterized;

pub const CONFIG_FILE: &str = "model.json";
pub const INDEX_FILE: &str = "params.index.json";
pub const PAYLOAD_FILE: &str = "params.bdtf";

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    /// Offset into the payload, in f32 elements.
    offset: u64,
    rows: u64,
    cols: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    version: u32,
    entries: Vec<IndexEntry>,
}

pub fn save_checkpoint(dir: impl AsRef<Path>, model: &Model) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let mut entries = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    model.visit_params(&mut |p| {
        entries.push(IndexEntry {
            name: p.name().to_string(),
            offset: payload.len() as u64,
            rows: p.value().rows() as u64,
            cols: p.value().cols() as u64,
        });
        payload.extend(p.value().data().iter().map(|&v| v as f32));
    });

    let index = Index {
        version: 1,
        entries,
    };
    let index_path = dir.join(INDEX_FILE);
    std::fs::write(&index_path, serde_json::to_vec_pretty(&index)?)
        .map_err(|e| Error::io(index_path.display().to_string(), e))?;

    crate::io::save_f32(dir.join(PAYLOAD_FILE), &[payload.len() as u64], &payload)?;

    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, serde_json::to_vec_pretty(model.config())?)
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let config_path = dir.join(CONFIG_FILE);
    let config_bytes = std::fs::read(&config_path)
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;
    let cfg: ModelConfig = serde_json::from_slice(&config_bytes)?;

    let index_path = dir.join(INDEX_FILE);
    let index_bytes =
        std::fs::read(&index_path).map_err(|e| Error::io(index_path.display().to_string(), e))?;
    let index: Index = serde_json::from_slice(&index_bytes)?;
    if index.version != 1 {
        return Err(Error::format(
            index_path.display().to_string(),
            "version",
            format!("expected 1, found {}", index.version),
        ));
    }

    let (dims, payload) = crate::io::load_f32(dir.join(PAYLOAD_FILE))?;
    if dims.len() != 1 {
        return Err(Error::format(
            dir.join(PAYLOAD_FILE).display().to_string(),
            "dims",
            "payload must be 1-dimensional",
        ));
    }

    // Seed is irrelevant: every parameter is overwritten from the payload.
    let mut model = Model::new(cfg, 0)?;
    let mut by_name = std::collections::HashMap::new();
    for e in &index.entries {
        by_name.insert(e.name.as_str(), e);
    }

    let mut err: Option<Error> = None;
    let mut loaded = 0usize;
    model.visit_params_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        let Some(entry) = by_name.get(p.name()) else {
            err = Some(Error::format(
                index_path.display().to_string(),
                p.name().to_string(),
                "missing from checkpoint index",
            ));
            return;
        };
        let (rows, cols) = (entry.rows as usize, entry.cols as usize);
        if (rows, cols) != p.value().shape() {
            err = Some(Error::shape_in(
                format!("checkpoint entry '{}'", p.name()),
                format!("{:?}", p.value().shape()),
                format!("({rows}, {cols})"),
            ));
            return;
        }
        let start = entry.offset as usize;
        let end = start + rows * cols;
        if end > payload.len() {
            err = Some(Error::format(
                dir.join(PAYLOAD_FILE).display().to_string(),
                p.name().to_string(),
                "payload slice out of range",
            ));
            return;
        }
        let data: Vec<f64> = payload[start..end].iter().map(|&v| f64::from(v)).collect();
        match Mat::from_vec(rows, cols, data) {
            Ok(m) => *p.value_mut() = m,
            Err(e) => err = Some(e),
        }
        loaded += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if loaded != index.entries.len() {
        return Err(Error::format(
            index_path.display().to_string(),
            "entries",
            format!(
                "checkpoint has {} entries but the model consumes {loaded}",
                index.entries.len()
            ),
        ));
    }
    Ok(model)
}

/// SHA-256 over config, index, and payload bytes.
pub fn checkpoint_hash(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut hasher = Sha256::new();
    for file in [CONFIG_FILE, INDEX_FILE, PAYLOAD_FILE] {
        let path = dir.join(file);
        let bytes =
            std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        hasher.update(&bytes);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
