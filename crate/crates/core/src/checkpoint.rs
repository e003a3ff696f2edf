//! `.ckpt` files: a JSON manifest line followed by one little-endian `f32` blob.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Il,
    Rl,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: Phase,
    pub seed: u64,
    /// Unix seconds. Taken from `SOURCE_DATE_EPOCH` when set, otherwise 0, so
    /// that identical runs write identical files.
    pub created_at: u64,
    pub config_digest: String,
}

impl CheckpointMeta {
    pub fn new(phase: Phase, seed: u64, config_digest: impl Into<String>) -> Self {
        let created_at = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        Self { phase, seed, created_at, config_digest: config_digest.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub values: Vec<f32>,
}

impl CheckpointEntry {
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.frozen == other.frozen
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    entries: Vec<ManifestEntry>,
    blob_bytes: usize,
    meta: CheckpointMeta,
}

const FORMAT: &str = "ckpt-v1";

impl Checkpoint {
    pub fn new(entries: Vec<CheckpointEntry>, meta: CheckpointMeta) -> Result<Self> {
        let c = Self { entries, meta };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::format(format!("duplicate layer name {}", e.name)));
            }
            let n: usize = e.shape.iter().product();
            if n != e.values.len() {
                return Err(Error::format(format!(
                    "{}: shape {:?} holds {n} values, entry has {}",
                    e.name,
                    e.shape,
                    e.values.len()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.meta == other.meta
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| a.bit_eq(b))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            entries.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                frozen: e.frozen,
                offset,
            });
            offset += e.values.len() * 4;
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            entries,
            blob_bytes: offset,
            meta: self.meta.clone(),
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &manifest)?;
        out.write_all(b"\n")?;
        for e in &self.entries {
            for v in &e.values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        let manifest: Manifest = serde_json::from_slice(&line)
            .map_err(|e| Error::format(format!("bad checkpoint manifest: {e}")))?;
        if manifest.format != FORMAT {
            return Err(Error::format(format!("unknown checkpoint format {}", manifest.format)));
        }
        let mut blob = Vec::new();
        reader.read_to_end(&mut blob)?;
        if blob.len() != manifest.blob_bytes {
            return Err(Error::format(format!(
                "manifest declares {} blob bytes, found {}",
                manifest.blob_bytes,
                blob.len()
            )));
        }

        let mut expected_offset = 0;
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in manifest.entries {
            let count: usize = m.shape.iter().product();
            if m.offset != expected_offset || m.offset + count * 4 > blob.len() {
                return Err(Error::format(format!(
                    "{}: shape {:?} inconsistent with offset {} in a {}-byte blob",
                    m.name,
                    m.shape,
                    m.offset,
                    blob.len()
                )));
            }
            let values = blob[m.offset..m.offset + count * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            expected_offset += count * 4;
            entries.push(CheckpointEntry { name: m.name, shape: m.shape, frozen: m.frozen, values });
        }
        if expected_offset != blob.len() {
            return Err(Error::format(format!(
                "entries cover {expected_offset} bytes of a {}-byte blob",
                blob.len()
            )));
        }
        Checkpoint::new(entries, manifest.meta)
    }
}
