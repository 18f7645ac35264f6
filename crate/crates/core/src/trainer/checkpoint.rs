//! Checkpoint archive: a text header line, a pretty-printed JSON manifest
//! listing every array, then the array data as little-endian `f64`.
//!
//! ```text
//! DEPTHCUE-CHECKPOINT 1 <manifest byte length>\n
//! { ...manifest... }\n
//! <raw data>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

use super::{Phase, TrainConfig};

const MAGIC: &str = "DEPTHCUE-CHECKPOINT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the data block.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub phase: Phase,
    /// Completed optimizer steps.
    pub step: u64,
    pub adam_steps: u64,
    pub config: TrainConfig,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(phase: Phase, step: u64, adam_steps: u64, config: TrainConfig, arrays: Vec<(String, Tensor)>) -> Self {
        let mut offset = 0;
        let entries = arrays
            .iter()
            .map(|(name, t)| {
                let e = ArrayEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
                offset += t.numel();
                e
            })
            .collect();
        Checkpoint {
            manifest: Manifest { version: VERSION, phase, step, adam_steps, config, arrays: entries },
            arrays,
        }
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{MAGIC} {VERSION} {}", manifest.len())?;
        w.write_all(manifest.as_bytes())?;
        w.write_all(b"\n")?;
        for (_, t) in &self.arrays {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = BufReader::new(File::open(path)?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        if parts.len() != 3 || parts[0] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        if parts[1] != VERSION.to_string() {
            return Err(bad(&format!("unsupported version {}", parts[1])));
        }
        let len: usize = parts[2].parse().map_err(|_| bad("malformed manifest length"))?;
        let mut json = vec![0u8; len + 1];
        r.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json[..len])?;
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if data.len() % 8 != 0 {
            return Err(bad("truncated data block"));
        }
        let values: Vec<f64> =
            data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for e in &manifest.arrays {
            let n: usize = e.shape.iter().product();
            let slice = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| bad(&format!("array {} exceeds the data block", e.name)))?;
            arrays.push((e.name.clone(), Tensor::new(e.shape.clone(), slice.to_vec())));
        }
        Ok(Checkpoint { manifest, arrays })
    }
}
