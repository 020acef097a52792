//! Checkpoint directories: a binary parameter blob plus `meta.json`.
//!
//! `meta.json` keys (`schema_version`, `config`, `seed`, `epoch`,
//! `metrics`) are a stable interface; the parameter blob layout is
//! implementation-defined.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ReportSummary;
use crate::network::{build_mscanet, Model, NetworkConfig};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MSCNPRM1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub config: NetworkConfig,
    pub seed: u64,
    pub epoch: usize,
    pub metrics: Option<ReportSummary>,
}

/// Write `params.bin` + `meta.json` under `dir` (created if needed).
pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    epoch: usize,
    metrics: Option<ReportSummary>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let meta = CheckpointMeta {
        schema_version: SCHEMA_VERSION,
        config: model.net.config().clone(),
        seed: model.params.seed(),
        epoch,
        metrics,
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;

    let mut out = BufWriter::new(fs::File::create(dir.join("params.bin"))?);
    out.write_all(MAGIC)?;
    out.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for (name, value) in model.params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(value.ndim() as u32).to_le_bytes())?;
        for &d in value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in value.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(dir.to_path_buf())
}

/// Rebuild the model from `meta.json` and load the parameter blob.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let meta_path = dir.join("meta.json");
    if !meta_path.is_file() {
        return Err(Error::Load(format!(
            "not a checkpoint directory (no meta.json): {}",
            dir.display()
        )));
    }
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Load(format!(
            "unsupported checkpoint schema version {} (expected {})",
            meta.schema_version, SCHEMA_VERSION
        )));
    }
    let mut model = build_mscanet(&meta.config, meta.seed)?;
    let entries = read_params(&dir.join("params.bin"))?;
    model.params.load_from(entries)?;
    Ok((model, meta))
}

fn read_params(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    let mut input = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Load(format!(
            "bad parameter blob magic in {}",
            path.display()
        )));
    }
    let count = read_u64(&mut input)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Load("non-utf8 parameter name".into()))?;
        let ndim = read_u32(&mut input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut input)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap()));
    }
    Ok(entries)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
