use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{file_err, Result};
use crate::nn::{Module, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::BackboneConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSLCKPT1";

/// Structured-text description stored next to the tensor blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: BackboneConfig,
    pub pretext: String,
    pub epoch: usize,
    pub seed: u64,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl CheckpointManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| file_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| file_err(path, e))
    }
}

/// Every param (trainable or buffer) of `module` as named f32 tensors.
pub fn state_dict<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, prefix: &str) -> Vec<(String, Tensor<f32>)> {
    let mut out = Vec::new();
    module.visit(prefix, &mut |name, p: &mut Param<T>| out.push((name.to_string(), p.value.cast())));
    out
}

/// Copy tensors into `module` by name. Every param must be present with a matching shape.
pub fn load_state_dict<T: Scalar, M: Module<T> + ?Sized>(
    module: &mut M,
    prefix: &str,
    tensors: &[(String, Tensor<f32>)],
) -> Result<()> {
    let by_name: BTreeMap<&str, &Tensor<f32>> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let mut problem = None;
    module.visit(prefix, &mut |name, p: &mut Param<T>| {
        if problem.is_some() {
            return;
        }
        match by_name.get(name) {
            Some(t) if t.shape() == p.value.shape() => p.value = t.cast(),
            Some(t) => problem = Some(format!("{name}: shape {:?} vs {:?}", t.shape(), p.value.shape())),
            None => problem = Some(format!("missing tensor {name}")),
        }
    });
    match problem {
        Some(msg) => Err(crate::error::invalid(format!("checkpoint does not fit model: {msg}"))),
        None => Ok(()),
    }
}

/// Layout: magic, u32 count, then per tensor u32 name length, name bytes,
/// u32 rank, u64 dims, f32 values; all little-endian.
pub fn write_tensors(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| file_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    go().map_err(|e| file_err(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| file_err(path, msg);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| file_err(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<fs::File>| -> Result<u32> {
        r.read_exact(&mut u32_buf).map_err(|e| file_err(path, e))?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| file_err(path, e))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| file_err(path, e))?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw).map_err(|e| file_err(path, e))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}
