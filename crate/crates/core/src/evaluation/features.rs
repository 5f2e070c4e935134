use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetTable, Split};
use crate::error::{file_err, invalid, Result};
use crate::models::{pool_features, Backbone, PooledDim};
use crate::scalar::Scalar;

/// Where a feature matrix came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSource {
    pub pretext: String,
    pub dataset: String,
    pub split: Split,
    pub checkpoint_id: String,
}

/// JSON sidecar written next to the binary matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub dim: usize,
    pub count: usize,
    /// Nominal pooled size (256, 4096 or 9216), absent for unpooled maps.
    pub pooled_dim: Option<usize>,
    pub image_ids: Vec<usize>,
    pub source: FeatureSource,
    /// SHA-256 of the binary file, hex.
    pub sha256: String,
}

/// Frozen features, one row per image, rows ordered by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f32>,
    image_ids: Vec<usize>,
    pooled_dim: Option<PooledDim>,
    source: FeatureSource,
}

impl FeatureMatrix {
    pub fn new(
        dim: usize,
        data: Vec<f32>,
        image_ids: Vec<usize>,
        pooled_dim: Option<PooledDim>,
        source: FeatureSource,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feature dimension must be positive"));
        }
        if data.len() != dim * image_ids.len() {
            return Err(invalid(format!("{} values for {} rows of dim {dim}", data.len(), image_ids.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite feature in row {}", i / dim)));
        }
        Ok(Self { dim, data, image_ids, pooled_dim, source })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.image_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn image_ids(&self) -> &[usize] {
        &self.image_ids
    }

    pub fn pooled_dim(&self) -> Option<PooledDim> {
        self.pooled_dim
    }

    pub fn source(&self) -> &FeatureSource {
        &self.source
    }

    fn bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Hex SHA-256 of the little-endian row-major values.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.bytes()))
    }

    pub fn sidecar(&self) -> FeatureSidecar {
        FeatureSidecar {
            dim: self.dim,
            count: self.rows(),
            pooled_dim: self.pooled_dim.map(PooledDim::nominal),
            image_ids: self.image_ids.clone(),
            source: self.source.clone(),
            sha256: self.checksum(),
        }
    }

    pub fn sidecar_path(bin: &Path) -> PathBuf {
        bin.with_extension("json")
    }

    /// Write `<path>` (f32 LE) and the `.json` sidecar beside it.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.bytes()).map_err(|e| file_err(path, e))?;
        let side = Self::sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&self.sidecar())?).map_err(|e| file_err(&side, e))
    }

    /// Read a matrix back, verifying size and checksum against the sidecar.
    pub fn read(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| file_err(&side, e))?;
        let meta: FeatureSidecar = serde_json::from_str(&text).map_err(|e| file_err(&side, e))?;
        let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
        if hex::encode(Sha256::digest(&bytes)) != meta.sha256 {
            return Err(file_err(path, "checksum does not match sidecar"));
        }
        if bytes.len() != meta.dim * meta.count * 4 || meta.image_ids.len() != meta.count {
            return Err(file_err(path, "size does not match sidecar"));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let pooled = meta.pooled_dim.map(PooledDim::from_nominal).transpose()?;
        Self::new(meta.dim, data, meta.image_ids, pooled, meta.source)
    }
}

/// Evaluation-mode features for one split. `pooled = None` keeps the
/// flattened pre-pool maps.
pub fn extract_feature_matrix<T: Scalar>(
    encoder: &mut Backbone<T>,
    dataset: &DatasetTable,
    split: Split,
    pooled: Option<PooledDim>,
    source: FeatureSource,
) -> Result<FeatureMatrix> {
    let images = dataset.split_images(split);
    if images.is_empty() {
        return Err(invalid(format!("{} split of {} is empty", split, dataset.name())));
    }
    let side = encoder.config().input_side;
    let mut data = Vec::new();
    let mut dim = 0;
    for chunk in images.chunks(64) {
        let resized: Vec<_> = chunk.iter().map(|li| li.pixels.resize_bilinear(side, side)).collect();
        let maps = encoder.extract_prepool(&resized.iter().collect::<Vec<_>>())?;
        let rows = match pooled {
            Some(p) => pool_features(&maps, p)?,
            None => {
                let n = maps.shape()[0];
                let len = maps.len() / n;
                maps.reshape(&[n, len])?
            }
        };
        dim = rows.shape()[1];
        data.extend(rows.data().iter().map(|v| v.as_f64() as f32));
    }
    FeatureMatrix::new(dim, data, images.iter().map(|li| li.image_id).collect(), pooled, source)
}
