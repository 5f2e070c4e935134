//! Encoder, decoder and heads.

mod backbone;
mod checkpoint;
mod decoder;
mod heads;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::nn::adaptive_avg_pool;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
pub use backbone::{BackboneConfig, BasicBlock, Backbone};
pub use checkpoint::{
    load_state_dict, read_tensors, state_dict, write_tensors, CheckpointManifest, CHECKPOINT_MAGIC,
};
pub use decoder::{Decoder, DECODER_LATENT};
pub use heads::{build_head, Head, HeadKind, JigsawHead, JIGSAW_PROJECTION};

/// Pooled feature sizes at full width: 256 x 1 x 1, 256 x 4 x 4 and 256 x 6 x 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub enum PooledDim {
    D256,
    D4096,
    D9216,
}

impl PooledDim {
    pub const ALL: [PooledDim; 3] = [PooledDim::D256, PooledDim::D4096, PooledDim::D9216];

    pub fn from_nominal(dim: usize) -> Result<Self> {
        match dim {
            256 => Ok(PooledDim::D256),
            4096 => Ok(PooledDim::D4096),
            9216 => Ok(PooledDim::D9216),
            other => Err(invalid(format!("unsupported pooled dimension {other}; use 256, 4096 or 9216"))),
        }
    }

    /// Dimension at full width (256 channels).
    pub fn nominal(self) -> usize {
        256 * self.grid() * self.grid()
    }

    pub fn grid(self) -> usize {
        match self {
            PooledDim::D256 => 1,
            PooledDim::D4096 => 4,
            PooledDim::D9216 => 6,
        }
    }

    /// Actual dimension for feature maps with `channels` channels.
    pub fn dim_for(self, channels: usize) -> usize {
        channels * self.grid() * self.grid()
    }
}

impl TryFrom<usize> for PooledDim {
    type Error = crate::error::Error;

    fn try_from(v: usize) -> Result<Self> {
        Self::from_nominal(v)
    }
}

impl From<PooledDim> for usize {
    fn from(p: PooledDim) -> usize {
        p.nominal()
    }
}

impl fmt::Display for PooledDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.nominal())
    }
}

/// Adaptive average pooling of `[n, c, h, w]` maps onto the target grid, flattened.
pub fn pool_features<T: Scalar>(maps: &Tensor<T>, target: PooledDim) -> Result<Tensor<T>> {
    if maps.shape().len() != 4 {
        return Err(invalid(format!("expected [n, c, h, w] maps, got shape {:?}", maps.shape())));
    }
    let (_, _, h, w) = maps.dims4();
    if h < target.grid() || w < target.grid() {
        return Err(invalid(format!("{h}x{w} maps are smaller than the {0}x{0} pooling grid", target.grid())));
    }
    Ok(adaptive_avg_pool(maps, target.grid()))
}

/// Stack images into an `[n, 3, h, w]` tensor.
pub fn images_to_tensor<T: Scalar>(images: &[&Image<f32>]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| invalid("empty image batch"))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.channels(), img.height(), img.width()) != (c, h, w) {
            return Err(invalid("images in a batch must share one shape"));
        }
        data.extend(img.data().iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::from_vec(&[images.len(), c, h, w], data)
}
