//! The four pretext tasks: input transforms, targets and losses.

mod autoencode;
mod instance;
mod jigsaw;
mod rotation;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
pub use autoencode::{reconstruction_loss, reconstruction_loss_grad};
pub use instance::{nonparam_softmax_loss, nonparam_softmax_loss_grad, update_memory_bank, MemoryBank};
pub use jigsaw::{
    build_jigsaw_batch, extract_grid_patches, grid_geometry, inverse_permutation, permute_patches, JigsawBatch, JitterMode,
    PermutationSet, DEFAULT_CANDIDATE_POOL, DEFAULT_PERMUTATIONS, GRID_PATCHES,
};
pub use rotation::{apply_rotation, build_rotation_batch, RotationBatch, ROTATION_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextKind {
    Rotation,
    Jigsaw,
    InstanceDiscrimination,
    Autoencoder,
}

impl PretextKind {
    pub const ALL: [PretextKind; 4] =
        [PretextKind::Rotation, PretextKind::Jigsaw, PretextKind::InstanceDiscrimination, PretextKind::Autoencoder];

    pub fn as_str(self) -> &'static str {
        match self {
            PretextKind::Rotation => "rotation",
            PretextKind::Jigsaw => "jigsaw",
            PretextKind::InstanceDiscrimination => "instance_discrimination",
            PretextKind::Autoencoder => "autoencoder",
        }
    }

    /// Rotation and Jigsaw are classification pretexts with an accuracy; the other
    /// two only have a loss.
    pub fn has_accuracy(self) -> bool {
        matches!(self, PretextKind::Rotation | PretextKind::Jigsaw)
    }
}

impl fmt::Display for PretextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PretextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rotation" | "rot" => Ok(PretextKind::Rotation),
            "jigsaw" => Ok(PretextKind::Jigsaw),
            "instance_discrimination" | "id" => Ok(PretextKind::InstanceDiscrimination),
            "autoencoder" | "autoencoding" | "ae" => Ok(PretextKind::Autoencoder),
            other => Err(invalid(format!("unknown pretext {other:?}"))),
        }
    }
}
