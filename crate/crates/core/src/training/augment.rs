use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    Train,
    Eval,
}

/// Resize, random crop and horizontal flip; nothing else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub resize_to: usize,
    pub random_crop: bool,
    /// Training images are resized to `resize_to + crop_padding` before cropping.
    pub crop_padding: usize,
    pub horizontal_flip: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { resize_to: 64, random_crop: true, crop_padding: 8, horizontal_flip: true }
    }
}

impl AugmentPolicy {
    pub fn without_flips(self) -> Self {
        Self { horizontal_flip: false, ..self }
    }
}

/// Apply the policy. Eval mode only resizes; train mode draws crop offsets
/// and a fair-coin flip from `seed`.
pub fn augment(image: &Image<f32>, policy: &AugmentPolicy, mode: AugmentMode, seed: u64) -> Image<f32> {
    let side = policy.resize_to;
    if mode == AugmentMode::Eval {
        return image.resize_bilinear(side, side);
    }
    let mut r = rng(seed);
    let mut out = if policy.random_crop && policy.crop_padding > 0 {
        let big = side + policy.crop_padding;
        let resized = image.resize_bilinear(big, big);
        let top = r.random_range(0..=policy.crop_padding);
        let left = r.random_range(0..=policy.crop_padding);
        resized.crop(top, left, side, side)
    } else {
        image.resize_bilinear(side, side)
    };
    if policy.horizontal_flip && r.random_bool(0.5) {
        out = out.flip_horizontal();
    }
    out
}
