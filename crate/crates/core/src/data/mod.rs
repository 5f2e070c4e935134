//! Datasets: labeled images, split bookkeeping, synthetic generators and the
//! on-disk directory format.

mod image;
mod loader;
mod split;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
pub use image::Image;
pub use loader::{export_directory_dataset, load_directory_dataset, DatasetSidecar, LoadOptions, LoadReport};
pub use split::{halve_classes, stratified_split, HalvedDataset, SplitRatios};
pub use synthetic::{make_synthetic_dataset, SyntheticKind};

/// Canonical input resolution.
pub const CANONICAL_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// A 3-channel image with values in `[-1, 1]`, its class and a dataset-unique id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Image<f32>,
    pub class_id: usize,
    pub image_id: usize,
}

impl LabeledImage {
    pub fn new(pixels: Image<f32>, class_id: usize, image_id: usize) -> Result<Self> {
        if pixels.channels() != 3 {
            return Err(invalid(format!("image {image_id} has {} channels, expected 3", pixels.channels())));
        }
        if let Some(v) = pixels.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(invalid(format!("image {image_id} has pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { pixels, class_id, image_id })
    }
}

/// Images, labels and split assignment. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    name: String,
    images: Vec<LabeledImage>,
    class_count: usize,
    class_names: Vec<String>,
    split: BTreeMap<usize, Split>,
}

impl DatasetTable {
    /// Validates labels, id uniqueness and that every image carries exactly one split tag.
    pub fn new(
        name: impl Into<String>,
        images: Vec<LabeledImage>,
        class_count: usize,
        class_names: Vec<String>,
        split: BTreeMap<usize, Split>,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(invalid("class_count must be positive"));
        }
        if class_names.len() != class_count {
            return Err(invalid(format!("{} class names for {class_count} classes", class_names.len())));
        }
        let mut seen = HashSet::with_capacity(images.len());
        for img in &images {
            if img.class_id >= class_count {
                return Err(invalid(format!(
                    "image {} has class {} but class_count is {class_count}",
                    img.image_id, img.class_id
                )));
            }
            if !seen.insert(img.image_id) {
                return Err(invalid(format!("duplicate image_id {}", img.image_id)));
            }
            if !split.contains_key(&img.image_id) {
                return Err(invalid(format!("image {} has no split tag", img.image_id)));
            }
        }
        if split.len() != images.len() {
            return Err(invalid("split map references unknown image ids"));
        }
        Ok(Self { name: name.into(), images, class_count, class_names, split })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn images(&self) -> &[LabeledImage] {
        &self.images
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split_map(&self) -> &BTreeMap<usize, Split> {
        &self.split
    }

    pub fn split_of(&self, image_id: usize) -> Option<Split> {
        self.split.get(&image_id).copied()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.class_id).collect()
    }

    /// Images of one split, ordered by `image_id`.
    pub fn split_images(&self, split: Split) -> Vec<&LabeledImage> {
        let mut out: Vec<&LabeledImage> = self.images.iter().filter(|i| self.split[&i.image_id] == split).collect();
        out.sort_by_key(|i| i.image_id);
        out
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split.values().filter(|&&s| s == split).count()
    }

    /// Side length when every image is square with the same size.
    pub fn square_side(&self) -> Option<usize> {
        let first = self.images.first()?;
        let side = first.pixels.height();
        self.images
            .iter()
            .all(|i| i.pixels.height() == side && i.pixels.width() == side)
            .then_some(side)
    }
}
