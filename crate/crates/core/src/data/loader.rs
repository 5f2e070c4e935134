//! Directory dataset format: `root/<class_name>/<image files>`.
//!
//! An optional `dataset.json` sidecar at the root fixes the dataset name, the
//! class list and the split map keyed by `image_id`; when present, image file
//! stems must be the image ids.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{stratified_split, DatasetTable, Image, LabeledImage, Split, SplitRatios, CANONICAL_SIDE};
use crate::error::{file_err, invalid, Error, Result};

pub const SIDECAR_NAME: &str = "dataset.json";

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "gif"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub name: String,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub split: BTreeMap<usize, Split>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Images are resized to `side x side`.
    pub side: usize,
    /// Seed of the stratified split used when no sidecar is present.
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { side: CANONICAL_SIDE, seed: 0, ratios: SplitRatios::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Files and nested directories that were not images and were ignored.
    pub skipped: usize,
    pub used_sidecar: bool,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| file_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| file_err(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn decode(path: &Path, side: usize) -> Result<Image<f32>> {
    let rgb = image::open(path).map_err(|e| file_err(path, e))?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let img = Image::from_fn(3, h, w, |c, y, x| rgb.get_pixel(x as u32, y as u32)[c] as f32 / 127.5 - 1.0);
    let mut out = img.resize_bilinear(side, side);
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(out)
}

/// Load `root/<class>/<image>` with class ids assigned by sorted directory name.
pub fn load_directory_dataset(root: &Path, opts: LoadOptions) -> Result<(DatasetTable, LoadReport)> {
    if !root.is_dir() {
        return Err(file_err(root, "dataset root is not a directory"));
    }
    let sidecar_path = root.join(SIDECAR_NAME);
    let sidecar: Option<DatasetSidecar> = if sidecar_path.is_file() {
        let text = fs::read_to_string(&sidecar_path).map_err(|e| file_err(&sidecar_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| file_err(&sidecar_path, e))?)
    } else {
        None
    };
    let mut report = LoadReport { used_sidecar: sidecar.is_some(), ..Default::default() };
    let mut class_dirs = Vec::new();
    for entry in sorted_entries(root)? {
        if entry.is_dir() {
            class_dirs.push(entry);
        } else if entry != sidecar_path {
            report.skipped += 1;
        }
    }
    if class_dirs.is_empty() {
        return Err(file_err(root, "no class subdirectories"));
    }
    let class_names: Vec<String> =
        class_dirs.iter().map(|d| d.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
    if let Some(sc) = &sidecar {
        if sc.class_names != class_names {
            return Err(file_err(&sidecar_path, "class list does not match the subdirectories"));
        }
    }

    let mut images = Vec::new();
    for (class_id, dir) in class_dirs.iter().enumerate() {
        for path in sorted_entries(dir)? {
            if path.is_dir() || !is_image(&path) {
                report.skipped += 1;
                continue;
            }
            let image_id = match &sidecar {
                Some(_) => path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| file_err(&path, "file stem is not an image id"))?,
                None => images.len(),
            };
            images.push(LabeledImage::new(decode(&path, opts.side)?, class_id, image_id)?);
        }
    }
    if images.is_empty() {
        return Err(file_err(root, "no image files found"));
    }
    if log::log_enabled!(log::Level::Warn) && report.skipped > 0 {
        log::warn!("{}: skipped {} non-image entries", root.display(), report.skipped);
    }

    let (name, split) = match sidecar {
        Some(sc) => (sc.name, sc.split),
        None => {
            let labels: Vec<usize> = images.iter().map(|i| i.class_id).collect();
            let splits = match stratified_split(&labels, opts.ratios, opts.seed) {
                Err(Error::ClassTooSmall { .. }) => {
                    log::warn!("{}: a class is too small to split, tagging every image TRAIN", root.display());
                    vec![Split::Train; labels.len()]
                }
                other => other?,
            };
            let name = root.file_name().unwrap_or_default().to_string_lossy().into_owned();
            (name, images.iter().zip(splits).map(|(i, s)| (i.image_id, s)).collect())
        }
    };
    let count = class_names.len();
    Ok((DatasetTable::new(name, images, count, class_names, split)?, report))
}

/// Write PNGs named `<image_id>.png` under one directory per class, plus the sidecar.
pub fn export_directory_dataset(dataset: &DatasetTable, root: &Path) -> Result<()> {
    for name in dataset.class_names() {
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(invalid(format!("class name {name:?} is not a valid directory name")));
        }
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| file_err(&dir, e))?;
    }
    for img in dataset.images() {
        let px = &img.pixels;
        let rgb = image::RgbImage::from_fn(px.width() as u32, px.height() as u32, |x, y| {
            let q = |c| (((px.get(c, y as usize, x as usize) + 1.0) * 127.5).round().clamp(0.0, 255.0)) as u8;
            image::Rgb([q(0), q(1), q(2)])
        });
        let path = root.join(&dataset.class_names()[img.class_id]).join(format!("{}.png", img.image_id));
        rgb.save(&path).map_err(|e| file_err(&path, e))?;
    }
    let sidecar = DatasetSidecar {
        name: dataset.name().to_string(),
        class_count: dataset.class_count(),
        class_names: dataset.class_names().to_vec(),
        split: dataset.split_map().clone(),
    };
    let path = root.join(SIDECAR_NAME);
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| file_err(&path, e))?;
    Ok(())
}
