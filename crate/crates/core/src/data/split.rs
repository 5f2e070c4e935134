use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetTable, LabeledImage, Split};
use crate::error::{invalid, Error, Result};
use crate::seed::{rng, stage_seed};

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 60-20-20.
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(format!("{name} fraction {v} not in (0, 1)")));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Per-class `(train, val, test)` counts: floor train, floor val, remainder to
    /// test. Train keeps at least one member.
    pub fn counts(&self, class_size: usize) -> (usize, usize, usize) {
        let n = class_size as f64;
        let train = ((n * self.train + 1e-9).floor() as usize).clamp(1, class_size);
        let val = ((n * self.val + 1e-9).floor() as usize).min(class_size - train);
        (train, val, class_size - train - val)
    }
}

/// Per-class random partition. Entry `i` of the result is the split of `labels[i]`.
pub fn stratified_split(labels: &[usize], ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    ratios.validate()?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut out = vec![Split::Train; labels.len()];
    for (&class_id, members) in &by_class {
        if members.len() < 3 {
            return Err(Error::ClassTooSmall { class_id, count: members.len(), required: 3 });
        }
        let mut order = members.clone();
        order.shuffle(&mut rng(stage_seed(seed, &format!("split/class/{class_id}"))));
        let (train, val, _) = ratios.counts(order.len());
        for (rank, &idx) in order.iter().enumerate() {
            out[idx] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Result of [`halve_classes`].
#[derive(Debug, Clone)]
pub struct HalvedDataset {
    /// TRAIN and VAL images of the kept classes, relabelled densely.
    pub reduced: DatasetTable,
    /// Every TEST image of every class, original labels.
    pub full_test: DatasetTable,
    /// Original ids of the kept classes, ascending; position = new class id.
    pub kept_classes: Vec<usize>,
}

/// Keep a seeded random `ceil(C / 2)` of the classes for pretext training.
pub fn halve_classes(dataset: &DatasetTable, seed: u64) -> Result<HalvedDataset> {
    let c = dataset.class_count();
    if c < 2 {
        return Err(invalid(format!("halving needs at least 2 classes, dataset has {c}")));
    }
    let mut classes: Vec<usize> = (0..c).collect();
    classes.shuffle(&mut rng(stage_seed(seed, "halve_classes")));
    let mut kept: Vec<usize> = classes[..c.div_ceil(2)].to_vec();
    kept.sort_unstable();
    let remap: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();

    let mut reduced_images = Vec::new();
    let mut reduced_split = BTreeMap::new();
    let mut test_images = Vec::new();
    let mut test_split = BTreeMap::new();
    for img in dataset.images() {
        match dataset.split_of(img.image_id).expect("validated split") {
            Split::Test => {
                test_images.push(img.clone());
                test_split.insert(img.image_id, Split::Test);
            }
            s => {
                if let Some(&new_id) = remap.get(&img.class_id) {
                    reduced_images.push(LabeledImage { class_id: new_id, ..img.clone() });
                    reduced_split.insert(img.image_id, s);
                }
            }
        }
    }
    let kept_names = kept.iter().map(|&k| dataset.class_names()[k].clone()).collect();
    let reduced = DatasetTable::new(
        format!("{}-half", dataset.name()),
        reduced_images,
        kept.len(),
        kept_names,
        reduced_split,
    )?;
    let full_test = DatasetTable::new(
        format!("{}-test", dataset.name()),
        test_images,
        c,
        dataset.class_names().to_vec(),
        test_split,
    )?;
    Ok(HalvedDataset { reduced, full_test, kept_classes: kept })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::data::Image;

    fn toy(class_count: usize, per_class: usize) -> DatasetTable {
        let mut images = Vec::new();
        for c in 0..class_count {
            for _ in 0..per_class {
                let id = images.len();
                images.push(LabeledImage::new(Image::filled(3, 4, 4, 0.0), c, id).unwrap());
            }
        }
        let labels: Vec<usize> = images.iter().map(|i| i.class_id).collect();
        let splits = stratified_split(&labels, SplitRatios::default(), 1).unwrap();
        let split = images.iter().zip(splits).map(|(i, s)| (i.image_id, s)).collect();
        let names = (0..class_count).map(|c| format!("c{c}")).collect();
        DatasetTable::new("toy", images, class_count, names, split).unwrap()
    }

    fn count(splits: &[Split], s: Split) -> usize {
        splits.iter().filter(|&&x| x == s).count()
    }

    #[test]
    fn ten_of_one_class_is_six_two_two() {
        let splits = stratified_split(&[0; 10], SplitRatios::default(), 9).unwrap();
        assert_eq!((count(&splits, Split::Train), count(&splits, Split::Val), count(&splits, Split::Test)), (6, 2, 2));
    }

    #[test]
    fn seven_of_one_class_matches_brute_force_counter() {
        // Oracle: walk ranks 0..n and bucket each by cumulative floor thresholds.
        let n = 7usize;
        let mut oracle = [0usize; 3];
        let train_cut = (n as f64 * 0.6).floor() as usize;
        let val_cut = train_cut + (n as f64 * 0.2).floor() as usize;
        for rank in 0..n {
            let bucket = if rank < train_cut { 0 } else if rank < val_cut { 1 } else { 2 };
            oracle[bucket] += 1;
        }
        assert_eq!(oracle, [4, 1, 2]);
        let splits = stratified_split(&[3; 7], SplitRatios::default(), 0).unwrap();
        assert_eq!([count(&splits, Split::Train), count(&splits, Split::Val), count(&splits, Split::Test)], oracle);
    }

    #[test]
    fn small_class_is_rejected_by_id() {
        let err = stratified_split(&[0, 0, 0, 1, 1], SplitRatios::default(), 0).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { class_id: 1, count: 2, .. }), "{err}");
    }

    #[test]
    fn ratios_must_sum_to_one() {
        assert!(SplitRatios::new(0.6, 0.2, 0.3).is_err());
        assert!(SplitRatios::new(0.5, 0.25, 0.25).is_ok());
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let labels: Vec<usize> = (0..60).map(|i| i % 4).collect();
        let a = stratified_split(&labels, SplitRatios::default(), 5).unwrap();
        assert_eq!(a, stratified_split(&labels, SplitRatios::default(), 5).unwrap());
        assert_ne!(a, stratified_split(&labels, SplitRatios::default(), 6).unwrap());
    }

    #[test]
    fn halving_two_classes_keeps_one() {
        let h = halve_classes(&toy(2, 5), 0).unwrap();
        assert_eq!(h.reduced.class_count(), 1);
        assert_eq!(h.full_test.class_count(), 2);
        let test_classes: BTreeSet<usize> = h.full_test.images().iter().map(|i| i.class_id).collect();
        assert_eq!(test_classes.len(), 2);
    }

    #[test]
    fn halving_three_classes_keeps_two() {
        let h = halve_classes(&toy(3, 5), 4).unwrap();
        assert_eq!(h.reduced.class_count(), 2);
        assert_eq!(h.kept_classes.len(), 2);
    }

    #[test]
    fn halving_partitions_train_ids() {
        let ds = toy(4, 10);
        for seed in 0..5 {
            let h = halve_classes(&ds, seed).unwrap();
            let train_ids = |d: &DatasetTable| -> BTreeSet<usize> {
                d.split_images(Split::Train).iter().map(|i| i.image_id).collect()
            };
            let original = train_ids(&ds);
            let reduced = train_ids(&h.reduced);
            let excluded: BTreeSet<usize> = ds
                .split_images(Split::Train)
                .iter()
                .filter(|i| !h.kept_classes.contains(&i.class_id))
                .map(|i| i.image_id)
                .collect();
            assert!(reduced.is_disjoint(&excluded));
            assert_eq!(reduced.union(&excluded).copied().collect::<BTreeSet<_>>(), original);
            // No test image leaks into the reduced set.
            assert_eq!(h.reduced.split_len(Split::Test), 0);
            assert_eq!(h.full_test.images().len(), ds.split_len(Split::Test));
        }
    }

    #[test]
    fn halving_rejects_single_class() {
        let ds = toy(1, 5);
        assert!(halve_classes(&ds, 0).is_err());
    }
}
