use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sslab_core::data::{make_synthetic_dataset, DatasetTable, Image, LabeledImage, Split, SyntheticKind};
use sslab_core::evaluation::{
    extract_feature_matrix, normalized_accuracy, train_linear_probe, FeatureMatrix, FeatureSource, LabeledFeatures,
    ProbeConfig,
};
use sslab_core::models::{Backbone, BackboneConfig, PooledDim};
use sslab_core::seed::rng;
use sslab_core::training::OptimConfig;

fn source() -> FeatureSource {
    FeatureSource { pretext: "test".into(), dataset: "toy".into(), split: Split::Train, checkpoint_id: "none".into() }
}

fn matrix(dim: usize, rows: Vec<Vec<f32>>) -> FeatureMatrix {
    let ids = (0..rows.len()).collect();
    FeatureMatrix::new(dim, rows.concat(), ids, None, source()).unwrap()
}

fn small_encoder(side: usize) -> Backbone<f32> {
    let cfg = BackboneConfig { blocks_per_stage: 1, input_side: side, width_multiplier: 0.125, ..Default::default() };
    Backbone::new(cfg, &mut rng(3)).unwrap()
}

#[test]
fn duplicate_images_give_identical_rows_in_id_order() {
    let a = Image::from_fn(3, 32, 32, |c, y, x| ((c + y * 3 + x * 7) % 11) as f32 / 11.0);
    let b = Image::from_fn(3, 32, 32, |c, y, x| ((c * 5 + y + x) % 13) as f32 / 13.0);
    let images = vec![
        LabeledImage::new(b.clone(), 1, 9).unwrap(),
        LabeledImage::new(a.clone(), 0, 2).unwrap(),
        LabeledImage::new(a, 0, 5).unwrap(),
    ];
    let split: BTreeMap<usize, Split> = [(9, Split::Train), (2, Split::Train), (5, Split::Train)].into();
    let ds = DatasetTable::new("dup", images, 2, vec!["a".into(), "b".into()], split).unwrap();
    let mut enc = small_encoder(32);
    let fm = extract_feature_matrix(&mut enc, &ds, Split::Train, Some(PooledDim::D256), source()).unwrap();
    assert_eq!(fm.image_ids(), &[2, 5, 9]);
    assert_eq!(fm.row(0), fm.row(1));
    assert_ne!(fm.row(0), fm.row(2));
}

#[test]
fn pooled_256_rows_are_channel_means_of_prepool_maps() {
    let ds = make_synthetic_dataset(SyntheticKind::Glyphs, 4, 2, 32, 7).unwrap();
    let mut enc = small_encoder(32);
    let fm = extract_feature_matrix(&mut enc, &ds, Split::Train, Some(PooledDim::D256), source()).unwrap();
    let raw = extract_feature_matrix(&mut enc, &ds, Split::Train, None, source()).unwrap();
    assert_eq!(fm.rows(), ds.split_len(Split::Train));
    let c = enc.out_channels();
    assert_eq!(fm.dim(), c);
    let hw = raw.dim() / c;
    for i in 0..fm.rows() {
        for ch in 0..c {
            let mean = raw.row(i)[ch * hw..(ch + 1) * hw].iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
            assert!((fm.row(i)[ch] as f64 - mean).abs() < 1e-6);
        }
    }
}

#[test]
fn pooling_grid_larger_than_map_is_rejected() {
    // A 32-pixel input gives 4x4 maps; the 6x6 grid cannot fit.
    let ds = make_synthetic_dataset(SyntheticKind::Glyphs, 3, 2, 32, 7).unwrap();
    let mut enc = small_encoder(32);
    assert!(extract_feature_matrix(&mut enc, &ds, Split::Val, Some(PooledDim::D9216), source()).is_err());
}

#[test]
fn file_round_trip_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feats.bin");
    let fm = matrix(3, vec![vec![1.0, -2.5, 3.25], vec![0.0, 1e-3, -7.0]]);
    fm.write(&path).unwrap();
    let back = FeatureMatrix::read(&path).unwrap();
    assert_eq!(back, fm);
    assert_eq!(back.checksum(), fm.checksum());
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(FeatureMatrix::read(&path).is_err());
}

#[test]
fn non_finite_and_misaligned_matrices_are_rejected() {
    assert!(FeatureMatrix::new(2, vec![1.0, f32::NAN], vec![0], None, source()).is_err());
    assert!(FeatureMatrix::new(2, vec![1.0, 2.0], vec![0, 1], None, source()).is_err());
}

/// Exhaustive direction scan: some line through the plane separates the classes.
fn separable_2d(points: &[Vec<f32>], labels: &[usize]) -> bool {
    (0..3600).any(|k| {
        let t = k as f64 * std::f64::consts::PI / 1800.0;
        let proj: Vec<f64> = points.iter().map(|p| p[0] as f64 * t.cos() + p[1] as f64 * t.sin()).collect();
        let max0 = proj.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(p, _)| *p).fold(f64::MIN, f64::max);
        let min1 = proj.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(p, _)| *p).fold(f64::MAX, f64::min);
        max0 < min1
    })
}

#[test]
fn separable_toy_features_reach_full_train_accuracy() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let l = i % 2;
        let off = if l == 0 { -1.5f32 } else { 1.5 };
        rows.push(vec![off + r.random_range(-1.0f32..1.0), r.random_range(-3.0f32..3.0)]);
        labels.push(l);
    }
    assert!(separable_2d(&rows, &labels));
    let fm = matrix(2, rows);
    let train = LabeledFeatures::new(&fm, &labels).unwrap();
    let run = train_linear_probe::<f64>(train, None, None, 2, &ProbeConfig::default(), 5).unwrap();
    assert_eq!(run.result.train_acc, 1.0);
}

#[test]
fn tenth_of_labels_uses_ten_per_class() {
    let rows: Vec<Vec<f32>> = (0..300).map(|i| vec![(i % 3) as f32, (i % 7) as f32]).collect();
    let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let fm = matrix(2, rows);
    let cfg = ProbeConfig { optim: OptimConfig { epochs: 2, decay_epochs: vec![1], ..OptimConfig::probe() }, ..ProbeConfig::with_fraction(0.1) };
    let run = train_linear_probe::<f32>(LabeledFeatures::new(&fm, &labels).unwrap(), None, None, 3, &cfg, 1).unwrap();
    assert_eq!(run.result.train_rows, 30);
    assert_eq!(run.result.label_fraction, 0.1);
}

#[test]
fn single_class_labels_are_rejected() {
    let fm = matrix(2, vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]);
    let labels = [0, 0, 0];
    let cfg = ProbeConfig::default();
    assert!(train_linear_probe::<f32>(LabeledFeatures::new(&fm, &labels).unwrap(), None, None, 1, &cfg, 0).is_err());
    assert!(train_linear_probe::<f32>(LabeledFeatures::new(&fm, &labels).unwrap(), None, None, 2, &cfg, 0).is_err());
    assert!(LabeledFeatures::new(&fm, &labels[..2]).is_err());
}

#[test]
fn probe_reports_all_splits_and_leaves_features_untouched() {
    let ds = make_synthetic_dataset(SyntheticKind::OrientedShapes, 6, 3, 32, 2).unwrap();
    let mut enc = small_encoder(32);
    let mats: Vec<FeatureMatrix> = Split::ALL
        .iter()
        .map(|&s| extract_feature_matrix(&mut enc, &ds, s, Some(PooledDim::D4096), source()).unwrap())
        .collect();
    let labels: Vec<Vec<usize>> = Split::ALL.iter().map(|&s| ds.split_images(s).iter().map(|li| li.class_id).collect()).collect();
    let before: Vec<String> = mats.iter().map(FeatureMatrix::checksum).collect();
    let lf = |i: usize| LabeledFeatures::new(&mats[i], &labels[i]).unwrap();
    let cfg = ProbeConfig { standardize: true, ..ProbeConfig::default() };
    let a = train_linear_probe::<f32>(lf(0), Some(lf(1)), Some(lf(2)), 3, &cfg, 9).unwrap();
    let b = train_linear_probe::<f32>(lf(0), Some(lf(1)), Some(lf(2)), 3, &cfg, 9).unwrap();
    assert_eq!(a.result, b.result);
    assert_eq!(a.result.pooled_dim, Some(4096));
    assert!(a.result.standardized);
    for acc in [Some(a.result.train_acc), a.result.val_acc, a.result.test_acc] {
        let acc = acc.unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    assert_eq!(a.curve.epochs_run(), 30);
    let after: Vec<String> = mats.iter().map(FeatureMatrix::checksum).collect();
    assert_eq!(before, after);
}

#[test]
fn normalized_accuracy_is_a_ratio() {
    assert_eq!(normalized_accuracy(0.4, 0.8).unwrap(), 0.5);
    assert_eq!(normalized_accuracy(0.55, 0.55).unwrap(), 1.0);
    assert!(normalized_accuracy(0.5, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probe_accuracies_are_fractions_and_deterministic(
        seed in any::<u64>(),
        n in 6usize..30,
        classes in 2usize..4,
        fraction in 0.05f64..=1.0,
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f32>> = (0..n).map(|_| (0..3).map(|_| r.random_range(-2.0f32..2.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let fm = matrix(3, rows);
        let cfg = ProbeConfig { optim: OptimConfig { epochs: 3, decay_epochs: vec![2], ..OptimConfig::probe() }, ..ProbeConfig::with_fraction(fraction) };
        let lf = LabeledFeatures::new(&fm, &labels).unwrap();
        let a = train_linear_probe::<f64>(lf, Some(lf), None, classes, &cfg, seed).unwrap();
        let b = train_linear_probe::<f64>(lf, Some(lf), None, classes, &cfg, seed).unwrap();
        prop_assert_eq!(&a.result, &b.result);
        prop_assert!((0.0..=1.0).contains(&a.result.train_acc));
        prop_assert!((0.0..=1.0).contains(&a.result.val_acc.unwrap()));
    }
}
