use std::collections::HashSet;

use proptest::prelude::*;
use sslab_core::data::Image;
use sslab_core::pretexts::{
    apply_rotation, build_jigsaw_batch, build_rotation_batch, extract_grid_patches, grid_geometry,
    inverse_permutation, nonparam_softmax_loss, nonparam_softmax_loss_grad, permute_patches, reconstruction_loss,
    reconstruction_loss_grad, update_memory_bank, JitterMode, MemoryBank, PermutationSet, DEFAULT_CANDIDATE_POOL,
    DEFAULT_PERMUTATIONS, GRID_PATCHES,
};
use sslab_core::Tensor;

fn hamming(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[test]
fn three_patch_pair_is_a_derangement_found_by_exhaustive_search() {
    let set = PermutationSet::generate(3, 2, 6, 0).unwrap();
    assert_eq!(set.get(0), &[0, 1, 2]);
    // Exhaustive over S3: the lexicographically first permutation at the
    // largest distance from the identity.
    let all = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = all.iter().map(|p| hamming(p, &[0, 1, 2])).max().unwrap();
    let first = all.iter().find(|p| hamming(*p, &[0, 1, 2]) == best).unwrap();
    assert_eq!(best, 3);
    assert_eq!(set.get(1), first);
    assert!(set.get(1).iter().enumerate().all(|(i, &v)| i != v));
}

#[test]
fn full_size_set_is_distinct_and_reproducible() {
    let a = PermutationSet::generate(GRID_PATCHES, DEFAULT_PERMUTATIONS, DEFAULT_CANDIDATE_POOL, 17).unwrap();
    assert_eq!(a.len(), 2000);
    let unique: HashSet<&Vec<usize>> = a.perms().iter().collect();
    assert_eq!(unique.len(), 2000);
    let b = PermutationSet::generate(GRID_PATCHES, DEFAULT_PERMUTATIONS, DEFAULT_CANDIDATE_POOL, 17).unwrap();
    assert_eq!(a.to_text().as_bytes(), b.to_text().as_bytes());
    assert_eq!(PermutationSet::from_text(&a.to_text()).unwrap(), a);
    assert!(a.min_hamming().unwrap() >= 2);
}

#[test]
fn oversized_request_is_rejected() {
    assert!(PermutationSet::generate(3, 7, 100, 0).is_err());
}

#[test]
fn sixty_four_pixel_grid_is_nine_nineteen_pixel_patches() {
    assert_eq!(grid_geometry(64), (64 / 3, 64 / 3 - 2));
    let img = Image::from_fn(3, 64, 64, |c, y, x| (c * 10_000 + y * 64 + x) as f32);
    let patches = extract_grid_patches(&img, JitterMode::Eval, 0).unwrap();
    assert_eq!(patches.len(), 9);
    for (k, p) in patches.iter().enumerate() {
        assert_eq!((p.channels(), p.height(), p.width()), (3, 19, 19));
        // Centred: one pixel of margin inside cell (k / 3, k % 3).
        let (gy, gx) = (k / 3, k % 3);
        assert_eq!(p.get(1, 0, 0), img.get(1, gy * 21 + 1, gx * 21 + 1));
    }
    assert!(extract_grid_patches(&Image::filled(3, 32, 32, 0.0f32), JitterMode::Eval, 0).is_err());
}

#[test]
fn train_jitter_stays_inside_each_cell() {
    let img = Image::from_fn(1, 64, 64, |_, y, x| (y * 64 + x) as u32);
    for seed in 0..50 {
        for (k, p) in extract_grid_patches(&img, JitterMode::Train, seed).unwrap().iter().enumerate() {
            let v = p.get(0, 0, 0) as usize;
            let (y, x) = (v / 64, v % 64);
            let (gy, gx) = (k / 3, k % 3);
            assert!((gy * 21..=gy * 21 + 2).contains(&y) && (gx * 21..=gx * 21 + 2).contains(&x));
        }
    }
}

#[test]
fn swapping_first_two_positions() {
    let labels: Vec<char> = "abcdefghi".chars().collect();
    let perm = [1, 0, 2, 3, 4, 5, 6, 7, 8];
    let out = permute_patches(&labels, &perm).unwrap();
    let mut oracle = labels.clone();
    oracle.swap(0, 1);
    assert_eq!(out, oracle);
    assert!(permute_patches(&labels, &[0, 0, 2, 3, 4, 5, 6, 7, 8]).is_err());
}

#[test]
fn jigsaw_batch_targets_index_the_set() {
    let perms = PermutationSet::generate(9, 10, 500, 1).unwrap();
    let imgs: Vec<Image<f32>> = (0..6).map(|i| Image::from_fn(3, 48, 48, |c, y, x| (i + c + y * 48 + x) as f32)).collect();
    let batch = build_jigsaw_batch(&imgs, &perms, JitterMode::Eval, 4).unwrap();
    assert_eq!(batch, build_jigsaw_batch(&imgs, &perms, JitterMode::Eval, 4).unwrap());
    for ((img, stack), &t) in imgs.iter().zip(&batch.patch_stacks).zip(&batch.targets) {
        let grid = extract_grid_patches(img, JitterMode::Eval, 0).unwrap();
        let restored = permute_patches(stack, &inverse_permutation(perms.get(t)).unwrap()).unwrap();
        assert_eq!(restored, grid);
    }
}

#[test]
fn rotation_index_formula_on_larger_images() {
    let img = Image::from_fn(2, 5, 5, |c, y, x| (c * 100 + y * 5 + x) as i32);
    let r1 = apply_rotation(&img, 1).unwrap();
    for c in 0..2 {
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(r1.get(c, i, j), img.get(c, j, 4 - i));
            }
        }
    }
    let batch = build_rotation_batch(&vec![img.clone(); 8], 3).unwrap();
    for (inp, &t) in batch.inputs.iter().zip(&batch.targets) {
        assert_eq!(*inp, apply_rotation(&img, t).unwrap());
    }
}

#[test]
fn two_dimensional_softmax_example() {
    let bank = MemoryBank::from_rows(2, 2, vec![1.0, 0.0, 0.0, 1.0], 0.5, 1.0).unwrap();
    let loss = nonparam_softmax_loss(&[1.0f64, 0.0], 0, &bank).unwrap();
    let e = std::f64::consts::E;
    assert!((loss - -(e / (e + 1.0)).ln()).abs() < 1e-6);
}

#[test]
fn bank_update_midpoint() {
    let bank = MemoryBank::from_rows(1, 2, vec![1.0f64, 0.0], 0.5, 0.07).unwrap();
    let row = update_memory_bank(bank, 0, &[0.0, 1.0]).unwrap().row(0).to_vec();
    let h = 1.0 / 2f64.sqrt();
    assert!((row[0] - h).abs() < 1e-12 && (row[1] - h).abs() < 1e-12);
}

#[test]
fn reconstruction_matches_elementwise_oracle() {
    let a = Tensor::from_vec(&[1, 3, 2, 2], (0..12).map(|i| ((i * 7) % 5) as f64 / 5.0 - 0.4).collect()).unwrap();
    let b = Tensor::from_vec(&[1, 3, 2, 2], (0..12).map(|i| ((i * 3) % 7) as f64 / 7.0 - 0.5).collect()).unwrap();
    let oracle = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 12.0;
    assert!((reconstruction_loss(&a, &b).unwrap() - oracle).abs() < 1e-7);
    let wrong = Tensor::<f64>::zeros(&[1, 3, 2, 1]);
    assert!(reconstruction_loss(&a, &wrong).is_err());
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn reconstruction_gradient_matches_finite_differences() {
    let a = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let b = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(|i| (i as f64 * 0.71).cos() * 0.5).collect()).unwrap();
    let (_, g) = reconstruction_loss_grad(&a, &b).unwrap();
    let h = 1e-6;
    for i in 0..9 {
        let mut up = b.clone();
        up.data_mut()[i] += h;
        let mut down = b.clone();
        down.data_mut()[i] -= h;
        let fd = (reconstruction_loss(&a, &up).unwrap() - reconstruction_loss(&a, &down).unwrap()) / (2.0 * h);
        assert!(rel_err(fd, g.data()[i]) < 1e-4, "{i}: {fd} vs {}", g.data()[i]);
    }
}

#[test]
fn softmax_gradient_matches_finite_differences_along_the_sphere() {
    let bank = MemoryBank::<f64>::random(7, 5, 0.5, 0.2, 3).unwrap();
    let raw = [0.3, -0.5, 0.9, 0.1, -0.2];
    let n = raw.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    let f: Vec<f64> = raw.iter().map(|v| v / n).collect();
    let (_, g) = nonparam_softmax_loss_grad(&f, 2, &bank).unwrap();
    // Compare the tangential component: move along a direction orthogonal to f
    // and renormalise.
    let dir = {
        let d = [1.0, 0.5, -0.3, 0.2, 0.7];
        let dot: f64 = d.iter().zip(&f).map(|(a, b)| a * b).sum();
        let t: Vec<f64> = d.iter().zip(&f).map(|(a, b)| a - dot * b).collect();
        let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        t.into_iter().map(|v| v / tn).collect::<Vec<f64>>()
    };
    let at = |eps: f64| {
        let p: Vec<f64> = f.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
        let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        nonparam_softmax_loss(&p.iter().map(|v| v / pn).collect::<Vec<_>>(), 2, &bank).unwrap()
    };
    let h = 1e-6;
    let fd = (at(h) - at(-h)) / (2.0 * h);
    let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
    assert!(rel_err(fd, analytic) < 1e-4, "{fd} vs {analytic}");
}

proptest! {
    #[test]
    fn inverse_permutation_restores_patches(seed in any::<u64>()) {
        let perms = PermutationSet::generate(9, 5, 200, seed).unwrap();
        let patches: Vec<u32> = (0..9).collect();
        for p in perms.perms() {
            let shuffled = permute_patches(&patches, p).unwrap();
            prop_assert_eq!(permute_patches(&shuffled, &inverse_permutation(p).unwrap()).unwrap(), patches.clone());
        }
    }

    #[test]
    fn reconstruction_loss_is_symmetric_and_non_negative(v in proptest::collection::vec(-1.0f64..1.0, 24)) {
        let a = Tensor::from_vec(&[2, 3, 2, 2], v.clone()).unwrap();
        let b = Tensor::from_vec(&[2, 3, 2, 2], v.iter().rev().copied().collect()).unwrap();
        let ab = reconstruction_loss(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - reconstruction_loss(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
    }
}
