use rand::Rng;

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::seed::rng;

/// Targets `0..4` stand for 0, 90, 180 and 270 degrees counter-clockwise.
pub const ROTATION_CLASSES: usize = 4;

/// Exact counter-clockwise rotation by `90 * r` degrees (pixel permutation).
pub fn apply_rotation<T: Copy>(image: &Image<T>, r: usize) -> Result<Image<T>> {
    let (h, w) = (image.height(), image.width());
    if h != w {
        return Err(invalid(format!("rotation needs a square image, got {h}x{w}")));
    }
    let n = h;
    Ok(match r % 4 {
        0 => image.clone(),
        1 => Image::from_fn(image.channels(), n, n, |c, i, j| image.get(c, j, n - 1 - i)),
        2 => Image::from_fn(image.channels(), n, n, |c, i, j| image.get(c, n - 1 - i, n - 1 - j)),
        _ => Image::from_fn(image.channels(), n, n, |c, i, j| image.get(c, n - 1 - j, i)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationBatch<T = f32> {
    pub inputs: Vec<Image<T>>,
    pub targets: Vec<usize>,
}

/// Rotate each image by a seeded uniform choice of quarter turns.
pub fn build_rotation_batch<T: Copy>(images: &[Image<T>], seed: u64) -> Result<RotationBatch<T>> {
    if images.is_empty() {
        return Err(invalid("rotation batch needs at least one image"));
    }
    let mut rng = rng(seed);
    let mut inputs = Vec::with_capacity(images.len());
    let mut targets = Vec::with_capacity(images.len());
    for img in images {
        let r = rng.random_range(0..ROTATION_CLASSES);
        inputs.push(apply_rotation(img, r)?);
        targets.push(r);
    }
    Ok(RotationBatch { inputs, targets })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn numbered(c: usize, n: usize) -> Image<u32> {
        Image::from_fn(c, n, n, |c, y, x| (c * 1000 + y * n + x) as u32)
    }

    #[test]
    fn quarter_turn_on_two_by_two_matches_index_formula() {
        // [[a, b], [c, d]] -> [[b, d], [a, c]]
        let img = Image::from_vec(1, 2, 2, vec!['a', 'b', 'c', 'd']).unwrap();
        let rot = apply_rotation(&img, 1).unwrap();
        assert_eq!(rot.data(), &['b', 'd', 'a', 'c']);
        // Oracle: dst[i][j] = src[j][W-1-i].
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(rot.get(0, i, j), img.get(0, j, 1 - i));
            }
        }
    }

    #[test]
    fn identity_and_four_quarter_turns() {
        let img = numbered(3, 5);
        assert_eq!(apply_rotation(&img, 0).unwrap(), img);
        let mut r = img.clone();
        for _ in 0..4 {
            r = apply_rotation(&r, 1).unwrap();
        }
        assert_eq!(r, img);
    }

    #[test]
    fn non_square_is_rejected() {
        let img = Image::filled(3, 4, 5, 0.0f32);
        assert!(apply_rotation(&img, 1).is_err());
    }

    #[test]
    fn a_seed_can_produce_all_four_rotations_of_one_image() {
        let img = numbered(1, 3);
        let copies = vec![img.clone(); 4];
        let seed = (0..10_000u64)
            .find(|&s| {
                let b = build_rotation_batch(&copies, s).unwrap();
                let mut t = b.targets.clone();
                t.sort_unstable();
                t == vec![0, 1, 2, 3]
            })
            .expect("some seed yields a permutation of targets");
        let batch = build_rotation_batch(&copies, seed).unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_ne!(batch.inputs[i], batch.inputs[j]);
            }
            assert_eq!(batch.inputs[i], apply_rotation(&img, batch.targets[i]).unwrap());
        }
    }

    #[test]
    fn large_batch_targets_are_uniform() {
        let img = Image::filled(1, 2, 2, 0u8);
        let n = 10_000;
        let batch = build_rotation_batch(&vec![img; n], 42).unwrap();
        let mut hist = [0usize; 4];
        for &t in &batch.targets {
            hist[t] += 1;
        }
        // Multinomial: each count ~ Binomial(n, 1/4), sd = sqrt(n p (1 - p)).
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for &h in &hist {
            assert!((h as f64 - n as f64 / 4.0).abs() < 3.0 * sd, "{hist:?}");
        }
        // A constant predictor is right about a quarter of the time.
        let acc = hist[0] as f64 / n as f64;
        assert!((acc - 0.25).abs() < 3.0 * sd / n as f64);
    }

    proptest! {
        #[test]
        fn rotations_compose_additively(a in 0usize..4, b in 0usize..4, n in 1usize..7, c in 1usize..4) {
            let img = numbered(c, n);
            let lhs = apply_rotation(&apply_rotation(&img, a).unwrap(), b).unwrap();
            let rhs = apply_rotation(&img, (a + b) % 4).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
