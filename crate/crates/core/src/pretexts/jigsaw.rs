use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::seed::{rng, stage_seed};

pub const GRID_PATCHES: usize = 9;
pub const DEFAULT_PERMUTATIONS: usize = 2000;
pub const DEFAULT_CANDIDATE_POOL: usize = 100_000;

/// Distinct permutations chosen greedily to keep them far apart in Hamming distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    n_patches: usize,
    perms: Vec<Vec<usize>>,
    min_hamming: Option<usize>,
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// All permutations of `0..n` in lexicographic order.
fn all_permutations(n: usize) -> Vec<Vec<u8>> {
    let mut current: Vec<u8> = (0..n as u8).collect();
    let mut out = vec![current.clone()];
    loop {
        // Next lexicographic permutation.
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| current[j] > current[i]).expect("successor exists");
        current.swap(i, j);
        current[i + 1..].reverse();
        out.push(current.clone());
    }
}

impl PermutationSet {
    /// Greedy max-min Hamming selection.
    ///
    /// The candidate pool is every permutation (lexicographic) when
    /// `candidate_pool >= n!`, otherwise the identity followed by
    /// `candidate_pool - 1` distinct seeded random permutations. Starting from
    /// the identity, each step adds the candidate whose minimum distance to the
    /// selected set is largest, the earliest candidate winning ties.
    pub fn generate(n_patches: usize, size: usize, candidate_pool: usize, seed: u64) -> Result<Self> {
        if n_patches == 0 || n_patches > u8::MAX as usize {
            return Err(invalid(format!("unsupported patch count {n_patches}")));
        }
        if size == 0 {
            return Err(invalid("permutation set size must be at least 1"));
        }
        let total = if n_patches <= 12 { factorial(n_patches) } else { usize::MAX };
        let candidates: Vec<Vec<u8>> = if candidate_pool >= total {
            all_permutations(n_patches)
        } else {
            let identity: Vec<u8> = (0..n_patches as u8).collect();
            let mut seen: HashSet<Vec<u8>> = HashSet::from([identity.clone()]);
            let mut out = vec![identity];
            let mut rng = rng(seed);
            let mut p: Vec<u8> = (0..n_patches as u8).collect();
            while out.len() < candidate_pool {
                p.shuffle(&mut rng);
                if seen.insert(p.clone()) {
                    out.push(p.clone());
                }
            }
            out
        };
        if size > candidates.len() {
            return Err(invalid(format!(
                "requested {size} permutations but only {} distinct candidates exist",
                candidates.len()
            )));
        }

        let mut selected = vec![0usize];
        let mut taken = vec![false; candidates.len()];
        taken[0] = true;
        let mut min_dist: Vec<usize> = candidates.iter().map(|c| hamming(c, &candidates[0])).collect();
        let mut min_hamming: Option<usize> = None;
        while selected.len() < size {
            let mut best: Option<usize> = None;
            for (i, &d) in min_dist.iter().enumerate() {
                if !taken[i] && best.is_none_or(|b| d > min_dist[b]) {
                    best = Some(i);
                }
            }
            let b = best.expect("candidates remain");
            min_hamming = Some(min_hamming.map_or(min_dist[b], |m| m.min(min_dist[b])));
            taken[b] = true;
            selected.push(b);
            let newest = &candidates[b];
            for (d, c) in min_dist.iter_mut().zip(&candidates) {
                *d = (*d).min(hamming(c, newest));
            }
        }
        let perms = selected.into_iter().map(|i| candidates[i].iter().map(|&v| v as usize).collect()).collect();
        Ok(Self { n_patches, perms, min_hamming })
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn get(&self, index: usize) -> &[usize] {
        &self.perms[index]
    }

    /// Smallest pairwise Hamming distance; `None` for a single permutation.
    pub fn min_hamming(&self) -> Option<usize> {
        self.min_hamming
    }

    /// One permutation per line, space-separated, identity first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.perms {
            let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut perms = Vec::new();
        for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let p = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))?;
            validate_permutation(&p, p.len())?;
            perms.push(p);
        }
        let first = perms.first().ok_or_else(|| invalid("empty permutation file"))?;
        let n = first.len();
        if first.iter().enumerate().any(|(i, &v)| i != v) {
            return Err(invalid("first permutation must be the identity"));
        }
        if perms.iter().any(|p| p.len() != n) {
            return Err(invalid("permutations have different lengths"));
        }
        let mut seen = HashSet::new();
        let mut min_hamming: Option<usize> = None;
        for (i, p) in perms.iter().enumerate() {
            if !seen.insert(p.clone()) {
                return Err(invalid(format!("duplicate permutation on line {}", i + 1)));
            }
            for q in &perms[..i] {
                let d = p.iter().zip(q).filter(|(a, b)| a != b).count();
                min_hamming = Some(min_hamming.map_or(d, |m| m.min(d)));
            }
        }
        Ok(Self { n_patches: n, perms, min_hamming })
    }
}

fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(invalid(format!("permutation has {} entries, expected {n}", perm.len())));
    }
    for &v in perm {
        if v >= n || std::mem::replace(&mut seen[v], true) {
            return Err(invalid(format!("{perm:?} is not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Result<Vec<usize>> {
    validate_permutation(perm, perm.len())?;
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    Ok(inv)
}

/// Patch sampling: random offset inside each cell for training, centred for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterMode {
    Train,
    Eval,
}

/// `(cell, patch)` side lengths for a square image of side `side`.
pub fn grid_geometry(side: usize) -> (usize, usize) {
    let cell = side / 3;
    (cell, cell.saturating_sub(2))
}

/// Split a square image into a 3x3 grid and take a `cell - 2` patch from each
/// cell, in row-major order.
pub fn extract_grid_patches<T: Copy>(image: &Image<T>, jitter: JitterMode, seed: u64) -> Result<Vec<Image<T>>> {
    let side = image.height();
    if image.width() != side {
        return Err(invalid(format!("jigsaw needs a square image, got {}x{}", side, image.width())));
    }
    if side < 33 {
        return Err(invalid(format!("jigsaw needs side >= 33, got {side}")));
    }
    let (cell, patch) = grid_geometry(side);
    let slack = cell - patch;
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(GRID_PATCHES);
    for gy in 0..3 {
        for gx in 0..3 {
            let (oy, ox) = match jitter {
                JitterMode::Train => (rng.random_range(0..=slack), rng.random_range(0..=slack)),
                JitterMode::Eval => (slack / 2, slack / 2),
            };
            out.push(image.crop(gy * cell + oy, gx * cell + ox, patch, patch));
        }
    }
    Ok(out)
}

/// Output position `i` holds `patches[perm[i]]`.
pub fn permute_patches<P: Clone>(patches: &[P], perm: &[usize]) -> Result<Vec<P>> {
    validate_permutation(perm, patches.len())?;
    Ok(perm.iter().map(|&p| patches[p].clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JigsawBatch<T = f32> {
    /// Per image, nine equally sized patches in shuffled order.
    pub patch_stacks: Vec<Vec<Image<T>>>,
    /// Index into the permutation set.
    pub targets: Vec<usize>,
}

/// Cut each image into its grid, shuffle by a seeded uniform choice from
/// `perms`, and record the choice as the target.
pub fn build_jigsaw_batch<T: Copy>(
    images: &[Image<T>],
    perms: &PermutationSet,
    jitter: JitterMode,
    seed: u64,
) -> Result<JigsawBatch<T>> {
    if images.is_empty() {
        return Err(invalid("jigsaw batch needs at least one image"));
    }
    if perms.n_patches() != GRID_PATCHES {
        return Err(invalid(format!("permutations cover {} patches, grid has {GRID_PATCHES}", perms.n_patches())));
    }
    let mut targets_rng = rng(stage_seed(seed, "jigsaw/targets"));
    let mut patch_stacks = Vec::with_capacity(images.len());
    let mut targets = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let target = targets_rng.random_range(0..perms.len());
        let grid = extract_grid_patches(img, jitter, stage_seed(seed, &format!("jigsaw/patches/{i}")))?;
        patch_stacks.push(permute_patches(&grid, perms.get(target))?);
        targets.push(target);
    }
    Ok(JigsawBatch { patch_stacks, targets })
}
