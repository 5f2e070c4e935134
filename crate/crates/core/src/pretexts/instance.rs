use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::seed::rng;
use crate::tensor::Tensor;

const UNIT_TOLERANCE: f64 = 1e-5;

/// One unit-norm feature row per training image.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<T> {
    rows: usize,
    dim: usize,
    vectors: Vec<T>,
    momentum: T,
    temperature: T,
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn check_unit<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    let n = norm(v).as_f64();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(invalid(format!("{what} has L2 norm {n}, expected 1")));
    }
    Ok(())
}

impl<T: Scalar> MemoryBank<T> {
    /// Seeded Gaussian rows, each normalised to unit length.
    pub fn random(rows: usize, dim: usize, momentum: f64, temperature: f64, seed: u64) -> Result<Self> {
        let mut r = rng(seed);
        let mut vectors = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            vectors.extend(row.iter().map(|x| T::lit(x / n)));
        }
        Self::from_rows(rows, dim, vectors, momentum, temperature)
    }

    pub fn from_rows(rows: usize, dim: usize, vectors: Vec<T>, momentum: f64, temperature: f64) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(invalid("memory bank needs at least one row and one dimension"));
        }
        if vectors.len() != rows * dim {
            return Err(invalid(format!("{} values for a {rows}x{dim} bank", vectors.len())));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(invalid(format!("bank momentum {momentum} not in [0, 1]")));
        }
        if !(temperature > 0.0) {
            return Err(invalid(format!("temperature {temperature} must be positive")));
        }
        for (i, row) in vectors.chunks(dim).enumerate() {
            check_unit(row, &format!("bank row {i}"))?;
        }
        Ok(Self { rows, dim, vectors, momentum: T::lit(momentum), temperature: T::lit(temperature) })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn momentum(&self) -> T {
        self.momentum
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[T] {
        &self.vectors
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[self.rows, self.dim], self.vectors.clone()).expect("bank shape")
    }

    /// `row <- normalize(momentum * row + (1 - momentum) * feature)`.
    ///
    /// If the blend cancels to zero (feature antipodal at momentum 0.5) the row
    /// becomes the feature.
    pub fn update(&mut self, index: usize, feature: &[T]) -> Result<()> {
        if index >= self.rows {
            return Err(invalid(format!("bank index {index} out of range for {} rows", self.rows)));
        }
        if feature.len() != self.dim {
            return Err(invalid(format!("feature dim {} does not match bank dim {}", feature.len(), self.dim)));
        }
        check_unit(feature, "feature")?;
        let m = self.momentum;
        let row = &mut self.vectors[index * self.dim..(index + 1) * self.dim];
        let blended: Vec<T> = row.iter().zip(feature).map(|(&r, &f)| m * r + (T::one() - m) * f).collect();
        let n = norm(&blended);
        if n > T::lit(1e-12) {
            row.iter_mut().zip(&blended).for_each(|(r, &b)| *r = b / n);
        } else {
            row.copy_from_slice(feature);
        }
        Ok(())
    }
}

/// Functional form of [`MemoryBank::update`].
pub fn update_memory_bank<T: Scalar>(mut bank: MemoryBank<T>, index: usize, feature: &[T]) -> Result<MemoryBank<T>> {
    bank.update(index, feature)?;
    Ok(bank)
}

/// `-log softmax_own(V f / tau)` over the full bank.
pub fn nonparam_softmax_loss<T: Scalar>(feature: &[T], own_index: usize, bank: &MemoryBank<T>) -> Result<T> {
    nonparam_softmax_loss_grad(feature, own_index, bank).map(|(loss, _)| loss)
}

/// Loss and its gradient with respect to `feature`; the bank is held fixed.
///
/// `d loss / d f = (sum_j p_j v_j - v_own) / tau`.
pub fn nonparam_softmax_loss_grad<T: Scalar>(
    feature: &[T],
    own_index: usize,
    bank: &MemoryBank<T>,
) -> Result<(T, Vec<T>)> {
    if feature.len() != bank.dim {
        return Err(invalid(format!("feature dim {} does not match bank dim {}", feature.len(), bank.dim)));
    }
    if own_index >= bank.rows {
        return Err(invalid(format!("own index {own_index} out of range for {} rows", bank.rows)));
    }
    check_unit(feature, "feature")?;
    let tau = bank.temperature;
    let logits: Vec<T> = bank
        .vectors
        .chunks(bank.dim)
        .map(|row| row.iter().zip(feature).map(|(&a, &b)| a * b).sum::<T>() / tau)
        .collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = (lse - logits[own_index]).max(T::zero());
    let mut grad = vec![T::zero(); bank.dim];
    for (row, &l) in bank.vectors.chunks(bank.dim).zip(&logits) {
        let p = (l - lse).exp();
        for (g, &v) in grad.iter_mut().zip(row) {
            *g += p * v;
        }
    }
    for (g, &v) in grad.iter_mut().zip(bank.row(own_index)) {
        *g = (*g - v) / tau;
    }
    Ok((loss, grad))
}
