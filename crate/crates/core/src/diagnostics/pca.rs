use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigenvalues;
use crate::data::Split;
use crate::error::{invalid, Result};
use crate::evaluation::FeatureMatrix;
use crate::scalar::{gemm, MatRef, Scalar};

/// `1..=5`, `10, 15, 20`, then every ten up to 150.
pub fn default_n_grid() -> Vec<usize> {
    let mut grid = vec![1, 2, 3, 4, 5, 10, 15, 20];
    grid.extend((30..=150).step_by(10));
    grid
}

/// Cumulative explained-variance fractions at a grid of component counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedVarianceCurve {
    pub dim: usize,
    pub rows: usize,
    pub split: Option<Split>,
    /// Component counts, ascending; the last one is the full rank.
    pub ns: Vec<usize>,
    pub fractions: Vec<f64>,
}

impl ExplainedVarianceCurve {
    /// Fraction at exactly `n` components, if `n` is on the grid.
    pub fn at(&self, n: usize) -> Option<f64> {
        self.ns.iter().position(|&k| k == n).map(|i| self.fractions[i])
    }

    pub fn first(&self) -> f64 {
        self.fractions[0]
    }
}

/// Covariance spectrum of mean-centred rows, largest first, clamped at zero.
///
/// Uses the `rows x rows` Gram matrix when that is the smaller side; both share
/// the same non-zero eigenvalues.
pub fn covariance_spectrum<T: Scalar>(data: &[T], rows: usize, dim: usize) -> Result<Vec<T>> {
    if rows < 2 {
        return Err(invalid(format!("PCA needs at least two rows, got {rows}")));
    }
    if data.len() != rows * dim || dim == 0 {
        return Err(invalid(format!("{} values for {rows} rows of dim {dim}", data.len())));
    }
    let n = T::from_usize_lossy(rows);
    let mut mean = vec![T::zero(); dim];
    for row in data.chunks(dim) {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centred: Vec<T> = data.chunks(dim).flat_map(|row| row.iter().zip(&mean).map(|(&v, &m)| v - m)).collect();
    let x = MatRef::row_major(&centred, rows, dim);
    let denom = T::one() / T::from_usize_lossy(rows - 1);
    let (size, gram) = if rows < dim {
        let mut g = vec![T::zero(); rows * rows];
        gemm(denom, x, x.t(), T::zero(), &mut g);
        (rows, g)
    } else {
        let mut g = vec![T::zero(); dim * dim];
        gemm(denom, x.t(), x, T::zero(), &mut g);
        (dim, g)
    };
    // Symmetrise away rounding in the product.
    let mut sym = gram;
    for i in 0..size {
        for j in 0..i {
            let v = (sym[i * size + j] + sym[j * size + i]) / T::lit(2.0);
            sym[i * size + j] = v;
            sym[j * size + i] = v;
        }
    }
    Ok(symmetric_eigenvalues(&sym, size)?.into_iter().map(|v| v.max(T::zero())).collect())
}

/// Explained-variance curve of row-major data. Grid entries above the full
/// rank (`min(rows - 1, dim)`) are dropped and the full rank is appended.
pub fn pca_explained_variance_rows<T: Scalar>(
    data: &[T],
    rows: usize,
    dim: usize,
    grid: &[usize],
) -> Result<ExplainedVarianceCurve> {
    if grid.contains(&0) {
        return Err(invalid("component counts must be positive"));
    }
    let spectrum = covariance_spectrum(data, rows, dim)?;
    let total: T = spectrum.iter().copied().sum();
    let energy: T = data.iter().map(|&v| v * v).sum::<T>() / T::from_usize_lossy(data.len());
    if !(total > T::epsilon() * T::epsilon() * energy) || !(total > T::zero()) {
        return Err(invalid("features have zero total variance"));
    }
    let mut cumulative = Vec::with_capacity(spectrum.len());
    let mut acc = T::zero();
    for &v in &spectrum {
        acc += v;
        cumulative.push((acc / total).as_f64().min(1.0));
    }
    let full_rank = (rows - 1).min(dim);
    let mut ns: Vec<usize> = grid.iter().copied().filter(|&k| k < full_rank).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.push(full_rank);
    let fractions = ns.iter().map(|&k| if k == full_rank { 1.0 } else { cumulative[k - 1] }).collect();
    Ok(ExplainedVarianceCurve { dim, rows, split: None, ns, fractions })
}

/// Explained-variance curve of a feature matrix, computed in `f64`.
pub fn pca_explained_variance(features: &FeatureMatrix, grid: &[usize]) -> Result<ExplainedVarianceCurve> {
    let data: Vec<f64> = features.data().iter().map(|&v| v as f64).collect();
    let mut curve = pca_explained_variance_rows(&data, features.rows(), features.dim(), grid)?;
    curve.split = Some(features.source().split);
    Ok(curve)
}

/// One column of the explained-variance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceColumn {
    pub pretext: String,
    pub pooled_dim: usize,
    pub curve: ExplainedVarianceCurve,
}

/// CSV with one row per grid `n` and one column per (pretext, pooled dim),
/// values to two decimals. Full-rank rows are omitted; grid entries a column
/// lacks are left blank.
pub fn render_variance_table(columns: &[VarianceColumn], grid: &[usize]) -> String {
    let mut out = String::from("n");
    for c in columns {
        out.push_str(&format!(",{}_{}", c.pretext, c.pooled_dim));
    }
    out.push('\n');
    for &n in grid {
        out.push_str(&n.to_string());
        for c in columns {
            match c.curve.at(n) {
                Some(f) => out.push_str(&format!(",{f:.2}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
