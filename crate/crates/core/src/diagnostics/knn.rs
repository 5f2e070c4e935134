use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evaluation::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub image_id: usize,
    pub distance: f64,
}

/// Neighbours of one query plus the feature space they were found in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query_id: usize,
    /// Nominal pooled size, or `None` for flattened pre-pool maps.
    pub pooled_dim: Option<usize>,
    pub neighbors: Vec<Neighbor>,
}

/// Euclidean distance between rows, accumulated in `f64`.
pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// The `k` rows closest to `query_id`, excluding the query itself; ascending
/// distance, ties broken by smaller image id.
pub fn nearest_neighbors(features: &FeatureMatrix, query_id: usize, k: usize) -> Result<NeighborList> {
    if k == 0 || k >= features.rows() {
        return Err(invalid(format!("k = {k} must be in 1..{}", features.rows())));
    }
    let q = features
        .image_ids()
        .iter()
        .position(|&id| id == query_id)
        .ok_or_else(|| invalid(format!("query image {query_id} not in feature matrix")))?;
    let query = features.row(q);
    let mut all: Vec<Neighbor> = features
        .image_ids()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != q)
        .map(|(i, &image_id)| Neighbor { image_id, distance: euclidean(query, features.row(i)) })
        .collect();
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.image_id.cmp(&b.image_id)));
    all.truncate(k);
    Ok(NeighborList { query_id, pooled_dim: features.pooled_dim().map(|p| p.nominal()), neighbors: all })
}
