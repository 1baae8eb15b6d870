//! Local Outlier Factor.
//!
//! For every observation `p` the exact Euclidean `k` nearest neighbors are
//! found (ties at equal distance go to the lower row index, so every
//! neighborhood has exactly `k` members). The local reachability density is
//! the inverse mean reachability distance
//! `reach(p, o) = max(k_distance(o), d(p, o))`, and `LOF(p)` is the mean of
//! `lrd(o) / lrd(p)` over the neighbors `o`.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

/// Mean reachability distances below this are clamped.
pub const REACH_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LofError {
    #[error("k = {k} is out of range for {n} observations (need 1 <= k <= n - 1)")]
    KOutOfRange { k: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LofConfig {
    pub k: usize,
}

impl LofConfig {
    /// `k = max(ceil(0.1 n), 50)`, capped at `n - 1`.
    pub fn default_for(n: usize) -> Self {
        let k = n.div_ceil(10).max(50).min(n.saturating_sub(1));
        Self { k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Ordered `k` nearest neighbors of every observation.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodIndex {
    k: usize,
    neighbors: Vec<Vec<Neighbor>>,
}

impl NeighborhoodIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Neighbors of `p` by ascending distance.
    pub fn neighbors(&self, p: usize) -> &[Neighbor] {
        &self.neighbors[p]
    }

    /// Distance to the `k`-th neighbor.
    pub fn k_distance(&self, p: usize) -> f64 {
        self.neighbors[p][self.k - 1].distance
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn by_distance_then_index(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index))
}

/// Exact brute-force k-NN index.
pub fn knn_index(data: &Dataset, k: usize) -> Result<NeighborhoodIndex, LofError> {
    let n = data.n();
    if k == 0 || k >= n {
        return Err(LofError::KOutOfRange { k, n });
    }
    let neighbors = (0..n)
        .into_par_iter()
        .map(|p| {
            let x = data.row(p);
            let mut all: Vec<Neighbor> = (0..n)
                .filter(|&o| o != p)
                .map(|o| Neighbor {
                    index: o,
                    distance: euclidean(x, data.row(o)),
                })
                .collect();
            if k < all.len() {
                all.select_nth_unstable_by(k - 1, by_distance_then_index);
                all.truncate(k);
            }
            all.sort_unstable_by(by_distance_then_index);
            all
        })
        .collect();
    Ok(NeighborhoodIndex { k, neighbors })
}

/// Local reachability density of one observation and whether it was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density {
    pub value: f64,
    /// Mean reachability distance fell below [`REACH_EPSILON`]; `value` is `1/ε`.
    pub clamped: bool,
}

pub fn lrd(p: usize, index: &NeighborhoodIndex) -> Density {
    let hood = index.neighbors(p);
    let mean = hood
        .iter()
        .map(|o| index.k_distance(o.index).max(o.distance))
        .sum::<f64>()
        / hood.len() as f64;
    if mean < REACH_EPSILON {
        Density {
            value: 1.0 / REACH_EPSILON,
            clamped: true,
        }
    } else {
        Density {
            value: 1.0 / mean,
            clamped: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofScores {
    pub k: usize,
    pub scores: Vec<f64>,
    /// Observations whose own density was clamped.
    pub clamped: Vec<bool>,
}

/// LOF score of every observation; higher is more outlying, ≈1 is inlying.
pub fn lof_scores(data: &Dataset, config: LofConfig) -> Result<LofScores, LofError> {
    let index = knn_index(data, config.k)?;
    Ok(lof_from_index(&index))
}

pub fn lof_from_index(index: &NeighborhoodIndex) -> LofScores {
    let densities: Vec<Density> = (0..index.len()).into_par_iter().map(|p| lrd(p, index)).collect();
    let scores = (0..index.len())
        .into_par_iter()
        .map(|p| {
            let own = densities[p].value;
            let hood = index.neighbors(p);
            hood.iter().map(|o| densities[o.index].value / own).sum::<f64>() / hood.len() as f64
        })
        .collect();
    LofScores {
        k: index.k(),
        scores,
        clamped: densities.iter().map(|d| d.clamped).collect(),
    }
}
