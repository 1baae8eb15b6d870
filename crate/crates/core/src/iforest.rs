//! Isolation Forest.
//!
//! Each tree is grown on a subsample drawn without replacement, splitting on a
//! random dimension (among those with non-zero range in the node) at a
//! uniform value strictly inside that range, until a node holds one point,
//! has no spread left, or the height limit `ceil(log2 ψ)` is reached. The
//! score of `x` is `2^(-E[h(x)] / c(ψ))`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

const EULER_GAMMA: f64 = 0.577_215_664_9;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("isolation forest needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error("observation has {found} dimensions, forest was built on {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Subsample size ψ; `None` means `min(256, n)`.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            trees: 100,
            subsample: None,
            seed,
        }
    }

    pub fn subsample_for(&self, n: usize) -> usize {
        self.subsample.unwrap_or(256).min(n)
    }
}

/// Average path length of an unsuccessful BST search among `m` points:
/// `c(m) = 2 H(m-1) - 2 (m-1)/m` with `H(i) ≈ ln i + γ`, `c(1) = 0`, `c(2) = 1`.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m1 = (m - 1) as f64;
            2.0 * (m1.ln() + EULER_GAMMA) - 2.0 * m1 / m as f64
        }
    }
}

/// `2^(-mean_path / c(ψ))`; for `ψ < 2` the normalizer is `c(2) = 1`.
pub fn anomaly_score(mean_path: f64, subsample: usize) -> f64 {
    let c = average_path_length(subsample.max(2));
    (-mean_path / c).exp2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        dimension: usize,
        split: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    External {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub root: Node,
    pub height_limit: usize,
}

impl IsolationTree {
    fn grow(data: &Dataset, rows: Vec<usize>, height_limit: usize, rng: &mut ChaCha8Rng) -> Self {
        let root = grow_node(data, rows, 0, height_limit, rng);
        Self { root, height_limit }
    }

    pub fn depth(&self) -> usize {
        fn depth(node: &Node) -> usize {
            match node {
                Node::External { .. } => 0,
                Node::Internal { left, right, .. } => 1 + depth(left).max(depth(right)),
            }
        }
        depth(&self.root)
    }

    /// Edges from the root to the external node reached by `x`, plus `c(size)`
    /// for the points still sharing that node.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        let mut edges = 0usize;
        loop {
            match node {
                Node::Internal {
                    dimension,
                    split,
                    left,
                    right,
                } => {
                    node = if x[*dimension] < *split { left } else { right };
                    edges += 1;
                }
                Node::External { size } => return edges as f64 + average_path_length(*size),
            }
        }
    }
}

fn grow_node(data: &Dataset, rows: Vec<usize>, depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> Node {
    if rows.len() <= 1 || depth >= limit {
        return Node::External { size: rows.len() };
    }
    let ranges: Vec<(usize, f64, f64)> = (0..data.d())
        .filter_map(|j| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = data.value(i, j);
                (lo.min(v), hi.max(v))
            });
            (hi > lo).then_some((j, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return Node::External { size: rows.len() };
    }
    let (dimension, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let split = loop {
        let s = rng.random_range(lo..hi);
        if s > lo {
            break s;
        }
    };
    let (left, right): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| data.value(i, dimension) < split);
    Node::Internal {
        dimension,
        split,
        left: Box::new(grow_node(data, left, depth + 1, limit, rng)),
        right: Box::new(grow_node(data, right, depth + 1, limit, rng)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    pub subsample: usize,
    pub dimensions: usize,
}

/// Builds `config.trees` trees. Tree `t` draws from its own ChaCha stream `t`
/// of `config.seed`, so each tree is reproducible on its own.
pub fn build_forest(data: &Dataset, config: &ForestConfig) -> Result<IsolationForest, ForestError> {
    let n = data.n();
    if n < 2 {
        return Err(ForestError::TooFewObservations(n));
    }
    if config.trees == 0 {
        return Err(ForestError::InvalidConfig("tree count must be positive".into()));
    }
    if config.subsample == Some(0) {
        return Err(ForestError::InvalidConfig("subsample size must be positive".into()));
    }
    let psi = config.subsample_for(n);
    let height_limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..config.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut rows = sample(&mut rng, n, psi).into_vec();
            rows.sort_unstable();
            IsolationTree::grow(data, rows, height_limit, &mut rng)
        })
        .collect();
    Ok(IsolationForest {
        trees,
        subsample: psi,
        dimensions: data.d(),
    })
}

impl IsolationForest {
    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.dimensions {
            return Err(ForestError::DimensionMismatch {
                expected: self.dimensions,
                found: x.len(),
            });
        }
        Ok(anomaly_score(self.mean_path_length(x), self.subsample))
    }
}

/// Score of every observation in `data`, in row order; all lie in `(0, 1]`.
pub fn iforest_scores(data: &Dataset, forest: &IsolationForest) -> Result<Vec<f64>, ForestError> {
    (0..data.n())
        .into_par_iter()
        .map(|i| forest.score(data.row(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_of_small_sizes() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // c(3) = 2(ln 2 + γ) - 4/3
        let hand = 2.0 * (std::f64::consts::LN_2 + 0.5772156649) - 4.0 / 3.0;
        assert!((average_path_length(3) - hand).abs() < 1e-15);
        assert!((average_path_length(3) - 1.207_392).abs() < 1e-6);
    }

    #[test]
    fn score_is_one_half_at_expected_path() {
        for psi in [2, 3, 16, 256] {
            assert_eq!(anomaly_score(average_path_length(psi), psi), 0.5);
        }
        assert_eq!(anomaly_score(0.0, 256), 1.0);
    }

    #[test]
    fn two_points_split_at_root() {
        let data = Dataset::from_rows(vec![vec![0.0, 5.0], vec![1.0, 5.0]]).unwrap();
        let forest = build_forest(
            &data,
            &ForestConfig {
                trees: 1,
                ..ForestConfig::new(3)
            },
        )
        .unwrap();
        let tree = &forest.trees[0];
        match &tree.root {
            Node::Internal { dimension, split, .. } => {
                assert_eq!(*dimension, 0);
                assert!(*split > 0.0 && *split < 1.0);
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(tree.path_length(data.row(0)), 1.0);
        assert_eq!(tree.path_length(data.row(1)), 1.0);
    }

    #[test]
    fn identical_points_make_a_single_leaf() {
        let data = Dataset::from_rows(vec![vec![2.0, 2.0]; 6]).unwrap();
        let forest = build_forest(&data, &ForestConfig::new(1)).unwrap();
        for tree in &forest.trees {
            assert_eq!(tree.root, Node::External { size: 6 });
            // depth 0 plus c(6) adjustment
            assert_eq!(tree.path_length(data.row(0)), average_path_length(6));
        }
    }

    #[test]
    fn leaf_adjustment_only_for_shared_leaves() {
        let tree = IsolationTree {
            root: Node::Internal {
                dimension: 0,
                split: 0.5,
                left: Box::new(Node::External { size: 1 }),
                right: Box::new(Node::Internal {
                    dimension: 0,
                    split: 2.0,
                    left: Box::new(Node::External { size: 3 }),
                    right: Box::new(Node::External { size: 1 }),
                }),
            },
            height_limit: 2,
        };
        assert_eq!(tree.path_length(&[0.0]), 1.0);
        assert_eq!(tree.path_length(&[5.0]), 2.0);
        assert_eq!(tree.path_length(&[1.0]), 2.0 + average_path_length(3));
    }

    #[test]
    fn split_values_lie_strictly_inside_and_depth_is_bounded() {
        let rows: Vec<Vec<f64>> = (0..300).map(|i| vec![(i % 17) as f64, (i * 7 % 13) as f64]).collect();
        let data = Dataset::from_rows(rows).unwrap();
        let forest = build_forest(&data, &ForestConfig::new(5)).unwrap();
        assert_eq!(forest.subsample, 256);
        for tree in &forest.trees {
            assert_eq!(tree.height_limit, 8);
            assert!(tree.depth() <= 8);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64).cos()]).collect();
        let data = Dataset::from_rows(rows).unwrap();
        let a = build_forest(&data, &ForestConfig::new(9)).unwrap();
        let b = build_forest(&data, &ForestConfig::new(9)).unwrap();
        assert_eq!(a, b);
        let c = build_forest(&data, &ForestConfig::new(10)).unwrap();
        assert_ne!(a, c);
        let scores = iforest_scores(&data, &a).unwrap();
        assert!(scores.iter().all(|s| *s > 0.0 && *s <= 1.0));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let one = Dataset::from_rows(vec![vec![1.0]]).unwrap();
        assert!(matches!(
            build_forest(&one, &ForestConfig::new(0)),
            Err(ForestError::TooFewObservations(1))
        ));
        let two = Dataset::from_rows(vec![vec![1.0], vec![2.0]]).unwrap();
        let zero_trees = ForestConfig {
            trees: 0,
            ..ForestConfig::new(0)
        };
        assert!(build_forest(&two, &zero_trees).is_err());
        let forest = build_forest(&two, &ForestConfig::new(0)).unwrap();
        assert!(forest.score(&[1.0, 2.0]).is_err());
    }
}
