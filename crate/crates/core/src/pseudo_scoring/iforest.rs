//! Isolation forest: random axis-aligned partitioning; anomalies isolate
//! at shallow depth.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{common_dim, FeatureVector};
use crate::rng::SeededRng;

const EULER_GAMMA: f64 = 0.577_215_664_9;

/// Average path length of an unsuccessful BST search over `n` items.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= split` go to the left child, which is the
    /// next node in preorder; `right` indexes the right child.
    Internal {
        feature: usize,
        split: f64,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    pub nodes: Vec<Node>,
    pub height_limit: usize,
}

impl IsolationTree {
    fn build(data: &[&[f64]], height_limit: usize, rng: &mut SeededRng) -> Self {
        let mut tree = IsolationTree {
            nodes: Vec::new(),
            height_limit,
        };
        let mut rows: Vec<&[f64]> = data.to_vec();
        tree.grow(&mut rows, 0, rng);
        tree
    }

    fn grow(&mut self, rows: &mut [&[f64]], depth: usize, rng: &mut SeededRng) {
        if depth >= self.height_limit || rows.len() <= 1 {
            self.nodes.push(Node::Leaf { size: rows.len() });
            return;
        }
        let dim = rows[0].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dim)
            .filter_map(|j| {
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            self.nodes.push(Node::Leaf { size: rows.len() });
            return;
        }
        let (feature, lo, hi) = ranges[rng.below(ranges.len())];
        let mut split = rng.uniform(lo, hi);
        if split >= hi {
            split = lo;
        }

        // Partition in place: left block holds x <= split.
        let mut mid = 0;
        for i in 0..rows.len() {
            if rows[i][feature] <= split {
                rows.swap(i, mid);
                mid += 1;
            }
        }
        let at = self.nodes.len();
        self.nodes.push(Node::Internal {
            feature,
            split,
            right: 0,
        });
        let (left, right) = rows.split_at_mut(mid);
        self.grow(left, depth + 1, rng);
        let right_index = self.nodes.len();
        if let Node::Internal { right, .. } = &mut self.nodes[at] {
            *right = right_index;
        }
        self.grow(right, depth + 1, rng);
    }

    /// Returns (leaf depth, leaf size) reached by `x`.
    pub fn leaf_of(&self, x: &[f64]) -> (usize, usize) {
        let mut i = 0;
        let mut depth = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { size } => return (depth, size),
                Node::Internal { feature, split, right } => {
                    i = if x[feature] <= split { i + 1 } else { right };
                    depth += 1;
                }
            }
        }
    }

    /// Leaf depth plus the expected remaining depth for the leaf's size.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let (depth, size) = self.leaf_of(x);
        depth as f64 + average_path_length(size)
    }

    pub fn max_depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize, d: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => d,
                Node::Internal { right, .. } => walk(nodes, i + 1, d + 1).max(walk(nodes, right, d + 1)),
            }
        }
        walk(&self.nodes, 0, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    /// Effective subsample size (requested size capped at the dataset size).
    pub subsample_size: usize,
    pub dim: usize,
}

impl IsolationForest {
    /// Tree `i` draws from its own stream seeded by `SeededRng::derive(seed, i)`:
    /// first the subsample (partial Fisher-Yates), then per internal node in
    /// preorder a feature index among non-constant features and a split value.
    pub fn fit(features: &[FeatureVector], n_trees: usize, subsample: usize, seed: u64) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::NotEnoughSamples {
                needed: 2,
                got: features.len(),
            });
        }
        if n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
        }
        if subsample < 2 {
            return Err(Error::InvalidArgument("subsample must be at least 2".into()));
        }
        let dim = common_dim(features)?;
        let psi = subsample.min(features.len());
        let height_limit = (psi as f64).log2().ceil() as usize;

        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = SeededRng::new(SeededRng::derive(seed, t as u64));
                let mut idx: Vec<usize> = (0..features.len()).collect();
                for i in 0..psi {
                    let j = i + rng.below(idx.len() - i);
                    idx.swap(i, j);
                }
                let rows: Vec<&[f64]> = idx[..psi].iter().map(|&i| features[i].values.as_slice()).collect();
                IsolationTree::build(&rows, height_limit, &mut rng)
            })
            .collect();

        Ok(IsolationForest {
            trees,
            subsample_size: psi,
            dim,
        })
    }

    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// `2^(-E[l(x)] / g(subsample))`, in (0, 1]; higher is more anomalous.
    pub fn score(&self, f: &FeatureVector) -> Result<f64> {
        let e = self.mean_path_length(&f.values)?;
        let g = average_path_length(self.subsample_size);
        Ok(score_from_path(e, g))
    }
}

pub fn score_from_path(mean_path: f64, normalizer: f64) -> f64 {
    if normalizer <= 0.0 {
        return 0.5;
    }
    2f64.powf(-mean_path / normalizer)
}
