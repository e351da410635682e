//! A small gradient-boosted decision-tree classifier.
//!
//! Binary logistic boosting with Newton leaf steps: each round fits a
//! regression tree to the loss gradient (label minus predicted probability)
//! and sets leaf values to `Σ residual / Σ p(1−p)`. Splits are exact greedy
//! variance-reduction splits over all features and thresholds, so training
//! involves no randomness at all — the same data always yields the same
//! ensemble, bit for bit.
//!
//! The entity selector needs nothing fancier: feature vectors are short
//! (four dense columns) and training sets are candidate lists, not web-scale
//! data. Depth and tree count stay configurable for tuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    /// Boosting rounds (trees).
    pub n_trees: usize,
    /// Shrinkage applied to every leaf value.
    pub learning_rate: f64,
    /// Maximum tree depth (a depth-0 tree is a single leaf).
    pub max_depth: usize,
    /// Minimum samples on each side of a split.
    pub min_samples_leaf: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        GbmConfig {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
        }
    }
}

/// A trained ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbm {
    /// Log-odds prior of the positive class.
    base_score: f64,
    learning_rate: f64,
    trees: Vec<Node>,
    n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf { value } => *value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.evaluate(x)
                } else {
                    right.evaluate(x)
                }
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Gbm {
    /// Fit an ensemble on dense feature rows with {0, 1} labels.
    pub fn train(features: &[Vec<f64>], labels: &[f64], config: &GbmConfig) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("gbm training set".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "gbm: {} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let n_features = features[0].len();
        if features.iter().any(|row| row.len() != n_features) {
            return Err(Error::InvalidConfig(
                "gbm: ragged feature rows".into(),
            ));
        }
        if config.n_trees == 0 || config.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(
                "gbm: n_trees and learning_rate must be positive".into(),
            ));
        }

        let n = features.len();
        let positive = labels.iter().sum::<f64>() / n as f64;
        let p0 = positive.clamp(1e-6, 1.0 - 1e-6);
        let base_score = (p0 / (1.0 - p0)).ln();

        let mut scores = vec![base_score; n];
        let mut trees = Vec::with_capacity(config.n_trees);
        let all: Vec<usize> = (0..n).collect();
        for _ in 0..config.n_trees {
            let mut residuals = vec![0.0; n];
            let mut hessians = vec![0.0; n];
            for i in 0..n {
                let p = sigmoid(scores[i]);
                residuals[i] = labels[i] - p;
                hessians[i] = p * (1.0 - p);
            }
            let tree = build_node(features, &residuals, &hessians, &all, config.max_depth, config);
            for i in 0..n {
                scores[i] += config.learning_rate * tree.evaluate(&features[i]);
            }
            trees.push(tree);
        }

        Ok(Gbm {
            base_score,
            learning_rate: config.learning_rate,
            trees,
            n_features,
        })
    }

    /// Positive-class probability for one feature row.
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_features, "feature arity mismatch");
        let mut score = self.base_score;
        for tree in &self.trees {
            score += self.learning_rate * tree.evaluate(x);
        }
        sigmoid(score)
    }

    /// Number of features the model was trained on.
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean logistic loss of the model on a labeled set.
    pub fn log_loss(&self, features: &[Vec<f64>], labels: &[f64]) -> f64 {
        let mut total = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let p = self.predict(x).clamp(1e-12, 1.0 - 1e-12);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        total / features.len() as f64
    }
}

/// Recursively grow a tree on the index subset `idx`.
fn build_node(
    features: &[Vec<f64>],
    residuals: &[f64],
    hessians: &[f64],
    idx: &[usize],
    depth_left: usize,
    config: &GbmConfig,
) -> Node {
    let leaf = |idx: &[usize]| {
        // Newton step: gradient sum over hessian sum, guarded against a
        // saturated node where every p is 0 or 1.
        let g: f64 = idx.iter().map(|&i| residuals[i]).sum();
        let h: f64 = idx.iter().map(|&i| hessians[i]).sum();
        Node::Leaf {
            value: if h > 1e-12 { g / h } else { 0.0 },
        }
    };

    if depth_left == 0 || idx.len() < 2 * config.min_samples_leaf.max(1) {
        return leaf(idx);
    }

    let Some((feature, threshold)) = best_split(features, residuals, idx, config) else {
        return leaf(idx);
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| features[i][feature] <= threshold);
    let left = build_node(features, residuals, hessians, &left_idx, depth_left - 1, config);
    let right = build_node(features, residuals, hessians, &right_idx, depth_left - 1, config);
    Node::Split {
        feature,
        threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Exact greedy split search: the (feature, threshold) minimizing the summed
/// squared error of residuals across the two children. Returns `None` only
/// when the node is pure or no threshold separates two points; a zero-gain
/// split is still taken, because a deeper level may recover an interaction
/// that is invisible to any single split (the XOR pattern). Ties keep the
/// first candidate in (feature, threshold) order, so the search is
/// deterministic.
fn best_split(
    features: &[Vec<f64>],
    residuals: &[f64],
    idx: &[usize],
    config: &GbmConfig,
) -> Option<(usize, f64)> {
    let n_features = features[idx[0]].len();
    let total_sum: f64 = idx.iter().map(|&i| residuals[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| residuals[i] * residuals[i]).sum();
    let parent_sse = total_sq - total_sum * total_sum / idx.len() as f64;
    if parent_sse <= 1e-12 {
        return None; // pure node: splitting cannot help at any depth
    }

    let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, sse)
    let min_leaf = config.min_samples_leaf.max(1);

    for feature in 0..n_features {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| {
            features[a][feature]
                .partial_cmp(&features[b][feature])
                .expect("non-finite feature value")
        });

        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for k in 0..order.len() - 1 {
            let i = order[k];
            left_sum += residuals[i];
            left_sq += residuals[i] * residuals[i];
            let left_n = k + 1;
            let right_n = order.len() - left_n;
            let v = features[i][feature];
            let v_next = features[order[k + 1]][feature];
            if v == v_next {
                continue; // can't separate equal values
            }
            if left_n < min_leaf || right_n < min_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / left_n as f64)
                + (right_sq - right_sum * right_sum / right_n as f64);
            if best.is_none_or(|(_, _, b)| sse < b) {
                best = Some((feature, (v + v_next) / 2.0, sse));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}
