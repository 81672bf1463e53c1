//! A small deterministic regression random forest (bootstrap + CART) used
//! for the nonparametric sign and rate models.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_MIN_LEAF: usize = 5;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Bagged regression trees with axis-aligned splits. `mtry` features are
/// drawn per node; prediction is the mean over trees. Fitting is sequential
/// over trees, so the result depends only on the data and the rng state.
#[derive(Debug, Clone)]
pub struct RandomForestModel {
    trees: Vec<Tree>,
    n_features: usize,
    pub n_trees: usize,
    pub min_leaf: usize,
    pub mtry: usize,
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    mtry: usize,
    n_features: usize,
}

impl<'a> Grower<'a> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64
    }

    /// Best SSE split of `idx` on `feature`, honoring the leaf-size floor.
    /// Returns (threshold, sse_reduction_proxy) where smaller is better.
    fn best_split_on(&self, idx: &mut [usize], feature: usize) -> Option<(f64, f64)> {
        idx.sort_unstable_by(|&a, &b| {
            self.rows[a][feature]
                .partial_cmp(&self.rows[b][feature])
                .expect("finite features")
        });
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mut left_sum = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for split in 1..n {
            left_sum += self.y[idx[split - 1]];
            if split < self.min_leaf || n - split < self.min_leaf {
                continue;
            }
            let a = self.rows[idx[split - 1]][feature];
            let b = self.rows[idx[split]][feature];
            if b - a < 1e-12 {
                continue; // can't separate equal values
            }
            let right_sum = total - left_sum;
            // maximizing sum of squared child means times sizes minimizes SSE
            let score = -(left_sum * left_sum / split as f64
                + right_sum * right_sum / (n - split) as f64);
            if best.map_or(true, |(_, s)| score < s) {
                best = Some((0.5 * (a + b), score));
            }
        }
        best
    }

    fn grow(&self, idx: &mut Vec<usize>, nodes: &mut Vec<Node>, rng: &mut ChaCha12Rng) -> usize {
        let node_id = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        let mean = self.mean(idx);
        let homogeneous = idx.iter().all(|&i| (self.y[i] - mean).abs() < 1e-12);
        if idx.len() < 2 * self.min_leaf || homogeneous || self.n_features == 0 {
            nodes[node_id] = Node::Leaf { value: mean };
            return node_id;
        }
        // sample mtry candidate features without replacement
        let mut features: Vec<usize> = (0..self.n_features).collect();
        for i in 0..self.mtry.min(self.n_features) {
            let j = i + (rng.gen::<u64>() as usize) % (self.n_features - i);
            features.swap(i, j);
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for &f in features.iter().take(self.mtry.min(self.n_features)) {
            if let Some((thr, score)) = self.best_split_on(idx, f) {
                if best.map_or(true, |(_, _, s)| score < s) {
                    best = Some((f, thr, score));
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            nodes[node_id] = Node::Leaf { value: mean };
            return node_id;
        };
        let mut left_idx: Vec<usize> = Vec::new();
        let mut right_idx: Vec<usize> = Vec::new();
        for &i in idx.iter() {
            if self.rows[i][feature] <= threshold {
                left_idx.push(i);
            } else {
                right_idx.push(i);
            }
        }
        let left = self.grow(&mut left_idx, nodes, rng);
        let right = self.grow(&mut right_idx, nodes, rng);
        nodes[node_id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        node_id
    }
}

impl RandomForestModel {
    /// Fit with explicit hyperparameters. `rows` are feature vectors (all
    /// the same length), `y` the regression targets.
    pub fn fit_with(
        rows: &[Vec<f64>],
        y: &[f64],
        n_trees: usize,
        min_leaf: usize,
        mtry: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("forest training rows"));
        }
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "forest: {} rows vs {} targets",
                rows.len(),
                y.len()
            )));
        }
        let n_features = rows[0].len();
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::DimensionMismatch("ragged forest rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forest training data"));
        }
        let n = rows.len();
        let grower = Grower {
            rows,
            y,
            min_leaf: min_leaf.max(1),
            mtry: mtry.max(1),
            n_features,
        };
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let mut idx: Vec<usize> = (0..n).map(|_| (rng.gen::<u64>() as usize) % n).collect();
            let mut nodes = Vec::new();
            grower.grow(&mut idx, &mut nodes, rng);
            trees.push(Tree { nodes });
        }
        Ok(Self {
            trees,
            n_features,
            n_trees,
            min_leaf,
            mtry,
        })
    }

    /// Fit with the defaults: 100 trees, leaf floor 5, mtry = ceil(d / 3).
    pub fn fit(rows: &[Vec<f64>], y: &[f64], rng: &mut ChaCha12Rng) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        let mtry = d.div_ceil(3).max(1);
        Self::fit_with(rows, y, DEFAULT_TREES, DEFAULT_MIN_LEAF, mtry, rng)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_features);
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream_rng};
    use rand::Rng;

    #[test]
    fn constant_target_predicts_constant() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let y = vec![0.7; 50];
        let mut rng = stream_rng(0, domain::TEST, 0);
        let model = RandomForestModel::fit(&rows, &y, &mut rng).unwrap();
        for i in 0..50 {
            assert!((model.predict(&[i as f64]) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn learns_a_step_function() {
        let mut rng = stream_rng(4, domain::TEST, 0);
        let rows: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen::<f64>() * 2.0 - 1.0]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| if r[0] > 0.0 { 1.0 } else { -1.0 })
            .collect();
        let model = RandomForestModel::fit(&rows, &y, &mut rng).unwrap();
        assert!(model.predict(&[0.5]) > 0.7);
        assert!(model.predict(&[-0.5]) < -0.7);
    }

    #[test]
    fn deterministic_given_stream() {
        let mut rng1 = stream_rng(9, domain::TEST, 0);
        let mut rng2 = stream_rng(9, domain::TEST, 0);
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 7) as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = (0..60).map(|i| (i % 5) as f64).collect();
        let a = RandomForestModel::fit(&rows, &y, &mut rng1).unwrap();
        let b = RandomForestModel::fit(&rows, &y, &mut rng2).unwrap();
        for i in 0..60 {
            let x = [(i % 7) as f64, (i % 3) as f64];
            assert_eq!(a.predict(&x), b.predict(&x));
        }
    }

    #[test]
    fn zero_feature_input_predicts_global_mean() {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut rng = stream_rng(1, domain::TEST, 0);
        let model = RandomForestModel::fit(&rows, &y, &mut rng).unwrap();
        // bootstrap means average out over many trees
        let pred = model.predict(&[]);
        assert!((pred - 4.5).abs() < 0.8, "pred {pred}");
    }
}
