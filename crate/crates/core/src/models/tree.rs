use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelgen::LabelSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A binary regression tree stored as a node arena rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
            max_depth: 0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Leaf index reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Replaces every leaf value through `f(leaf_node_index, old_value)`.
    pub fn map_leaves(&mut self, mut f: impl FnMut(usize, f64) -> f64) {
        for (i, n) in self.nodes.iter_mut().enumerate() {
            if let Node::Leaf { value } = n {
                *value = f(i, *value);
            }
        }
    }
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    targets: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn mean(&self, idx: &[u32]) -> f64 {
        idx.iter().map(|&i| self.targets[i as usize]).sum::<f64>() / idx.len() as f64
    }

    /// `sorted[f]` lists this node's rows ordered by feature f.
    fn best_split(&self, sorted: &[Vec<u32>]) -> Option<BestSplit> {
        let n = sorted[0].len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let total: f64 = sorted[0].iter().map(|&i| self.targets[i as usize]).sum();
        let total_sq: f64 = sorted[0].iter().map(|&i| self.targets[i as usize].powi(2)).sum();
        let parent_sse = total_sq - total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        for (f, order) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                let i = order[k] as usize;
                left_sum += self.targets[i];
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let here = self.rows[i][f];
                let next = self.rows[order[k + 1] as usize][f];
                if next <= here {
                    continue;
                }
                let right_sum = total - left_sum;
                // SSE reduction = sum_l^2/n_l + sum_r^2/n_r - total^2/n.
                let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64
                    - total * total / n as f64;
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mut threshold = 0.5 * (here + next);
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        // Ignore gains that are rounding noise relative to the node's spread.
        best.filter(|b| b.gain > 1e-12 * parent_sse.abs().max(1e-300) && b.gain > 1e-300)
    }

    fn build(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let id = self.nodes.len();
        let value = self.mean(&sorted[0]);
        self.nodes.push(Node::Leaf { value });
        if depth >= self.max_depth {
            return id;
        }
        let Some(split) = self.best_split(&sorted) else {
            return id;
        };
        let goes_left = |i: u32| self.rows[i as usize][split.feature] <= split.threshold;
        let mut left_sorted = Vec::with_capacity(sorted.len());
        let mut right_sorted = Vec::with_capacity(sorted.len());
        for order in &sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = order.iter().partition(|&&i| goes_left(i));
            left_sorted.push(l);
            right_sorted.push(r);
        }
        drop(sorted);
        let left = self.build(left_sorted, depth + 1);
        let right = self.build(right_sorted, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Greedy variance-reduction regression tree; leaves hold the mean target.
pub fn fit_tree(rows: &[Vec<f64>], targets: &[f64], max_depth: usize, min_leaf: usize) -> Result<RegressionTree> {
    if rows.is_empty() {
        return Err(Error::data("cannot fit a tree to zero instances"));
    }
    if rows.len() != targets.len() {
        return Err(Error::data(format!("{} rows but {} targets", rows.len(), targets.len())));
    }
    let n_features = rows[0].len();
    if rows.iter().any(|r| r.len() != n_features) {
        return Err(Error::data("ragged feature rows"));
    }
    let min_leaf = min_leaf.max(1);
    let sorted: Vec<Vec<u32>> = if n_features == 0 {
        vec![(0..rows.len() as u32).collect()]
    } else {
        (0..n_features)
            .map(|f| {
                let mut order: Vec<u32> = (0..rows.len() as u32).collect();
                order.sort_by(|&a, &b| rows[a as usize][f].total_cmp(&rows[b as usize][f]).then(a.cmp(&b)));
                order
            })
            .collect()
    };
    let mut builder = Builder {
        rows,
        targets,
        max_depth: if n_features == 0 { 0 } else { max_depth },
        min_leaf,
        nodes: Vec::new(),
    };
    builder.build(sorted, 0);
    Ok(RegressionTree {
        nodes: builder.nodes,
        max_depth,
    })
}

/// Additive tree model: prediction = base + sum_t rate_t * tree_t(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostEnsemble {
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub learning_rates: Vec<f64>,
    /// Label source each tree was grown from, for cross-source stacked training.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tree_sources: Vec<LabelSource>,
}

impl BoostEnsemble {
    pub fn new(base_score: f64) -> Self {
        BoostEnsemble {
            base_score,
            trees: Vec::new(),
            learning_rates: Vec::new(),
            tree_sources: Vec::new(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base_score
            + self
                .trees
                .iter()
                .zip(&self.learning_rates)
                .map(|(t, &eta)| eta * t.predict(x))
                .sum::<f64>()
    }

    pub fn push(&mut self, tree: RegressionTree, rate: f64) {
        self.trees.push(tree);
        self.learning_rates.push(rate);
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mse(tree: &RegressionTree, rows: &[Vec<f64>], y: &[f64]) -> f64 {
        rows.iter().zip(y).map(|(r, t)| (tree.predict(r) - t).powi(2)).sum::<f64>() / y.len() as f64
    }

    #[test]
    fn depth_zero_is_global_mean() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let t = fit_tree(&rows, &[1.0, 2.0, 6.0], 0, 1).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[10.0]), 3.0);
    }

    #[test]
    fn separable_fit_is_exact() {
        let rows: Vec<Vec<f64>> = (-5..5).map(|i| vec![i as f64 + 0.5]).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] < 0.0 { -1.0 } else { 1.0 }).collect();
        let t = fit_tree(&rows, &y, 1, 1).unwrap();
        assert_eq!(mse(&t, &rows, &y), 0.0);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn constant_targets_single_leaf() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let t = fit_tree(&rows, &[3.5; 20], 6, 1).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[0.0, 0.0]), 3.5);
    }

    #[test]
    fn respects_depth_and_min_leaf() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64, ((i * 37) % 64) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (r[0] * 0.3).sin() + r[1] * 0.01).collect();
        let t = fit_tree(&rows, &y, 3, 5).unwrap();
        assert!(t.depth() <= 3);
        let mut counts = vec![0usize; t.nodes.len()];
        for r in &rows {
            counts[t.leaf_index(r)] += 1;
        }
        for (i, n) in t.nodes.iter().enumerate() {
            if matches!(n, Node::Leaf { .. }) {
                assert!(counts[i] >= 5, "leaf {i} has {} rows", counts[i]);
            }
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(fit_tree(&[], &[], 2, 1).is_err());
    }
}
