//! Pointwise (squared loss) and pairwise (squared hinge) gradient boosting.

use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, BoostEnsemble, RegressionTree};
use super::PairSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Pairwise margin; unused by pointwise boosting.
    pub margin: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 4,
            min_leaf: 5,
            margin: 1.0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("boosting needs at least one tree (T >= 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin must be non-negative"));
        }
        Ok(())
    }
}

pub fn mean_squared_error(predictions: &[f64], targets: &[f64]) -> f64 {
    predictions.iter().zip(targets).map(|(p, y)| (y - p).powi(2)).sum::<f64>() / targets.len().max(1) as f64
}

/// Pointwise boosting on squared loss. Starts from a zero score, fits each
/// tree to the current residuals and returns the training MSE before the
/// first and after every round.
pub fn train_gbdt(rows: &[Vec<f64>], targets: &[f64], params: &BoostParams) -> Result<(BoostEnsemble, Vec<f64>)> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::data("GBDT training set is empty"));
    }
    let mut ensemble = BoostEnsemble::new(0.0);
    let mut pred = vec![0.0; rows.len()];
    let mut curve = vec![mean_squared_error(&pred, targets)];
    for _ in 0..params.n_trees {
        let residuals: Vec<f64> = targets.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let tree = fit_tree(rows, &residuals, params.max_depth, params.min_leaf)?;
        for (p, r) in pred.iter_mut().zip(rows) {
            *p += params.learning_rate * tree.predict(r);
        }
        ensemble.push(tree, params.learning_rate);
        let loss = mean_squared_error(&pred, targets);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("GBDT loss became {loss} after {} trees", ensemble.len())));
        }
        curve.push(loss);
    }
    Ok((ensemble, curve))
}

/// Mean over pairs of max(0, s_other - s_preferred + margin)^2.
pub fn pair_loss(scores: &[f64], pairs: &[(usize, usize)], margin: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|&(j, k)| (scores[k] - scores[j] + margin).max(0.0).powi(2))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Negative gradient and diagonal curvature of the mean pair loss per instance.
pub fn pair_gradients(scores: &[f64], pairs: &[(usize, usize)], margin: f64) -> (Vec<f64>, Vec<f64>) {
    let mut neg_grad = vec![0.0; scores.len()];
    let mut hess = vec![0.0; scores.len()];
    if pairs.is_empty() {
        return (neg_grad, hess);
    }
    let scale = 1.0 / pairs.len() as f64;
    for &(j, k) in pairs {
        let m = scores[k] - scores[j] + margin;
        if m > 0.0 {
            neg_grad[j] += 2.0 * m * scale;
            neg_grad[k] -= 2.0 * m * scale;
            hess[j] += 2.0 * scale;
            hess[k] += 2.0 * scale;
        }
    }
    (neg_grad, hess)
}

/// Fits a tree to the negative gradient and sets each leaf to the Newton
/// step sum(g)/sum(h) over its rows (0 for rows with no active pairs).
pub fn fit_newton_tree(
    rows: &[Vec<f64>],
    neg_grad: &[f64],
    hess: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    let mut tree = fit_tree(rows, neg_grad, max_depth, min_leaf)?;
    let mut g_sum = vec![0.0; tree.nodes.len()];
    let mut h_sum = vec![0.0; tree.nodes.len()];
    for (i, r) in rows.iter().enumerate() {
        let leaf = tree.leaf_index(r);
        g_sum[leaf] += neg_grad[i];
        h_sum[leaf] += hess[i];
    }
    tree.map_leaves(|i, _| if h_sum[i] > 0.0 { g_sum[i] / h_sum[i] } else { 0.0 });
    Ok(tree)
}

/// Largest step in {rate, rate/2, ...} (at most 30 halvings) whose candidate
/// loss does not exceed `current`; 0 when none does. Returns the step and the
/// loss after taking it.
pub fn backtrack(rate: f64, current: f64, mut loss_at: impl FnMut(f64) -> f64) -> (f64, f64) {
    let mut step = rate;
    for _ in 0..=30 {
        let l = loss_at(step);
        if l <= current {
            return (step, l);
        }
        step *= 0.5;
    }
    (0.0, current)
}

/// Pairwise boosting on the squared hinge. Each round fits a tree to the
/// negative gradient at the current ensemble, takes Newton leaf values, and
/// backtracks the step so the mean pair loss never increases. Returns the
/// ensemble and the pair loss before the first and after every round.
pub fn train_gbrt(set: &PairSet, params: &BoostParams) -> Result<(BoostEnsemble, Vec<f64>)> {
    params.validate()?;
    if set.pairs.is_empty() {
        return Err(Error::data("GBRT needs at least one preference pair"));
    }
    set.validate()?;
    let mut ensemble = BoostEnsemble::new(0.0);
    let mut scores = vec![0.0; set.rows.len()];
    let mut loss = pair_loss(&scores, &set.pairs, params.margin);
    let mut curve = vec![loss];
    for _ in 0..params.n_trees {
        let (g, h) = pair_gradients(&scores, &set.pairs, params.margin);
        let tree = fit_newton_tree(&set.rows, &g, &h, params.max_depth, params.min_leaf)?;
        let deltas: Vec<f64> = set.rows.iter().map(|r| tree.predict(r)).collect();
        let (step, new_loss) = backtrack(params.learning_rate, loss, |eta| {
            let trial: Vec<f64> = scores.iter().zip(&deltas).map(|(s, d)| s + eta * d).collect();
            pair_loss(&trial, &set.pairs, params.margin)
        });
        if !new_loss.is_finite() {
            return Err(Error::Numerical(format!("GBRT pair loss became {new_loss}")));
        }
        for (s, d) in scores.iter_mut().zip(&deltas) {
            *s += step * d;
        }
        ensemble.push(tree, step);
        loss = new_loss;
        curve.push(loss);
    }
    Ok((ensemble, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_for;
    use rand::Rng;

    fn dataset(seed: u64, n: usize, f: impl Fn(&[f64]) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = rng_for(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = rows.iter().map(|r| f(r)).collect();
        (rows, y)
    }

    #[test]
    fn one_round_depth_zero_predicts_mean() {
        let (rows, y) = dataset(1, 50, |r| r[0] * 3.0 + 1.0);
        let params = BoostParams {
            n_trees: 1,
            learning_rate: 1.0,
            max_depth: 0,
            ..Default::default()
        };
        let (model, _) = train_gbdt(&rows, &y, &params).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((model.predict(&rows[0]) - mean).abs() < 1e-12);
    }

    #[test]
    fn single_instance_exact_fit() {
        let params = BoostParams {
            n_trees: 1,
            learning_rate: 1.0,
            ..Default::default()
        };
        let (model, curve) = train_gbdt(&[vec![0.3, 0.1]], &[4.2], &params).unwrap();
        assert_eq!(model.predict(&[0.3, 0.1]), 4.2);
        assert_eq!(*curve.last().unwrap(), 0.0);
    }

    #[test]
    fn gbdt_loss_non_increasing() {
        let (rows, y) = dataset(2, 300, |r| (3.0 * r[0]).sin() + r[1] * r[2]);
        let params = BoostParams {
            n_trees: 50,
            ..Default::default()
        };
        let (_, curve) = train_gbdt(&rows, &y, &params).unwrap();
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        assert!(curve[50] <= curve[1]);
        assert!(train_gbdt(&rows, &y, &BoostParams { n_trees: 0, ..params }).is_err());
    }

    #[test]
    fn separated_pair_has_zero_gradient() {
        let (g, h) = pair_gradients(&[2.5, 0.0], &[(0, 1)], 1.0);
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(h, vec![0.0, 0.0]);
        let rows = vec![vec![1.0], vec![0.0]];
        let tree = fit_newton_tree(&rows, &g, &h, 2, 1).unwrap();
        assert!(rows.iter().all(|r| tree.predict(r) == 0.0));
    }

    #[test]
    fn single_violated_pair_gets_ordered() {
        let set = PairSet {
            rows: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            pairs: vec![(0, 1)],
            labels: vec![1.0, 0.0],
            ordinals: vec![],
        };
        let params = BoostParams {
            n_trees: 20,
            min_leaf: 1,
            ..Default::default()
        };
        let (model, curve) = train_gbrt(&set, &params).unwrap();
        assert!(model.predict(&set.rows[0]) > model.predict(&set.rows[1]));
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        assert!(train_gbrt(&PairSet { pairs: vec![], ..set }, &params).is_err());
    }
}
