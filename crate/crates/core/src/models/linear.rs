use serde::{Deserialize, Serialize};

use super::boosting::backtrack;
use super::PairSet;
use crate::error::{Error, Result};

/// Per-feature z-scoring fitted on training rows. Constant features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(x.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s));
    }
}

/// The quadratically smoothed hinge max(0, 1 - margin)^2.
pub fn smoothed_hinge(margin: f64) -> f64 {
    (1.0 - margin).max(0.0).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    /// Weight of the mean pair loss against the 1/2 |w|^2 regularizer.
    pub c: f64,
    pub epochs: usize,
    pub step: f64,
    /// Per-epoch decay of the base step: step / (1 + decay * epoch).
    pub decay: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 10.0,
            epochs: 300,
            step: 0.5,
            decay: 0.01,
        }
    }
}

/// Linear scorer w . standardize(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub standardizer: Standardizer,
}

impl LinearScorer {
    pub fn score(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.weights)
            .zip(self.standardizer.mean.iter().zip(&self.standardizer.scale))
            .map(|((v, w), (m, s))| w * (v - m) / s)
            .sum()
    }
}

fn diffs(set: &PairSet, z: &Standardizer) -> Vec<Vec<f64>> {
    let zs: Vec<Vec<f64>> = set.rows.iter().map(|r| z.apply(r)).collect();
    set.pairs
        .iter()
        .map(|&(j, k)| zs[j].iter().zip(&zs[k]).map(|(a, b)| a - b).collect())
        .collect()
}

/// 1/2 |w|^2 + c * mean_pairs max(0, 1 - w.(x_preferred - x_other))^2.
pub fn svm_objective(w: &[f64], diffs: &[Vec<f64>], c: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    if diffs.is_empty() {
        return reg;
    }
    let loss: f64 = diffs.iter().map(|d| smoothed_hinge(crate::util::dot(w, d))).sum::<f64>() / diffs.len() as f64;
    reg + c * loss
}

fn svm_gradient(w: &[f64], diffs: &[Vec<f64>], c: f64) -> Vec<f64> {
    let mut g = w.to_vec();
    let scale = 2.0 * c / diffs.len().max(1) as f64;
    for d in diffs {
        let slack = 1.0 - crate::util::dot(w, d);
        if slack > 0.0 {
            for (gi, di) in g.iter_mut().zip(d) {
                *gi -= scale * slack * di;
            }
        }
    }
    g
}

/// Full-batch gradient descent on the RankSVM objective over standardized
/// features. The step decays per epoch and is halved further whenever a step
/// would raise the objective, so the recorded objective never increases.
pub fn train_ranksvm(set: &PairSet, params: &SvmParams) -> Result<(LinearScorer, Vec<f64>)> {
    if !(params.c >= 0.0 && params.c.is_finite()) {
        return Err(Error::config(format!("RankSVM C must be non-negative, got {}", params.c)));
    }
    if set.pairs.is_empty() {
        return Err(Error::data("RankSVM needs at least one preference pair"));
    }
    set.validate()?;
    let standardizer = Standardizer::fit(&set.rows);
    let d = diffs(set, &standardizer);
    let mut w = vec![0.0; set.rows[0].len()];
    let mut obj = svm_objective(&w, &d, params.c);
    let mut curve = vec![obj];
    let mut shrink = 1.0;
    for epoch in 0..params.epochs {
        let g = svm_gradient(&w, &d, params.c);
        let base = shrink * params.step / (1.0 + params.decay * epoch as f64);
        let (step, new_obj) = backtrack(base, obj, |eta| {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - eta * gi).collect();
            svm_objective(&trial, &d, params.c)
        });
        if step < base {
            shrink *= step.max(base * 1e-9) / base;
        }
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= step * gi);
        if !new_obj.is_finite() {
            return Err(Error::Numerical(format!("RankSVM objective became {new_obj} at epoch {epoch}")));
        }
        obj = new_obj;
        curve.push(obj);
    }
    Ok((LinearScorer { weights: w, standardizer }, curve))
}
