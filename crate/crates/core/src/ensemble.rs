//! Combining engagement- and relevance-trained rankers: linear stacking of
//! two trained models, and stacked GBRT training that grows each tree from
//! one label source on a fixed interleaving schedule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelgen::LabelSource;
use crate::models::boosting::{backtrack, fit_newton_tree, mean_squared_error, pair_gradients, pair_loss};
use crate::models::{BoostEnsemble, BoostParams, PairSet, RankModel, Scorer};
use crate::util::{read_json, write_json};

pub const DEFAULT_GAMMA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

/// Mean and standard deviation used to z-score one sub-model's raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNorm {
    pub mean: f64,
    pub sd: f64,
}

impl ScoreNorm {
    pub fn fit(scores: &[f64]) -> Self {
        let mean = crate::util::mean(scores);
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len().max(1) as f64;
        let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        ScoreNorm { mean, sd }
    }

    pub fn apply(&self, s: f64) -> f64 {
        (s - self.mean) / self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub engagement: RankModel,
    pub relevance: RankModel,
    pub gamma: f64,
    /// Per-model z-normalization applied before mixing, when enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<(ScoreNorm, ScoreNorm)>,
    /// Sorted union of both sub-models' schema positions.
    #[serde(skip)]
    indices: Vec<usize>,
}

impl StackedModel {
    pub fn new(engagement: RankModel, relevance: RankModel, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if engagement.schema_id != relevance.schema_id {
            return Err(Error::Schema(format!(
                "stacked sub-models use different schemas: '{}' vs '{}'",
                engagement.schema_id, relevance.schema_id
            )));
        }
        let mut m = StackedModel {
            engagement,
            relevance,
            gamma,
            normalization: None,
            indices: Vec::new(),
        };
        m.refresh_indices();
        Ok(m)
    }

    fn refresh_indices(&mut self) {
        let mut idx: Vec<usize> = self
            .engagement
            .feature_indices
            .iter()
            .chain(&self.relevance.feature_indices)
            .copied()
            .collect();
        idx.sort_unstable();
        idx.dedup();
        self.indices = idx;
    }

    /// Enables z-normalization fitted on the sub-models' scores over `vectors`.
    pub fn with_normalization(mut self, vectors: &[Vec<f64>]) -> Self {
        let e: Vec<f64> = vectors.iter().map(|x| self.engagement.score(x)).collect();
        let r: Vec<f64> = vectors.iter().map(|x| self.relevance.score(x)).collect();
        self.normalization = Some((ScoreNorm::fit(&e), ScoreNorm::fit(&r)));
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: StackedModel = read_json(path)?;
        let mut m = StackedModel::new(raw.engagement, raw.relevance, raw.gamma)?;
        m.normalization = raw.normalization;
        Ok(m)
    }
}

/// gamma * s_e + (1 - gamma) * s_r.
pub fn stack_score(gamma: f64, s_e: f64, s_r: f64) -> f64 {
    gamma * s_e + (1.0 - gamma) * s_r
}

impl Scorer for StackedModel {
    fn schema_id(&self) -> &str {
        &self.engagement.schema_id
    }

    fn feature_indices(&self) -> &[usize] {
        &self.indices
    }

    fn score(&self, full: &[f64]) -> f64 {
        let (mut e, mut r) = (self.engagement.score(full), self.relevance.score(full));
        if let Some((ne, nr)) = &self.normalization {
            e = ne.apply(e);
            r = nr.apply(r);
        }
        stack_score(self.gamma, e, r)
    }
}

/// Source of tree `t` (0-based) under largest-remainder interleaving: the
/// source whose share is furthest behind its target after `t + 1` trees gets
/// the tree, engagement on ties.
pub fn schedule_source(gamma: f64, t: usize, engagement_so_far: usize) -> LabelSource {
    let n = (t + 1) as f64;
    let relevance_so_far = t - engagement_so_far;
    let deficit_e = gamma * n - engagement_so_far as f64;
    let deficit_r = (1.0 - gamma) * n - relevance_so_far as f64;
    if deficit_e >= deficit_r {
        LabelSource::Engagement
    } else {
        LabelSource::Relevance
    }
}

/// How the two sources enter the stacked training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackLoss {
    /// Pairwise squared hinge on both sources.
    #[default]
    Pairwise,
    /// Pairwise on engagement, squared error against relevance labels.
    Mixed,
}

/// gamma * L_e + (1 - gamma) * L_r with pairwise or pointwise relevance term.
pub fn combined_loss(
    gamma: f64,
    scores_e: &[f64],
    scores_r: &[f64],
    eng: &PairSet,
    rel: &PairSet,
    margin: f64,
    loss: StackLoss,
) -> f64 {
    let l_e = pair_loss(scores_e, &eng.pairs, margin);
    let l_r = match loss {
        StackLoss::Pairwise => pair_loss(scores_r, &rel.pairs, margin),
        StackLoss::Mixed if rel.labels.is_empty() => 0.0,
        StackLoss::Mixed => mean_squared_error(scores_r, &rel.labels),
    };
    gamma * l_e + (1.0 - gamma) * l_r
}

/// Negative gradient and curvature of the mixed loss over the engagement rows
/// followed by the relevance rows.
pub fn mixed_gradients(
    gamma: f64,
    scores_e: &[f64],
    scores_r: &[f64],
    eng: &PairSet,
    rel: &PairSet,
    margin: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (mut g, mut h) = pair_gradients(scores_e, &eng.pairs, margin);
    g.iter_mut().for_each(|v| *v *= gamma);
    h.iter_mut().for_each(|v| *v *= gamma);
    let n_r = rel.labels.len().max(1) as f64;
    for (s, y) in scores_r.iter().zip(&rel.labels) {
        g.push((1.0 - gamma) * 2.0 * (y - s) / n_r);
        h.push((1.0 - gamma) * 2.0 / n_r);
    }
    (g, h)
}

/// Stacked GBRT. With the pairwise loss each round grows one tree from the
/// source picked by [`schedule_source`], fitted to that source's pair-loss
/// gradient, and backtracks the step on the combined loss so it never rises.
/// With the mixed loss every tree is fitted on both sources' rows to the
/// gradient of the mixed objective. Returns the ensemble and the combined
/// loss before the first and after every round.
pub fn train_stacked_gbrt(
    eng: &PairSet,
    rel: &PairSet,
    gamma: f64,
    params: &BoostParams,
    loss: StackLoss,
) -> Result<(BoostEnsemble, Vec<f64>)> {
    check_gamma(gamma)?;
    params.validate()?;
    eng.validate()?;
    rel.validate()?;
    if gamma > 0.0 && eng.pairs.is_empty() {
        return Err(Error::data("stacked training needs engagement pairs when gamma > 0"));
    }
    let rel_empty = match loss {
        StackLoss::Pairwise => rel.pairs.is_empty(),
        StackLoss::Mixed => rel.rows.is_empty(),
    };
    if gamma < 1.0 && rel_empty {
        return Err(Error::data("stacked training needs relevance data when gamma < 1"));
    }
    let margin = params.margin;
    let mut ensemble = BoostEnsemble::new(0.0);
    let mut s_e = vec![0.0; eng.rows.len()];
    let mut s_r = vec![0.0; rel.rows.len()];
    let mut current = combined_loss(gamma, &s_e, &s_r, eng, rel, margin, loss);
    let mut curve = vec![current];
    let mut n_eng = 0;
    for t in 0..params.n_trees {
        let (tree, source) = match loss {
            StackLoss::Pairwise => {
                let source = schedule_source(gamma, t, n_eng);
                let (set, scores) = match source {
                    LabelSource::Engagement => (eng, &s_e),
                    LabelSource::Relevance => (rel, &s_r),
                };
                let (g, h) = pair_gradients(scores, &set.pairs, margin);
                (fit_newton_tree(&set.rows, &g, &h, params.max_depth, params.min_leaf)?, Some(source))
            }
            StackLoss::Mixed => {
                let (g, h) = mixed_gradients(gamma, &s_e, &s_r, eng, rel, margin);
                let rows: Vec<Vec<f64>> = eng.rows.iter().chain(&rel.rows).cloned().collect();
                (fit_newton_tree(&rows, &g, &h, params.max_depth, params.min_leaf)?, None)
            }
        };
        let d_e: Vec<f64> = eng.rows.iter().map(|r| tree.predict(r)).collect();
        let d_r: Vec<f64> = rel.rows.iter().map(|r| tree.predict(r)).collect();
        let (step, new_loss) = backtrack(params.learning_rate, current, |eta| {
            let te: Vec<f64> = s_e.iter().zip(&d_e).map(|(s, d)| s + eta * d).collect();
            let tr: Vec<f64> = s_r.iter().zip(&d_r).map(|(s, d)| s + eta * d).collect();
            combined_loss(gamma, &te, &tr, eng, rel, margin, loss)
        });
        if !new_loss.is_finite() {
            return Err(Error::Numerical(format!("stacked GBRT loss became {new_loss} at round {t}")));
        }
        s_e.iter_mut().zip(&d_e).for_each(|(s, d)| *s += step * d);
        s_r.iter_mut().zip(&d_r).for_each(|(s, d)| *s += step * d);
        ensemble.push(tree, step);
        if let Some(source) = source {
            if source == LabelSource::Engagement {
                n_eng += 1;
            }
            ensemble.tree_sources.push(source);
        }
        current = new_loss;
        curve.push(current);
    }
    Ok((ensemble, curve))
}

/// Picks the grid value maximizing `blend * ndcg_e + (1 - blend) * ndcg_r`
/// as reported by `evaluate(gamma) -> (ndcg_e, ndcg_r)`. Ties go to the
/// smaller gamma.
pub fn select_gamma(
    grid: &[f64],
    blend: f64,
    mut evaluate: impl FnMut(f64) -> Result<(f64, f64)>,
) -> Result<(f64, Vec<(f64, f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::config("gamma grid is empty"));
    }
    let mut sorted = grid.to_vec();
    for &g in &sorted {
        check_gamma(g)?;
    }
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut best: Option<(f64, f64)> = None;
    let mut table = Vec::with_capacity(sorted.len());
    for g in sorted {
        let (e, r) = evaluate(g)?;
        let value = blend * e + (1.0 - blend) * r;
        table.push((g, e, r));
        if best.is_none_or(|(_, v)| value > v) {
            best = Some((g, value));
        }
    }
    Ok((best.expect("non-empty grid").0, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::train_gbrt;

    fn toy(offset: f64) -> PairSet {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 + offset, ((i * 5) % 7) as f64]).collect();
        let labels: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let pairs = (0..12).flat_map(|a| (0..a).map(move |b| (a, b))).collect();
        PairSet {
            rows,
            pairs,
            labels,
            ordinals: vec![],
        }
    }

    #[test]
    fn stack_score_arithmetic() {
        assert_eq!(stack_score(0.5, 2.0, 4.0), 3.0);
        assert_eq!(stack_score(1.0, 2.0, 4.0), 2.0);
        assert_eq!(stack_score(0.0, 2.0, 4.0), 4.0);
    }

    #[test]
    fn schedule_counts_match_gamma() {
        for (gamma, t, expect) in [(0.5, 10, 5), (0.25, 8, 2), (1.0, 7, 7), (0.0, 7, 0), (0.75, 4, 3)] {
            let mut e = 0;
            for i in 0..t {
                if schedule_source(gamma, i, e) == LabelSource::Engagement {
                    e += 1;
                }
            }
            assert_eq!(e, expect, "gamma {gamma}");
        }
    }

    #[test]
    fn gamma_one_matches_single_source_gbrt() {
        let params = BoostParams {
            n_trees: 8,
            min_leaf: 1,
            ..Default::default()
        };
        let eng = toy(0.0);
        let (stacked, _) = train_stacked_gbrt(&eng, &PairSet::default(), 1.0, &params, StackLoss::Pairwise).unwrap();
        let (single, _) = train_gbrt(&eng, &params).unwrap();
        assert_eq!(stacked.trees, single.trees);
        assert_eq!(stacked.learning_rates, single.learning_rates);
        assert!(stacked.tree_sources.iter().all(|s| *s == LabelSource::Engagement));
    }

    #[test]
    fn half_gamma_splits_trees_evenly() {
        let params = BoostParams {
            n_trees: 10,
            min_leaf: 1,
            ..Default::default()
        };
        let (m, curve) = train_stacked_gbrt(&toy(0.0), &toy(0.5), 0.5, &params, StackLoss::Pairwise).unwrap();
        let n_e = m.tree_sources.iter().filter(|s| **s == LabelSource::Engagement).count();
        assert_eq!((n_e, m.len() - n_e), (5, 5));
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        assert!(train_stacked_gbrt(&toy(0.0), &toy(0.5), 1.5, &params, StackLoss::Pairwise).is_err());
    }

    #[test]
    fn mixed_loss_at_gamma_one_has_pairwise_gradient() {
        let (eng, rel) = (toy(0.0), toy(0.5));
        let s_e: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let s_r = vec![0.3; 12];
        let (g, h) = mixed_gradients(1.0, &s_e, &s_r, &eng, &rel, 1.0);
        let (pg, ph) = pair_gradients(&s_e, &eng.pairs, 1.0);
        assert_eq!(&g[..12], pg.as_slice());
        assert_eq!(&h[..12], ph.as_slice());
        assert!(g[12..].iter().chain(&h[12..]).all(|v| *v == 0.0));
    }

    #[test]
    fn gamma_selection() {
        let (g, _) = select_gamma(&[0.0, 1.0], 0.5, |g| Ok(if g == 0.0 { (0.9, 0.9) } else { (0.5, 0.5) })).unwrap();
        assert_eq!(g, 0.0);
        let (g, _) = select_gamma(&[0.25, 0.75], 0.5, |_| Ok((0.5, 0.5))).unwrap();
        assert_eq!(g, 0.25);
        assert_eq!(select_gamma(&[0.6], 0.5, |_| Ok((0.0, 0.0))).unwrap().0, 0.6);
        assert!(select_gamma(&[], 0.5, |_| Ok((0.0, 0.0))).is_err());
    }
}
