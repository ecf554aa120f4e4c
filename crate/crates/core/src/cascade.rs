//! The multi-stage ranking funnel: each stage scores the previous stage's
//! survivors with its own model over its own feature subset and keeps the
//! top `keep_top`; an optional last stage re-ranks greedily for freshness,
//! localness and diversity.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ensemble::StackedModel;
use crate::error::{Error, Result};
use crate::featurize::{Feature, FeatureSchema, Featurizer};
use crate::models::{sort_scored, RankModel, Scorer};
use crate::synthlog::{Pin, PinId, Query, QueryId, SegmentId, UserSegment};
use crate::util::{cosine, hash_unit, median, read_json};

/// Model reference that re-uses the previous stage's score unchanged.
pub const IDENTITY_MODEL: &str = "identity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    /// Key into the loaded model set, or "identity".
    pub model: String,
    pub feature_subset: String,
    pub keep_top: usize,
    /// Marks the final greedy re-ranking stage.
    #[serde(default)]
    pub rerank: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RerankPolicy {
    pub freshness_weight: f64,
    pub localness_weight: f64,
    /// Subtracted per unit of max latent cosine to already placed pins.
    pub diversity_penalty: f64,
    /// Minimum share of fresh pins in every prefix of the re-ranked list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_fresh_ratio: Option<f64>,
}

impl RerankPolicy {
    pub fn is_noop(&self) -> bool {
        self.freshness_weight == 0.0
            && self.localness_weight == 0.0
            && self.diversity_penalty == 0.0
            && self.min_fresh_ratio.is_none_or(|r| r == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub rerank_policy: RerankPolicy,
}

impl CascadeConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Every structural problem, named; empty when the config is usable.
    pub fn violations(&self, schema: &FeatureSchema) -> Vec<String> {
        let mut out = Vec::new();
        if self.stages.is_empty() {
            out.push("cascade has no stages".to_string());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.keep_top == 0 {
                out.push(format!("stage '{}' has keep_top = 0", s.name));
            }
            if schema.subset_indices(&s.feature_subset).is_err() {
                out.push(format!(
                    "stage '{}' uses unknown feature subset '{}' (known: {})",
                    s.name,
                    s.feature_subset,
                    schema.stage_subsets.keys().cloned().collect::<Vec<_>>().join(", ")
                ));
            }
            if s.rerank && i + 1 != self.stages.len() {
                out.push(format!("re-ranking stage '{}' must be the last stage", s.name));
            }
            if i > 0 && s.keep_top >= self.stages[i - 1].keep_top {
                out.push(format!(
                    "keep_top must strictly decrease: stage '{}' keeps {} after '{}' kept {}",
                    s.name,
                    s.keep_top,
                    self.stages[i - 1].name,
                    self.stages[i - 1].keep_top
                ));
            }
        }
        let p = &self.rerank_policy;
        if let Some(r) = p.min_fresh_ratio {
            if !(0.0..=1.0).contains(&r) {
                out.push(format!("min_fresh_ratio must lie in [0, 1], got {r}"));
            }
        }
        for (name, v) in [
            ("freshness_weight", p.freshness_weight),
            ("localness_weight", p.localness_weight),
            ("diversity_penalty", p.diversity_penalty),
        ] {
            if !v.is_finite() {
                out.push(format!("{name} must be finite"));
            }
        }
        out
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        let v = self.violations(schema);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }
}

/// A single trained model or a stacked pair, loaded from JSON.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Single(RankModel),
    Stacked(StackedModel),
}

impl LoadedModel {
    /// Loads either model file format, telling them apart by the `gamma` key.
    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = read_json(path)?;
        if value.get("gamma").is_some() {
            Ok(LoadedModel::Stacked(StackedModel::load(path)?))
        } else {
            Ok(LoadedModel::Single(RankModel::load(path)?))
        }
    }
}

impl Scorer for LoadedModel {
    fn schema_id(&self) -> &str {
        match self {
            LoadedModel::Single(m) => m.schema_id(),
            LoadedModel::Stacked(m) => m.schema_id(),
        }
    }

    fn feature_indices(&self) -> &[usize] {
        match self {
            LoadedModel::Single(m) => m.feature_indices(),
            LoadedModel::Stacked(m) => m.feature_indices(),
        }
    }

    fn score(&self, full: &[f64]) -> f64 {
        match self {
            LoadedModel::Single(m) => m.score(full),
            LoadedModel::Stacked(m) => m.score(full),
        }
    }
}

pub type ModelSet = BTreeMap<String, LoadedModel>;

struct ResolvedStage<'m> {
    config: StageConfig,
    indices: Vec<usize>,
    /// None for the identity model.
    model: Option<&'m dyn Scorer>,
}

/// A validated config bound to loaded models and a feature schema.
pub struct Cascade<'m> {
    stages: Vec<ResolvedStage<'m>>,
    policy: RerankPolicy,
    freshness_index: usize,
    locale_index: usize,
    diversity_index: usize,
}

impl<'m> Cascade<'m> {
    /// Checks the config and that each stage's model reads only features of
    /// that stage's subset.
    pub fn new(config: &CascadeConfig, models: &'m ModelSet, schema: &FeatureSchema) -> Result<Self> {
        config.validate(schema)?;
        let mut stages = Vec::with_capacity(config.stages.len());
        for s in &config.stages {
            let indices = schema.subset_indices(&s.feature_subset)?;
            let model: Option<&dyn Scorer> = if s.model == IDENTITY_MODEL {
                if s.rerank {
                    None
                } else {
                    return Err(Error::config(format!(
                        "stage '{}': the identity model is only valid for re-ranking",
                        s.name
                    )));
                }
            } else {
                let m = models
                    .get(&s.model)
                    .ok_or_else(|| Error::config(format!("stage '{}' references unknown model '{}'", s.name, s.model)))?;
                if m.schema_id() != schema.schema_id {
                    return Err(Error::Schema(format!(
                        "stage '{}': model schema '{}' differs from '{}'",
                        s.name,
                        m.schema_id(),
                        schema.schema_id
                    )));
                }
                if let Some(i) = m.feature_indices().iter().find(|i| !indices.contains(i)) {
                    return Err(Error::Schema(format!(
                        "stage '{}': model '{}' reads feature '{}' outside subset '{}'",
                        s.name, s.model, schema.names[*i], s.feature_subset
                    )));
                }
                Some(m)
            };
            stages.push(ResolvedStage {
                config: s.clone(),
                indices,
                model,
            });
        }
        let idx = |f: Feature| {
            schema
                .index_of(f.name())
                .ok_or_else(|| Error::Schema(format!("schema lacks feature '{}'", f.name())))
        };
        Ok(Cascade {
            stages,
            policy: config.rerank_policy,
            freshness_index: idx(Feature::Freshness)?,
            locale_index: idx(Feature::LocaleMatch)?,
            diversity_index: idx(Feature::Diversity)?,
        })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_names(&self) -> Vec<String> {
        self.stages.iter().map(|s| s.config.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub pin_id: PinId,
    pub score: f64,
    /// Score from each stage the pin passed through, in stage order.
    pub stage_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: QueryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<SegmentId>,
    pub entries: Vec<RankedEntry>,
    /// Candidate count followed by the survivor count of each stage.
    pub counts: Vec<usize>,
    /// Wall time per stage in milliseconds; never serialized.
    #[serde(skip)]
    pub timings_ms: Vec<f64>,
}

impl RankedList {
    pub fn pin_ids(&self) -> Vec<PinId> {
        self.entries.iter().map(|e| e.pin_id).collect()
    }

    pub fn to_result(&self) -> crate::evalkit::RankedResult {
        crate::evalkit::RankedResult {
            query_id: self.query_id,
            segment_id: self.segment_id,
            pin_ids: self.pin_ids(),
        }
    }
}

struct Cand<'p> {
    pin: &'p Pin,
    score: f64,
    stage_scores: Vec<f64>,
}

fn order(a: &Cand, b: &Cand) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.pin.pin_id.cmp(&b.pin.pin_id))
}

/// Keeps the `k` best candidates, sorted.
fn keep_top(mut cands: Vec<Cand<'_>>, k: usize) -> Vec<Cand<'_>> {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, order);
        cands.truncate(k);
    }
    cands.sort_by(order);
    cands
}

/// Runs every stage over `candidates` for one query and segment.
pub fn run_cascade(
    cascade: &Cascade<'_>,
    featurizer: &Featurizer<'_>,
    query: &Query,
    segment: &UserSegment,
    segment_id: Option<SegmentId>,
    candidates: &[&Pin],
) -> Result<RankedList> {
    if candidates.is_empty() {
        return Err(Error::data(format!("query {} has no candidates", query.query_id)));
    }
    let mut cands: Vec<Cand> = candidates
        .iter()
        .map(|&pin| Cand {
            pin,
            score: 0.0,
            stage_scores: Vec::with_capacity(cascade.stages.len()),
        })
        .collect();
    let mut counts = vec![cands.len()];
    let mut timings_ms = Vec::with_capacity(cascade.stages.len());
    for stage in &cascade.stages {
        let start = Instant::now();
        cands = if stage.config.rerank {
            rerank_stage(cascade, stage, featurizer, query, segment, cands)
        } else {
            let model = stage.model.expect("non-rerank stages have a model");
            let mut x = vec![0.0; featurizer.schema().len()];
            for c in &mut cands {
                featurizer.fill_subset(query, segment, c.pin, &stage.indices, &mut x);
                c.score = model.score(&x);
                c.stage_scores.push(c.score);
            }
            keep_top(cands, stage.config.keep_top)
        };
        timings_ms.push(start.elapsed().as_secs_f64() * 1e3);
        counts.push(cands.len());
    }
    Ok(RankedList {
        query_id: query.query_id,
        segment_id,
        entries: cands
            .into_iter()
            .map(|c| RankedEntry {
                pin_id: c.pin.pin_id,
                score: c.score,
                stage_scores: c.stage_scores,
            })
            .collect(),
        counts,
        timings_ms,
    })
}

fn rerank_stage<'p>(
    cascade: &Cascade<'_>,
    stage: &ResolvedStage<'_>,
    featurizer: &Featurizer<'_>,
    query: &Query,
    segment: &UserSegment,
    cands: Vec<Cand<'p>>,
) -> Vec<Cand<'p>> {
    let policy = &cascade.policy;
    let k = stage.config.keep_top;
    if stage.model.is_none() && policy.is_noop() {
        let mut kept = keep_top(cands, k);
        for c in &mut kept {
            c.stage_scores.push(c.score);
        }
        return kept;
    }
    let features: Vec<Vec<f64>> = cands
        .iter()
        .map(|c| featurizer.featurize_subset(query, segment, c.pin, &stage.indices).values)
        .collect();
    let items: Vec<RerankItem> = cands
        .iter()
        .zip(features)
        .map(|(c, x)| RerankItem {
            pin_id: c.pin.pin_id,
            prior_score: c.score,
            fresh: c.pin.is_fresh(),
            latent: &c.pin.latent_vec,
            features: x,
        })
        .collect();
    // Without a re-ranking model the previous stage's scores are min-max
    // scaled to [0, 1] so policy weights have a fixed meaning.
    let (lo, hi) = items
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(i.prior_score), hi.max(i.prior_score)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let base = |item: &RerankItem, x: &[f64]| match stage.model {
        Some(m) => m.score(x),
        None => (item.prior_score - lo) / span,
    };
    let placed = greedy_rerank(&items, policy, k, cascade, base);
    let n = placed.len();
    let mut slots: Vec<Option<Cand<'p>>> = cands.into_iter().map(Some).collect();
    placed
        .into_iter()
        .enumerate()
        .map(|(rank, (idx, marginal))| {
            let mut c = slots[idx].take().expect("each candidate placed once");
            c.stage_scores.push(marginal);
            // Positional score keeps the list sorted by score even though
            // marginal scores need not decrease along the greedy order.
            c.score = (n - rank) as f64 / n as f64;
            c
        })
        .collect()
}

pub struct RerankItem<'a> {
    pub pin_id: PinId,
    pub prior_score: f64,
    pub fresh: bool,
    pub latent: &'a [f64],
    /// Full schema-length vector with the re-ranking subset filled in.
    pub features: Vec<f64>,
}

/// Greedy placement: each slot takes the candidate maximizing
/// base + w_f * freshness + w_l * locale_match - penalty * max_sim, where
/// max_sim is the largest latent cosine to pins already placed and the
/// diversity feature is set to 1 - max_sim before the base model scores.
/// When `min_fresh_ratio` is set and a fresh pin remains, a slot that would
/// leave fewer than floor(ratio * (slot + 1)) fresh pins placed goes to the
/// best fresh candidate instead. Returns (item index, marginal score).
fn greedy_rerank(
    items: &[RerankItem],
    policy: &RerankPolicy,
    k: usize,
    cascade: &Cascade<'_>,
    base: impl Fn(&RerankItem, &[f64]) -> f64,
) -> Vec<(usize, f64)> {
    let n = items.len();
    let k = k.min(n);
    let mut max_sim = vec![0.0f64; n];
    let mut used = vec![false; n];
    let mut placed: Vec<(usize, f64)> = Vec::with_capacity(k);
    let mut fresh_placed = 0usize;
    let mut x = vec![0.0; items.first().map_or(0, |i| i.features.len())];
    for slot in 0..k {
        let mut best: Option<(usize, f64)> = None;
        let mut best_fresh: Option<(usize, f64)> = None;
        for (i, item) in items.iter().enumerate() {
            if used[i] {
                continue;
            }
            x.copy_from_slice(&item.features);
            x[cascade.diversity_index] = 1.0 - max_sim[i];
            let s = base(item, &x)
                + policy.freshness_weight * x[cascade.freshness_index]
                + policy.localness_weight * x[cascade.locale_index]
                - policy.diversity_penalty * max_sim[i];
            let better = |b: &Option<(usize, f64)>| match b {
                None => true,
                Some((j, bs)) => s > *bs || (s == *bs && item.pin_id < items[*j].pin_id),
            };
            if better(&best) {
                best = Some((i, s));
            }
            if item.fresh && better(&best_fresh) {
                best_fresh = Some((i, s));
            }
        }
        let (mut pick, mut score) = best.expect("slot < remaining candidates");
        if let (Some(ratio), Some(fresh)) = (policy.min_fresh_ratio, best_fresh) {
            let required = (ratio * (slot + 1) as f64).floor() as usize;
            if !items[pick].fresh && fresh_placed < required {
                (pick, score) = fresh;
            }
        }
        used[pick] = true;
        fresh_placed += usize::from(items[pick].fresh);
        placed.push((pick, score));
        // Tracked even without a penalty: the diversity feature feeds the base model.
        for (i, item) in items.iter().enumerate() {
            if !used[i] {
                max_sim[i] = max_sim[i].max(cosine(item.latent, items[pick].latent));
            }
        }
    }
    placed
}

/// Latency bucket edges in milliseconds: < 50, 50-200, > 200.
pub const LATENCY_EDGES_MS: [f64; 2] = [50.0, 200.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub edges_ms: Vec<f64>,
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    /// Mean per-stage milliseconds, when measured.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mean_stage_ms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_query_ms: Vec<f64>,
}

impl LatencyHistogram {
    pub fn from_durations(durations_ms: &[f64], edges_ms: &[f64]) -> Self {
        let mut counts = vec![0; edges_ms.len() + 1];
        for &d in durations_ms {
            counts[edges_ms.iter().take_while(|&&e| d >= e).count()] += 1;
        }
        let n = durations_ms.len().max(1) as f64;
        LatencyHistogram {
            edges_ms: edges_ms.to_vec(),
            fractions: counts.iter().map(|&c| c as f64 / n).collect(),
            counts,
            mean_stage_ms: Vec::new(),
            per_query_ms: durations_ms.to_vec(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.counts.len());
        for (i, _) in self.counts.iter().enumerate() {
            out.push(match (i.checked_sub(1).map(|j| self.edges_ms[j]), self.edges_ms.get(i)) {
                (None, Some(hi)) => format!("<{hi}ms"),
                (Some(lo), Some(hi)) => format!("{lo}-{hi}ms"),
                (Some(lo), None) => format!(">{lo}ms"),
                (None, None) => "all".to_string(),
            });
        }
        out
    }
}

pub const WARMUP_RUNS: usize = 3;

type Runner<'a> = &'a mut dyn FnMut(usize) -> Result<Vec<f64>>;

/// Times `run(query_index)` for each query: `WARMUP_RUNS` discarded calls,
/// then the median of `reps` timed calls. `run` returns per-stage
/// milliseconds, averaged into the histogram's stage means.
pub fn measure_latency(
    n_queries: usize,
    reps: usize,
    mut run: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<LatencyHistogram> {
    let mut hists = measure_interleaved(n_queries, reps, &mut [&mut run])?;
    Ok(hists.remove(0))
}

/// Like [`measure_latency`] for two workloads, alternating them within every
/// repetition so background load affects both alike.
pub fn measure_latency_paired(
    n_queries: usize,
    reps: usize,
    mut a: impl FnMut(usize) -> Result<Vec<f64>>,
    mut b: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<(LatencyHistogram, LatencyHistogram)> {
    let mut hists = measure_interleaved(n_queries, reps, &mut [&mut a, &mut b])?;
    let hb = hists.pop().expect("two histograms");
    let ha = hists.pop().expect("two histograms");
    Ok((ha, hb))
}

fn measure_interleaved(n_queries: usize, reps: usize, runs: &mut [Runner<'_>]) -> Result<Vec<LatencyHistogram>> {
    if n_queries == 0 {
        return Err(Error::config("latency workload is empty"));
    }
    let reps = reps.max(1);
    let k = runs.len();
    let mut per_query = vec![Vec::with_capacity(n_queries); k];
    let mut stage_sum: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut stage_n = 0usize;
    for q in 0..n_queries {
        for _ in 0..WARMUP_RUNS {
            for run in runs.iter_mut() {
                run(q)?;
            }
        }
        let mut times = vec![Vec::with_capacity(reps); k];
        for _ in 0..reps {
            for (i, run) in runs.iter_mut().enumerate() {
                let start = Instant::now();
                let stages = run(q)?;
                times[i].push(start.elapsed().as_secs_f64() * 1e3);
                let sum = &mut stage_sum[i];
                if sum.len() < stages.len() {
                    sum.resize(stages.len(), 0.0);
                }
                sum.iter_mut().zip(&stages).for_each(|(s, t)| *s += t);
            }
            stage_n += 1;
        }
        for (pq, t) in per_query.iter_mut().zip(&times) {
            pq.push(median(t));
        }
    }
    Ok(per_query
        .iter()
        .zip(&stage_sum)
        .map(|(pq, sum)| {
            let mut hist = LatencyHistogram::from_durations(pq, &LATENCY_EDGES_MS);
            hist.mean_stage_ms = sum.iter().map(|s| s / stage_n.max(1) as f64).collect();
            hist
        })
        .collect())
}

/// Deterministic serving-cost model for comparing lightweight scorers.
///
/// The full stage must see enough of the lightweight ranking to recover a
/// share `capture` of the `target` candidates it values most; the cut-off is the
/// shortest such prefix, clamped to [`target`, `max_keep`]. Latency is a fixed
/// cost plus per-candidate costs of both stages, scaled by per-query
/// log-normal load noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub fixed_ms: f64,
    pub light_ms_per_candidate: f64,
    pub full_ms_per_candidate: f64,
    pub target: usize,
    pub capture: f64,
    pub max_keep: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            fixed_ms: 20.0,
            light_ms_per_candidate: 0.000_5,
            full_ms_per_candidate: 0.25,
            target: 25,
            capture: 0.9,
            max_keep: 1000,
            noise_sd: 0.45,
            seed: 0,
        }
    }
}

/// Shortest prefix of `ranked_values` (reference values in lightweight order)
/// holding `capture` of the `target` highest-valued candidates.
pub fn capture_cutoff(ranked_values: &[f64], target: usize, capture: f64, max_keep: usize) -> usize {
    let n = ranked_values.len();
    let target = target.min(n);
    if target == 0 {
        return 0;
    }
    let mut sorted = ranked_values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[target - 1];
    let needed = (capture * target as f64).ceil() as usize;
    let mut found = 0;
    let mut cut = n;
    for (i, u) in ranked_values.iter().enumerate() {
        if *u >= threshold {
            found += 1;
            if found >= needed {
                cut = i + 1;
                break;
            }
        }
    }
    cut.clamp(target, max_keep.max(target))
}

/// Simulated per-query latency from each query's reference values in lightweight
/// order.
pub fn simulate_latency(queries: &[Vec<f64>], model: &LatencyModel) -> LatencyHistogram {
    let per_query: Vec<f64> = queries
        .iter()
        .enumerate()
        .map(|(q, utils)| {
            let cut = capture_cutoff(utils, model.target, model.capture, model.max_keep);
            let cost = model.fixed_ms
                + model.light_ms_per_candidate * utils.len() as f64
                + model.full_ms_per_candidate * cut as f64;
            // Box-Muller from two hashed uniforms keeps the noise independent
            // of which scorer produced the ranking.
            let u1 = hash_unit(model.seed, q as u64, 1).max(1e-12);
            let u2 = hash_unit(model.seed, q as u64, 2);
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            cost * (model.noise_sd * z).exp()
        })
        .collect();
    LatencyHistogram::from_durations(&per_query, &LATENCY_EDGES_MS)
}

/// Desk-scale default funnel: lightweight 1000, full 100, re-rank 25.
pub fn default_config(light_model: &str, full_model: &str, rerank_model: &str) -> CascadeConfig {
    CascadeConfig {
        stages: vec![
            StageConfig {
                name: "lightweight".into(),
                model: light_model.into(),
                feature_subset: crate::featurize::LIGHTWEIGHT.into(),
                keep_top: 1000,
                rerank: false,
            },
            StageConfig {
                name: "full".into(),
                model: full_model.into(),
                feature_subset: crate::featurize::FULL.into(),
                keep_top: 100,
                rerank: false,
            },
            StageConfig {
                name: "rerank".into(),
                model: rerank_model.into(),
                feature_subset: crate::featurize::RERANK.into(),
                keep_top: 25,
                rerank: true,
            },
        ],
        rerank_policy: RerankPolicy {
            freshness_weight: 0.5,
            localness_weight: 0.5,
            diversity_penalty: 0.2,
            min_fresh_ratio: None,
        },
    }
}

/// Scores every candidate with one model (no funnel) and sorts.
pub fn rank_all<S: Scorer + ?Sized>(
    model: &S,
    featurizer: &Featurizer<'_>,
    query: &Query,
    segment: &UserSegment,
    candidates: &[&Pin],
) -> Vec<(PinId, f64)> {
    let idx = model.feature_indices().to_vec();
    let mut x = vec![0.0; featurizer.schema().len()];
    let mut scored: Vec<(PinId, f64)> = candidates
        .iter()
        .map(|p| {
            featurizer.fill_subset(query, segment, p, &idx, &mut x);
            (p.pin_id, model.score(&x))
        })
        .collect();
    sort_scored(&mut scored);
    scored
}
