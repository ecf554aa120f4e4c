//! Training labels from engagement logs and expert judgments.
//!
//! Engagement labels are a volume-weighted sum of action counts per
//! (query, segment, pin), corrected for position and age, then pruned per
//! (query, segment) group. Relevance labels average expert ratings. Both feed
//! ordinal classes for the classifiers and preference pairs for the pairwise
//! models.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthlog::{default_action_types, Action, ActionType, EngagementRecord, PinId, QueryId, SegmentId};
use crate::util::{derive_seed, quantile_sorted, rng_for};

pub use crate::synthlog::RelevanceJudgment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Engagement,
    Relevance,
}

impl LabelSource {
    pub fn name(self) -> &'static str {
        match self {
            LabelSource::Engagement => "engagement",
            LabelSource::Relevance => "relevance",
        }
    }
}

impl std::str::FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "engagement" => Ok(LabelSource::Engagement),
            "relevance" => Ok(LabelSource::Relevance),
            _ => Err(Error::config(format!("unknown label source `{s}`, expected engagement or relevance"))),
        }
    }
}

/// A (query, segment) group. Relevance judgments carry no segment.
pub type GroupKey = (QueryId, Option<SegmentId>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub action_weights: BTreeMap<Action, f64>,
    /// Age normalization scale in days.
    pub tau: f64,
    /// Position decay parameter; positive values up-weight deep positions.
    pub lambda_pos: f64,
    /// Maximum number of non-positive instances kept per group.
    pub neg_cap: usize,
    /// Three ascending cut points; computed from the training split when absent.
    #[serde(default)]
    pub discretize_cuts: Option<[f64; 3]>,
    #[serde(default = "default_max_pairs")]
    pub max_pairs_per_group: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_pairs() -> usize {
    100
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            action_weights: default_weights(&default_action_types()).expect("non-empty defaults"),
            tau: 30.0,
            lambda_pos: 0.05,
            neg_cap: 20,
            discretize_cuts: None,
            max_pairs_per_group: default_max_pairs(),
            seed: 0,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        if !self.lambda_pos.is_finite() {
            return Err(Error::config("lambda_pos must be finite"));
        }
        if self.neg_cap == 0 {
            return Err(Error::config("neg_cap must be at least 1"));
        }
        if self.max_pairs_per_group == 0 {
            return Err(Error::config("max_pairs_per_group must be at least 1"));
        }
        if let Some(c) = self.discretize_cuts {
            validate_cuts(&c)?;
        }
        if self.action_weights.values().any(|w| !w.is_finite()) {
            return Err(Error::config("action weights must be finite"));
        }
        Ok(())
    }
}

fn validate_cuts(cuts: &[f64; 3]) -> Result<()> {
    if cuts.iter().all(|c| c.is_finite()) && cuts[0] < cuts[1] && cuts[1] < cuts[2] {
        Ok(())
    } else {
        Err(Error::config(format!("discretize cuts must be strictly ascending, got {cuts:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub query_id: QueryId,
    pub segment_id: Option<SegmentId>,
    pub pin_id: PinId,
    pub label: f64,
    /// Ordinal class in 1..=4; 0 until cut points are known.
    pub ordinal_label: u8,
    pub source: LabelSource,
}

impl LabeledInstance {
    pub fn group(&self) -> GroupKey {
        (self.query_id, self.segment_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query_id: QueryId,
    pub segment_id: Option<SegmentId>,
    pub preferred_pin: PinId,
    pub other_pin: PinId,
}

/// Weights inversely proportional to action volume, scaled so the rarest
/// positive action weighs 1.0; hide carries the negated weight.
pub fn default_weights(actions: &[ActionType]) -> Result<BTreeMap<Action, f64>> {
    if actions.is_empty() {
        return Err(Error::config("action set is empty"));
    }
    if let Some(a) = actions.iter().find(|a| a.volume == 0) {
        return Err(Error::config(format!("volume of `{}` must be at least 1", a.name)));
    }
    let min_volume = actions.iter().map(|a| a.volume).min().expect("non-empty") as f64;
    Ok(actions
        .iter()
        .map(|a| {
            let w = min_volume / a.volume as f64;
            (a.name, if a.name.is_negative() { -w } else { w })
        })
        .collect())
}

/// Weighted action sum over every record of one (query, segment, pin).
pub fn aggregate_label<'a>(records: impl IntoIterator<Item = &'a EngagementRecord>, weights: &BTreeMap<Action, f64>) -> f64 {
    records
        .into_iter()
        .flat_map(|r| r.action_counts.iter())
        .map(|(a, &c)| weights.get(a).copied().unwrap_or(0.0) * c as f64)
        .sum()
}

/// Position/age correction factor. Ages below `tau` are clamped to `tau`, so
/// the age term lies in (0, 1].
pub fn bias_multiplier(age_days: f64, position: f64, tau: f64, lambda: f64) -> f64 {
    let age = age_days.max(tau);
    1.0 / ((age / tau).ln() + 1.0) + (lambda * position).exp()
}

pub fn normalize_label(raw: f64, age_days: f64, position: f64, config: &LabelConfig) -> f64 {
    raw * bias_multiplier(age_days, position, config.tau, config.lambda_pos)
}

/// Aggregates and de-biases a log into one instance per (query, segment, pin).
/// Position and age of a triple seen several times are averaged over its records.
pub fn engagement_instances(records: &[EngagementRecord], config: &LabelConfig) -> Result<Vec<LabeledInstance>> {
    config.validate()?;
    let mut triples: BTreeMap<(QueryId, SegmentId, PinId), Vec<&EngagementRecord>> = BTreeMap::new();
    for r in records {
        triples.entry((r.query_id, r.segment_id, r.pin_id)).or_default().push(r);
    }
    Ok(triples
        .into_iter()
        .map(|((query_id, segment_id, pin_id), rs)| {
            let n = rs.len() as f64;
            let position = rs.iter().map(|r| r.position as f64).sum::<f64>() / n;
            let age = rs.iter().map(|r| r.age_days_at_impression).sum::<f64>() / n;
            let raw = aggregate_label(rs.iter().copied(), &config.action_weights);
            LabeledInstance {
                query_id,
                segment_id: Some(segment_id),
                pin_id,
                label: normalize_label(raw, age, position, config),
                ordinal_label: 0,
                source: LabelSource::Engagement,
            }
        })
        .collect())
}

pub fn group_instances(instances: Vec<LabeledInstance>) -> BTreeMap<GroupKey, Vec<LabeledInstance>> {
    let mut groups: BTreeMap<GroupKey, Vec<LabeledInstance>> = BTreeMap::new();
    for inst in instances {
        groups.entry(inst.group()).or_default().push(inst);
    }
    groups
}

fn group_salt(key: &GroupKey) -> u64 {
    ((key.0 as u64) << 32) | key.1.map_or(0xFFFF_FFFF, |s| s as u64)
}

/// Drops groups without any positive label, then randomly keeps at most
/// `neg_cap` non-positive instances in each remaining group.
pub fn prune_groups(
    groups: BTreeMap<GroupKey, Vec<LabeledInstance>>,
    neg_cap: usize,
    seed: u64,
) -> BTreeMap<GroupKey, Vec<LabeledInstance>> {
    groups
        .into_iter()
        .filter(|(_, g)| g.iter().any(|i| i.label > 0.0))
        .map(|(key, group)| {
            let negatives = group.iter().filter(|i| i.label <= 0.0).count();
            if negatives <= neg_cap {
                return (key, group);
            }
            let mut rng = rng_for(seed, group_salt(&key));
            let keep: BTreeSet<usize> = sample(&mut rng, negatives, neg_cap).into_iter().collect();
            let mut neg_idx = 0;
            let kept = group
                .into_iter()
                .filter(|i| {
                    if i.label > 0.0 {
                        return true;
                    }
                    let keep_this = keep.contains(&neg_idx);
                    neg_idx += 1;
                    keep_this
                })
                .collect();
            (key, kept)
        })
        .collect()
}

/// Mean expert rating as a relevance label in [0, 2].
pub fn average_judgment(judgment: &RelevanceJudgment) -> Result<LabeledInstance> {
    if judgment.ratings.is_empty() {
        return Err(Error::data(format!(
            "judgment for query {} pin {} has no ratings",
            judgment.query_id, judgment.pin_id
        )));
    }
    if let Some(r) = judgment.ratings.iter().find(|&&r| r > 2) {
        return Err(Error::data(format!(
            "rating {r} for query {} pin {} is outside {{0, 1, 2}}",
            judgment.query_id, judgment.pin_id
        )));
    }
    let label = judgment.ratings.iter().map(|&r| r as f64).sum::<f64>() / judgment.ratings.len() as f64;
    Ok(LabeledInstance {
        query_id: judgment.query_id,
        segment_id: None,
        pin_id: judgment.pin_id,
        label,
        ordinal_label: 0,
        source: LabelSource::Relevance,
    })
}

/// Class k in 1..=4 for the k-th interval of (-inf, c1], (c1, c2], (c2, c3], (c3, inf).
pub fn discretize(label: f64, cuts: &[f64; 3]) -> u8 {
    1 + cuts.iter().filter(|&&c| label > c).count() as u8
}

/// Quartile boundaries of the strictly positive labels. Falls back to evenly
/// spaced cuts when there are too few distinct positive values.
pub fn quartile_cuts(labels: &[f64]) -> [f64; 3] {
    let mut pos: Vec<f64> = labels.iter().copied().filter(|&l| l > 0.0 && l.is_finite()).collect();
    pos.sort_by(|a, b| a.total_cmp(b));
    let cuts = [
        quantile_sorted(&pos, 0.25),
        quantile_sorted(&pos, 0.5),
        quantile_sorted(&pos, 0.75),
    ];
    if validate_cuts(&cuts).is_ok() {
        cuts
    } else {
        let top = pos.last().copied().unwrap_or(1.0).max(1e-6);
        [top * 0.25, top * 0.5, top * 0.75]
    }
}

pub fn assign_ordinals(instances: &mut [LabeledInstance], cuts: &[f64; 3]) {
    for inst in instances {
        inst.ordinal_label = discretize(inst.label, cuts);
    }
}

/// All strictly label-ordered pairs of one group, uniformly subsampled to
/// `max_pairs` when there are more.
pub fn extract_pairs(group: &[LabeledInstance], max_pairs: usize, seed: u64) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for a in group {
        for b in group {
            if a.label > b.label && a.group() == b.group() {
                pairs.push(PreferencePair {
                    query_id: a.query_id,
                    segment_id: a.segment_id,
                    preferred_pin: a.pin_id,
                    other_pin: b.pin_id,
                });
            }
        }
    }
    if pairs.len() <= max_pairs {
        return pairs;
    }
    let salt = group.first().map_or(0, |i| group_salt(&i.group()));
    let mut rng = rng_for(seed, salt);
    let mut keep: Vec<usize> = sample(&mut rng, pairs.len(), max_pairs).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| pairs[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Test,
    Valid,
}

impl SplitPart {
    pub const ALL: [SplitPart; 3] = [SplitPart::Train, SplitPart::Test, SplitPart::Valid];

    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Test => "test",
            SplitPart::Valid => "valid",
        }
    }
}

/// Query-level assignment to train/test/validation. Every group of a query
/// (all segments, both label sources) lands in the same part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub parts: BTreeMap<QueryId, SplitPart>,
}

impl SplitAssignment {
    pub fn new(query_ids: impl IntoIterator<Item = QueryId>, fractions: (f64, f64, f64), seed: u64) -> Result<Self> {
        let (tr, te, va) = fractions;
        if [tr, te, va].iter().any(|f| !(0.0..=1.0).contains(f)) || (tr + te + va - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions ({tr}, {te}, {va}) must be in [0, 1] and sum to 1"
            )));
        }
        let mut ids: Vec<QueryId> = query_ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        // Order by a keyed hash, which is a seeded permutation independent of input order.
        ids.sort_by_key(|&q| (derive_seed(seed, q as u64), q));
        let n = ids.len() as f64;
        let train_end = (tr * n).round() as usize;
        let test_end = ((tr + te) * n).round() as usize;
        let parts = ids
            .into_iter()
            .enumerate()
            .map(|(i, q)| {
                let part = if i < train_end {
                    SplitPart::Train
                } else if i < test_end {
                    SplitPart::Test
                } else {
                    SplitPart::Valid
                };
                (q, part)
            })
            .collect();
        Ok(SplitAssignment { parts })
    }

    pub fn part(&self, query_id: QueryId) -> Option<SplitPart> {
        self.parts.get(&query_id).copied()
    }

    pub fn queries(&self, part: SplitPart) -> BTreeSet<QueryId> {
        self.parts.iter().filter(|(_, &p)| p == part).map(|(&q, _)| q).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: T,
    pub test: T,
    pub valid: T,
}

impl<T> Split<T> {
    pub fn get(&self, part: SplitPart) -> &T {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Test => &self.test,
            SplitPart::Valid => &self.valid,
        }
    }

    pub fn get_mut(&mut self, part: SplitPart) -> &mut T {
        match part {
            SplitPart::Train => &mut self.train,
            SplitPart::Test => &mut self.test,
            SplitPart::Valid => &mut self.valid,
        }
    }
}

/// Splits instances 70/20/10 (or as given) by query; deterministic in `seed`.
pub fn split_dataset(
    instances: Vec<LabeledInstance>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Split<Vec<LabeledInstance>>> {
    let assignment = SplitAssignment::new(instances.iter().map(|i| i.query_id), fractions, seed)?;
    Ok(apply_split(instances, &assignment))
}

pub fn apply_split(instances: Vec<LabeledInstance>, assignment: &SplitAssignment) -> Split<Vec<LabeledInstance>> {
    let mut split: Split<Vec<LabeledInstance>> = Split::default();
    for inst in instances {
        if let Some(part) = assignment.part(inst.query_id) {
            split.get_mut(part).push(inst);
        }
    }
    split
}
