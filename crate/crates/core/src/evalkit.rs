//! Offline evaluation: DCG/NDCG against engagement or relevance labels,
//! replay of a held-out engagement log against ranked lists, freshness and
//! localness ratios, and relative comparisons between reports.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::LatencyHistogram;
use crate::error::{Error, Result};
use crate::labelgen::{GroupKey, LabeledInstance};
use crate::synthlog::{Action, Corpus, EngagementRecord, PinId, QueryId, SegmentId};
use crate::util::write_json;

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 20];

/// sum over ranks r = 1..=min(p, n) of l_r / log_base(r + 1).
pub fn dcg_base(labels: &[f64], p: usize, base: f64) -> f64 {
    labels
        .iter()
        .take(p)
        .enumerate()
        .map(|(i, l)| l / ((i + 2) as f64).log(base))
        .sum()
}

pub fn dcg(labels: &[f64], p: usize) -> f64 {
    dcg_base(labels, p, 2.0)
}

/// DCG of the labels sorted descending.
pub fn ideal_dcg(labels: &[f64], p: usize, base: f64) -> f64 {
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    dcg_base(&sorted, p, base)
}

/// DCG over ideal DCG; `None` when the ideal DCG is zero.
pub fn ndcg(labels: &[f64], p: usize) -> Option<f64> {
    ndcg_with(labels, labels, p, 2.0)
}

/// NDCG of `ranked` labels normalized by the ideal ordering of `pool`,
/// which must contain every label of the query (ranked or not).
pub fn ndcg_with(ranked: &[f64], pool: &[f64], p: usize, base: f64) -> Option<f64> {
    let ideal = ideal_dcg(pool, p, base);
    if ideal <= 0.0 {
        return None;
    }
    Some(dcg_base(ranked, p, base) / ideal)
}

/// One ranked result list for a (query, segment) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: QueryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<SegmentId>,
    pub pin_ids: Vec<PinId>,
}

impl RankedResult {
    pub fn key(&self) -> GroupKey {
        (self.query_id, self.segment_id)
    }
}

/// Labels per group, as produced by label generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelIndex {
    pub groups: BTreeMap<GroupKey, BTreeMap<PinId, f64>>,
}

impl LabelIndex {
    pub fn from_instances<'a>(instances: impl IntoIterator<Item = &'a LabeledInstance>) -> Self {
        let mut groups: BTreeMap<GroupKey, BTreeMap<PinId, f64>> = BTreeMap::new();
        for inst in instances {
            groups.entry(inst.group()).or_default().insert(inst.pin_id, inst.label);
        }
        LabelIndex { groups }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryNdcg {
    pub query_id: QueryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<SegmentId>,
    /// NDCG at each cutoff, `None` when the group has no positive label.
    pub ndcg: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgSummary {
    pub cutoffs: Vec<usize>,
    /// Mean over groups with a non-zero ideal DCG, per cutoff.
    pub mean: Vec<f64>,
    pub n_evaluated: usize,
    /// Groups left out because every label is zero.
    pub n_excluded: usize,
    pub per_query: Vec<QueryNdcg>,
}

/// NDCG of each ranked list against its group's labels. Unlabeled pins
/// count as 0; lists without a labeled group are skipped.
pub fn evaluate_ndcg(lists: &[RankedResult], labels: &LabelIndex, cutoffs: &[usize], base: f64) -> NdcgSummary {
    let mut sums = vec![0.0; cutoffs.len()];
    let (mut n_evaluated, mut n_excluded) = (0, 0);
    let mut per_query = Vec::new();
    for list in lists {
        let Some(group) = labels.groups.get(&list.key()) else {
            continue;
        };
        let ranked: Vec<f64> = list.pin_ids.iter().map(|p| group.get(p).copied().unwrap_or(0.0)).collect();
        let pool: Vec<f64> = group.values().copied().collect();
        let values: Vec<Option<f64>> = cutoffs.iter().map(|&p| ndcg_with(&ranked, &pool, p, base)).collect();
        if values.iter().all(Option::is_some) {
            n_evaluated += 1;
            for (s, v) in sums.iter_mut().zip(&values) {
                *s += v.expect("checked");
            }
        } else {
            n_excluded += 1;
        }
        per_query.push(QueryNdcg {
            query_id: list.query_id,
            segment_id: list.segment_id,
            ndcg: values,
        });
    }
    NdcgSummary {
        cutoffs: cutoffs.to_vec(),
        mean: sums.iter().map(|s| if n_evaluated > 0 { s / n_evaluated as f64 } else { 0.0 }).collect(),
        n_evaluated,
        n_excluded,
        per_query,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayMetrics {
    pub searches: u64,
    pub q_repin: f64,
    pub q_click: f64,
    pub q_closeup: f64,
    /// Impressions with any positive action, per search.
    pub q_engaged: f64,
}

type ReplayKey = (QueryId, Option<SegmentId>);

fn top_k_sets(lists: &[RankedResult], k: usize) -> HashMap<ReplayKey, HashSet<PinId>> {
    lists
        .iter()
        .map(|l| (l.key(), l.pin_ids.iter().take(k).copied().collect()))
        .collect()
}

/// The list a record is replayed against: the (query, segment) list if
/// present, otherwise a segment-agnostic list for the query.
fn replay_key(sets: &HashMap<ReplayKey, HashSet<PinId>>, r: &EngagementRecord) -> Option<ReplayKey> {
    [(r.query_id, Some(r.segment_id)), (r.query_id, None)]
        .into_iter()
        .find(|k| sets.contains_key(k))
}

/// Counts held-out engagements on pins in each list's top `k`, per search.
/// A search is one impression at position 0 for a query that has a list.
/// Rates are micro-averaged over all replayed searches.
pub fn replay_metrics(lists: &[RankedResult], holdout: &[EngagementRecord], k: usize) -> ReplayMetrics {
    let sets = top_k_sets(lists, k);
    let mut m = ReplayMetrics::default();
    let (mut repin, mut click, mut closeup, mut engaged) = (0u64, 0u64, 0u64, 0u64);
    for r in holdout {
        let Some(key) = replay_key(&sets, r) else {
            continue;
        };
        if r.position == 0 {
            m.searches += 1;
        }
        if sets[&key].contains(&r.pin_id) {
            repin += r.count(Action::Repin);
            click += r.count(Action::Click);
            closeup += r.count(Action::Closeup);
            engaged += u64::from(r.has_positive_action());
        }
    }
    if m.searches > 0 {
        let n = m.searches as f64;
        m.q_repin = repin as f64 / n;
        m.q_click = click as f64 / n;
        m.q_closeup = closeup as f64 / n;
        m.q_engaged = engaged as f64 / n;
    }
    m
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FreshLocalRatios {
    pub l_imp: f64,
    pub f_imp: f64,
    pub l_repin: f64,
    pub f_repin: f64,
    pub l_click: f64,
    pub f_click: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// The six ratios over impressed (top `k`) pins. A pin is local when its
/// linked country equals the list segment's country; repinned/clicked means
/// the held-out log shows that action on it for the list's query.
pub fn freshness_localness(
    lists: &[RankedResult],
    corpus: &Corpus,
    holdout: &[EngagementRecord],
    k: usize,
) -> Result<FreshLocalRatios> {
    let sets = top_k_sets(lists, k);
    let mut repinned: HashSet<(ReplayKey, PinId)> = HashSet::new();
    let mut clicked: HashSet<(ReplayKey, PinId)> = HashSet::new();
    for r in holdout {
        if let Some(key) = replay_key(&sets, r) {
            if r.count(Action::Repin) > 0 {
                repinned.insert((key, r.pin_id));
            }
            if r.count(Action::Click) > 0 {
                clicked.insert((key, r.pin_id));
            }
        }
    }
    let (mut imp, mut local, mut fresh) = (0u64, 0u64, 0u64);
    let (mut local_repin, mut fresh_repin, mut local_click, mut fresh_click) = (0u64, 0u64, 0u64, 0u64);
    for list in lists {
        let country = match list.segment_id {
            Some(s) => corpus
                .segment(s)
                .ok_or_else(|| Error::data(format!("unknown segment {s}")))?
                .country
                .as_str(),
            None => "",
        };
        for &pin_id in list.pin_ids.iter().take(k) {
            let pin = corpus.pin(pin_id).ok_or_else(|| Error::data(format!("unknown pin {pin_id}")))?;
            let is_local = !country.is_empty() && pin.linked_country == country;
            let is_fresh = pin.is_fresh();
            let key = (list.key(), pin_id);
            imp += 1;
            local += u64::from(is_local);
            fresh += u64::from(is_fresh);
            let (rp, cl) = (repinned.contains(&key), clicked.contains(&key));
            local_repin += u64::from(is_local && rp);
            fresh_repin += u64::from(is_fresh && rp);
            local_click += u64::from(is_local && cl);
            fresh_click += u64::from(is_fresh && cl);
        }
    }
    Ok(FreshLocalRatios {
        l_imp: ratio(local, imp),
        f_imp: ratio(fresh, imp),
        l_repin: ratio(local_repin, local),
        f_repin: ratio(fresh_repin, fresh),
        l_click: ratio(local_click, local),
        f_click: ratio(fresh_click, fresh),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    /// Queries covered, sorted; comparisons require equal sets.
    pub queries: Vec<QueryId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg_engagement: Option<NdcgSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg_relevance: Option<NdcgSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplayMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh_local: Option<FreshLocalRatios>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyHistogram>,
}

impl EvalReport {
    pub fn new(name: impl Into<String>, queries: impl IntoIterator<Item = QueryId>) -> Self {
        let queries: BTreeSet<QueryId> = queries.into_iter().collect();
        EvalReport {
            name: name.into(),
            queries: queries.into_iter().collect(),
            ndcg_engagement: None,
            ndcg_relevance: None,
            replay: None,
            fresh_local: None,
            latency: None,
        }
    }

    /// Flat metric name -> value view used for tables and comparisons.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (tag, summary) in [("e", &self.ndcg_engagement), ("r", &self.ndcg_relevance)] {
            if let Some(s) = summary {
                for (p, v) in s.cutoffs.iter().zip(&s.mean) {
                    m.insert(format!("ndcg_{tag}@{p}"), *v);
                }
            }
        }
        if let Some(r) = &self.replay {
            m.insert("q_repin".into(), r.q_repin);
            m.insert("q_click".into(), r.q_click);
            m.insert("q_closeup".into(), r.q_closeup);
            m.insert("q_engaged".into(), r.q_engaged);
        }
        if let Some(f) = &self.fresh_local {
            m.insert("l_imp".into(), f.l_imp);
            m.insert("f_imp".into(), f.f_imp);
            m.insert("l_repin".into(), f.l_repin);
            m.insert("f_repin".into(), f.f_repin);
            m.insert("l_click".into(), f.l_click);
            m.insert("f_click".into(), f.f_click);
        }
        if let Some(h) = &self.latency {
            for (name, frac) in h.labels().iter().zip(&h.fractions) {
                m.insert(format!("latency {name}"), *frac);
            }
        }
        m
    }

    pub fn to_csv(&self) -> String {
        let metrics = self.metrics();
        let width = metrics.keys().map(String::len).max().unwrap_or(0).max("metric".len());
        let mut out = format!("{:<width$},value\n", "metric");
        for (k, v) in metrics {
            let _ = writeln!(out, "{k:<width$},{v:.6}");
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_json(&dir.join(format!("{stem}.json")), self)?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Relative change (b - a) / a, or `None` when a is 0.
pub fn relative_delta(a: f64, b: f64) -> Option<f64> {
    if a == 0.0 {
        None
    } else {
        Some((b - a) / a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// Relative change; serialized as "undefined" when the baseline is 0.
    #[serde(with = "undefined_if_none")]
    pub relative: Option<f64>,
}

mod undefined_if_none {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => Repr::Value(*x).serialize(s),
            None => Repr::Word("undefined".into()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Value(x) => Some(x),
            Repr::Word(_) => None,
        })
    }
}

/// Per-metric relative deltas from `a` to `b` over metrics both reports carry.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Vec<MetricDelta>> {
    if a.queries != b.queries {
        return Err(Error::data(format!(
            "reports '{}' and '{}' cover different query sets ({} vs {} queries)",
            a.name,
            b.name,
            a.queries.len(),
            b.queries.len()
        )));
    }
    let mb = b.metrics();
    Ok(a
        .metrics()
        .into_iter()
        .filter_map(|(metric, va)| {
            mb.get(&metric).map(|&vb| MetricDelta {
                relative: relative_delta(va, vb),
                metric,
                a: va,
                b: vb,
            })
        })
        .collect())
}

pub fn deltas_to_csv(deltas: &[MetricDelta]) -> String {
    let width = deltas.iter().map(|d| d.metric.len()).max().unwrap_or(0).max("metric".len());
    let mut out = format!("{:<width$},baseline,candidate,relative\n", "metric");
    for d in deltas {
        let rel = d.relative.map_or("undefined".to_string(), |r| format!("{:+.2}%", 100.0 * r));
        let _ = writeln!(out, "{:<width$},{:.6},{:.6},{rel}", d.metric, d.a, d.b);
    }
    out
}
