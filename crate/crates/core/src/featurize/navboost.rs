use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthlog::{Action, EngagementRecord, PinId, Query, QueryId};

/// Impression and per-action engaged-impression counts for one key.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementCounts {
    pub impressions: u64,
    /// Impressions with at least one action of each type, indexed like [`Action::ALL`].
    pub engaged: [u64; 5],
    /// Impressions with any positive action.
    pub any_positive: u64,
}

impl EngagementCounts {
    fn add(&mut self, record: &EngagementRecord) {
        self.impressions += 1;
        for (i, a) in Action::ALL.iter().enumerate() {
            if record.count(*a) > 0 {
                self.engaged[i] += 1;
            }
        }
        if record.has_positive_action() {
            self.any_positive += 1;
        }
    }
}

fn action_index(action: Action) -> usize {
    Action::ALL.iter().position(|&a| a == action).expect("known action")
}

/// Smoothed historical engagement propensities keyed by (query, pin) and
/// (query token, pin), plus query-level click-through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NavboostFile", into = "NavboostFile")]
pub struct NavboostTable {
    pub alpha: f64,
    pub beta: f64,
    query_pin: HashMap<(QueryId, PinId), EngagementCounts>,
    /// Keyed by pin first so lookups can borrow the query token.
    token_pin: HashMap<PinId, HashMap<String, EngagementCounts>>,
    query: HashMap<QueryId, EngagementCounts>,
}

impl NavboostTable {
    pub fn empty(alpha: f64, beta: f64) -> Self {
        NavboostTable {
            alpha,
            beta,
            query_pin: HashMap::new(),
            token_pin: HashMap::new(),
            query: HashMap::new(),
        }
    }

    /// (positives + alpha) / (impressions + alpha + beta).
    pub fn smooth(&self, positives: u64, impressions: u64) -> f64 {
        (positives as f64 + self.alpha) / (impressions as f64 + self.alpha + self.beta)
    }

    pub fn navboost(&self, query_id: QueryId, pin_id: PinId, action: Action) -> f64 {
        let c = self.query_pin.get(&(query_id, pin_id)).copied().unwrap_or_default();
        self.smooth(c.engaged[action_index(action)], c.impressions)
    }

    /// Mean over query tokens of the token-level positive-engagement propensity.
    pub fn tokenboost(&self, tokens: &[String], pin_id: PinId) -> f64 {
        if tokens.is_empty() {
            return self.smooth(0, 0);
        }
        let per_pin = self.token_pin.get(&pin_id);
        let total: f64 = tokens
            .iter()
            .map(|t| {
                let c = per_pin.and_then(|m| m.get(t.as_str())).copied().unwrap_or_default();
                self.smooth(c.any_positive, c.impressions)
            })
            .sum();
        total / tokens.len() as f64
    }

    pub fn query_ctr(&self, query_id: QueryId) -> f64 {
        let c = self.query.get(&query_id).copied().unwrap_or_default();
        self.smooth(c.engaged[action_index(Action::Click)], c.impressions)
    }

    pub fn n_keys(&self) -> usize {
        self.query_pin.len() + self.token_pin.values().map(HashMap::len).sum::<usize>() + self.query.len()
    }
}

/// Builds the table from log records whose query passes `include`. Callers
/// pass the training-split membership test so held-out queries never leak in.
pub fn build_navboost(
    records: &[EngagementRecord],
    queries: &[Query],
    include: impl Fn(QueryId) -> bool,
    alpha: f64,
    beta: f64,
) -> Result<NavboostTable> {
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::config(format!("navboost smoothing must be positive, got alpha={alpha} beta={beta}")));
    }
    let tokens: HashMap<QueryId, &[String]> = queries.iter().map(|q| (q.query_id, q.tokens.as_slice())).collect();
    let mut table = NavboostTable::empty(alpha, beta);
    for r in records.iter().filter(|r| include(r.query_id)) {
        table.query_pin.entry((r.query_id, r.pin_id)).or_default().add(r);
        table.query.entry(r.query_id).or_default().add(r);
        if let Some(ts) = tokens.get(&r.query_id) {
            let mut uniq: Vec<&String> = ts.iter().collect();
            uniq.sort();
            uniq.dedup();
            for t in uniq {
                table.token_pin.entry(r.pin_id).or_default().entry(t.clone()).or_default().add(r);
            }
        }
    }
    Ok(table)
}

#[derive(Serialize, Deserialize)]
struct NavboostFile {
    alpha: f64,
    beta: f64,
    query_pin: Vec<(QueryId, PinId, EngagementCounts)>,
    token_pin: Vec<(String, PinId, EngagementCounts)>,
    query: Vec<(QueryId, EngagementCounts)>,
}

impl From<NavboostTable> for NavboostFile {
    fn from(t: NavboostTable) -> Self {
        let query_pin: BTreeMap<_, _> = t.query_pin.into_iter().collect();
        let token_pin: BTreeMap<_, _> = t
            .token_pin
            .into_iter()
            .flat_map(|(p, m)| m.into_iter().map(move |(s, c)| ((s, p), c)))
            .collect();
        let query: BTreeMap<_, _> = t.query.into_iter().collect();
        NavboostFile {
            alpha: t.alpha,
            beta: t.beta,
            query_pin: query_pin.into_iter().map(|((q, p), c)| (q, p, c)).collect(),
            token_pin: token_pin.into_iter().map(|((s, p), c)| (s, p, c)).collect(),
            query: query.into_iter().collect(),
        }
    }
}

impl From<NavboostFile> for NavboostTable {
    fn from(f: NavboostFile) -> Self {
        NavboostTable {
            alpha: f.alpha,
            beta: f.beta,
            query_pin: f.query_pin.into_iter().map(|(q, p, c)| ((q, p), c)).collect(),
            token_pin: f.token_pin.into_iter().fold(HashMap::new(), |mut m, (s, p, c)| {
                m.entry(p).or_insert_with(HashMap::new).insert(s, c);
                m
            }),
            query: f.query.into_iter().collect(),
        }
    }
}
