use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{default_action_types, Action, ActionType, Corpus, EngagementRecord, PlantedUtility};
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub n_sessions: usize,
    /// Examination decay exponent; 0 disables position bias.
    pub position_bias: f64,
    pub seed: u64,
    /// Pins shown per session.
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default = "default_action_types")]
    pub actions: Vec<ActionType>,
    /// Scale of the hide probability for irrelevant impressions.
    #[serde(default = "default_hide_rate")]
    pub hide_rate: f64,
}

fn default_page_size() -> usize {
    20
}

fn default_hide_rate() -> f64 {
    0.01
}

impl SimParams {
    pub fn new(n_sessions: usize, position_bias: f64, seed: u64) -> Self {
        SimParams {
            n_sessions,
            position_bias,
            seed,
            page_size: default_page_size(),
            actions: default_action_types(),
            hide_rate: default_hide_rate(),
        }
    }
}

/// Examination probability 1/(1+position)^bias.
pub fn position_discount(position: u32, bias: f64) -> f64 {
    (1.0 + position as f64).powf(-bias)
}

/// Fresh pins are engaged more often; decays from 1.0 toward 0.6.
pub fn freshness_factor(age_days: f64) -> f64 {
    0.6 + 0.4 * (-age_days.max(0.0) / 30.0).exp()
}

/// Replays `n_sessions` searches: each session draws a query (by frequency)
/// and a segment, shows a random page of pins, and samples at most one action
/// per impression. Engagement probability is utility × position discount ×
/// freshness factor; the positive action type is drawn by volume.
pub fn simulate_log(corpus: &Corpus, utility: &PlantedUtility, params: &SimParams) -> Result<Vec<EngagementRecord>> {
    if corpus.pins.is_empty() || corpus.queries.is_empty() || corpus.segments.is_empty() {
        return Err(Error::data("cannot simulate a log over an empty corpus"));
    }
    if params.position_bias.is_nan() || params.position_bias < 0.0 {
        return Err(Error::config("position bias must be non-negative"));
    }
    if params.page_size == 0 {
        return Err(Error::config("page_size must be at least 1"));
    }
    let positives: Vec<ActionType> = params.actions.iter().copied().filter(|a| !a.name.is_negative()).collect();
    if params.actions.iter().any(|a| a.volume == 0) {
        return Err(Error::config("action volumes must be at least 1"));
    }
    let hide_enabled = params.actions.iter().any(|a| a.name == Action::Hide);
    let positive_pick = if positives.is_empty() {
        None
    } else {
        Some(WeightedIndex::new(positives.iter().map(|a| a.volume)).expect("positive volumes"))
    };
    let query_pick = WeightedIndex::new(corpus.queries.iter().map(|q| q.frequency as u64)).expect("positive frequencies");

    let mut rng = rng_for(params.seed, 0x51A);
    let page = params.page_size.min(corpus.pins.len());
    let mut records = Vec::with_capacity(params.n_sessions * page);
    for _ in 0..params.n_sessions {
        let query = &corpus.queries[query_pick.sample(&mut rng)];
        let segment = &corpus.segments[rng.random_range(0..corpus.segments.len())];
        let shown = sample(&mut rng, corpus.pins.len(), page);
        for (position, idx) in shown.into_iter().enumerate() {
            let pin = &corpus.pins[idx];
            let position = position as u32;
            let u = utility.utility(query, pin);
            let examine = position_discount(position, params.position_bias);
            let p_engage = u * examine * freshness_factor(pin.age_days);
            let mut action_counts = BTreeMap::new();
            // Draw both uniforms unconditionally so the stream layout does not depend on utility.
            let r_engage: f64 = rng.random();
            let r_hide: f64 = rng.random();
            if r_engage < p_engage {
                if let Some(pick) = &positive_pick {
                    action_counts.insert(positives[pick.sample(&mut rng)].name, 1);
                }
            } else if hide_enabled && r_hide < params.hide_rate * (1.0 - u) * examine {
                action_counts.insert(Action::Hide, 1);
            }
            records.push(EngagementRecord {
                query_id: query.query_id,
                segment_id: segment.segment_id,
                pin_id: pin.pin_id,
                action_counts,
                position,
                age_days_at_impression: pin.age_days,
            });
        }
    }
    Ok(records)
}
