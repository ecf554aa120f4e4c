//! Synthetic corpus and engagement log generation, plus JSON-lines log IO.
//!
//! The corpus carries a hidden per-(query, pin) utility. It lives in
//! [`PlantedUtility`], which only the simulator and the evaluation harness
//! receive; featurization never sees it.

mod corpus;
mod logio;
mod simulate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use corpus::{generate_corpus, generate_judgments, Corpus, CorpusParams, PlantedUtility, COUNTRIES};
pub use logio::{read_log, write_log};
pub use simulate::{freshness_factor, position_discount, simulate_log, SimParams};

pub type PinId = u64;
pub type QueryId = u32;
pub type SegmentId = u32;

/// Pins no older than this many days count as fresh.
pub const FRESH_DAYS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    pub pin_id: PinId,
    pub annotations: Vec<String>,
    pub category_dist: Vec<f64>,
    pub topic_dist: Vec<f64>,
    pub latent_vec: Vec<f64>,
    pub linked_country: String,
    pub age_days: f64,
    pub social_score: f64,
    /// Audience lean in [-1, 1]: negative female-leaning, 0 neutral, positive male-leaning.
    pub gender_lean: f64,
}

impl Pin {
    pub fn is_fresh(&self) -> bool {
        self.age_days <= FRESH_DAYS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSegment {
    pub segment_id: SegmentId,
    pub gender: Gender,
    pub country: String,
    pub category_affinity: Vec<f64>,
    pub latent_vec: Vec<f64>,
}

impl UserSegment {
    /// Segment with no personal signal, used to featurize relevance judgments
    /// (which are not tied to any user segment).
    pub fn neutral(n_categories: usize, dim: usize) -> Self {
        UserSegment {
            segment_id: SegmentId::MAX,
            gender: Gender::Unknown,
            country: String::new(),
            category_affinity: vec![1.0 / n_categories.max(1) as f64; n_categories],
            latent_vec: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: QueryId,
    pub tokens: Vec<String>,
    pub category_dist: Vec<f64>,
    pub latent_vec: Vec<f64>,
    pub frequency: u32,
    pub male_oriented_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Repin,
    Click,
    Closeup,
    Longclick,
    Hide,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::Repin,
        Action::Click,
        Action::Closeup,
        Action::Longclick,
        Action::Hide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Repin => "repin",
            Action::Click => "click",
            Action::Closeup => "closeup",
            Action::Longclick => "longclick",
            Action::Hide => "hide",
        }
    }

    pub fn is_negative(self) -> bool {
        matches!(self, Action::Hide)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Action::ALL.iter().map(|a| a.name()).collect();
                crate::Error::data(format!("unknown action type `{s}`, expected one of {}", valid.join(", ")))
            })
    }
}

/// An action with its global volume, which drives both the simulator's
/// action mix and the default label weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionType {
    pub name: Action,
    pub volume: u64,
}

/// closeup:repin:longclick:click:hide = 50:20:15:10:5.
pub fn default_action_types() -> Vec<ActionType> {
    vec![
        ActionType { name: Action::Closeup, volume: 50 },
        ActionType { name: Action::Repin, volume: 20 },
        ActionType { name: Action::Longclick, volume: 15 },
        ActionType { name: Action::Click, volume: 10 },
        ActionType { name: Action::Hide, volume: 5 },
    ]
}

/// One logged impression of a pin for a (query, segment) with its action counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngagementRecord {
    pub query_id: QueryId,
    pub segment_id: SegmentId,
    pub pin_id: PinId,
    pub action_counts: BTreeMap<Action, u64>,
    pub position: u32,
    pub age_days_at_impression: f64,
}

impl EngagementRecord {
    pub fn count(&self, action: Action) -> u64 {
        self.action_counts.get(&action).copied().unwrap_or(0)
    }

    pub fn has_positive_action(&self) -> bool {
        self.action_counts.iter().any(|(a, &c)| !a.is_negative() && c > 0)
    }
}

/// Human ratings of one (query, pin): 0 not relevant, 1 relevant, 2 very relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: QueryId,
    pub pin_id: PinId,
    pub ratings: Vec<u8>,
}
