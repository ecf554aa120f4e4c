//! Feature vectors for (query, segment, pin) triples.
//!
//! Every feature is computed from the query, the segment, the pin, corpus
//! text statistics and a [`NavboostTable`] built from training-split logs.
//! Nothing here can see labels or the simulator's planted utility.

mod navboost;
mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use navboost::{build_navboost, EngagementCounts, NavboostTable};
pub use text::{bm25, proximity_bm25, Bm25Params, TextStats};

use crate::error::{Error, Result};
use crate::synthlog::{Action, Gender, Pin, PinId, Query, QueryId, SegmentId, UserSegment, FRESH_DAYS};
use crate::util::cosine;

pub const SCHEMA_ID: &str = "pinrank-features-v1";

/// Stage subset names.
pub const LIGHTWEIGHT: &str = "lightweight";
pub const FULL: &str = "full";
pub const RERANK: &str = "rerank";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Bm25,
    ProximityBm25,
    CategoryBoost,
    TopicBoost,
    EmbeddingSim,
    NavboostCloseup,
    NavboostRepin,
    NavboostClick,
    NavboostLongclick,
    TokenBoost,
    QueryCtr,
    Gender,
    PersonalCategory,
    PersonalEmbedding,
    QueryLength,
    QueryLogFrequency,
    QueryMaleScore,
    SocialScore,
    Freshness,
    LocaleMatch,
    AnnotationPresent,
    /// Filled by the re-ranker; always 0 at featurization time.
    Diversity,
}

impl Feature {
    pub const ALL: [Feature; 22] = [
        Feature::Bm25,
        Feature::ProximityBm25,
        Feature::CategoryBoost,
        Feature::TopicBoost,
        Feature::EmbeddingSim,
        Feature::NavboostCloseup,
        Feature::NavboostRepin,
        Feature::NavboostClick,
        Feature::NavboostLongclick,
        Feature::TokenBoost,
        Feature::QueryCtr,
        Feature::Gender,
        Feature::PersonalCategory,
        Feature::PersonalEmbedding,
        Feature::QueryLength,
        Feature::QueryLogFrequency,
        Feature::QueryMaleScore,
        Feature::SocialScore,
        Feature::Freshness,
        Feature::LocaleMatch,
        Feature::AnnotationPresent,
        Feature::Diversity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Bm25 => "bm25",
            Feature::ProximityBm25 => "proximity_bm25",
            Feature::CategoryBoost => "categoryboost",
            Feature::TopicBoost => "topicboost",
            Feature::EmbeddingSim => "embedding_sim",
            Feature::NavboostCloseup => "navboost_closeup",
            Feature::NavboostRepin => "navboost_repin",
            Feature::NavboostClick => "navboost_click",
            Feature::NavboostLongclick => "navboost_longclick",
            Feature::TokenBoost => "tokenboost",
            Feature::QueryCtr => "query_ctr",
            Feature::Gender => "gender",
            Feature::PersonalCategory => "personal_category",
            Feature::PersonalEmbedding => "personal_embedding",
            Feature::QueryLength => "query_length",
            Feature::QueryLogFrequency => "query_log_frequency",
            Feature::QueryMaleScore => "query_male_score",
            Feature::SocialScore => "social_score",
            Feature::Freshness => "freshness",
            Feature::LocaleMatch => "locale_match",
            Feature::AnnotationPresent => "annotation_present",
            Feature::Diversity => "diversity",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }
}

pub const LIGHTWEIGHT_FEATURES: [Feature; 8] = [
    Feature::Bm25,
    Feature::NavboostRepin,
    Feature::NavboostClick,
    Feature::TokenBoost,
    Feature::CategoryBoost,
    Feature::Freshness,
    Feature::SocialScore,
    Feature::LocaleMatch,
];

pub const RERANK_FEATURES: [Feature; 6] = [
    Feature::Freshness,
    Feature::LocaleMatch,
    Feature::NavboostRepin,
    Feature::NavboostClick,
    Feature::EmbeddingSim,
    Feature::Diversity,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub schema_id: String,
    pub names: Vec<String>,
    pub stage_subsets: BTreeMap<String, Vec<String>>,
}

impl FeatureSchema {
    pub fn standard() -> Self {
        let names: Vec<String> = Feature::ALL.iter().map(|f| f.name().to_string()).collect();
        let mut stage_subsets = BTreeMap::new();
        stage_subsets.insert(LIGHTWEIGHT.to_string(), LIGHTWEIGHT_FEATURES.iter().map(|f| f.name().to_string()).collect());
        stage_subsets.insert(FULL.to_string(), names.clone());
        stage_subsets.insert(RERANK.to_string(), RERANK_FEATURES.iter().map(|f| f.name().to_string()).collect());
        FeatureSchema {
            schema_id: SCHEMA_ID.to_string(),
            names,
            stage_subsets,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Schema positions of a named subset, in subset order.
    pub fn subset_indices(&self, subset: &str) -> Result<Vec<usize>> {
        let names = self
            .stage_subsets
            .get(subset)
            .ok_or_else(|| Error::Schema(format!("unknown feature subset `{subset}`")))?;
        self.indices_of(names)
    }

    pub fn indices_of(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .ok_or_else(|| Error::Schema(format!("feature `{n}` is not in schema {}", self.schema_id)))
            })
            .collect()
    }

    pub fn subset_names(&self, subset: &str) -> Result<&[String]> {
        self.stage_subsets
            .get(subset)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Schema(format!("unknown feature subset `{subset}`")))
    }

    /// Checks names are known and unique, and subsets resolve with the required sizes.
    pub fn validate(&self) -> Result<Vec<Feature>> {
        let features = self
            .names
            .iter()
            .map(|n| Feature::from_name(n).ok_or_else(|| Error::Schema(format!("unsupported feature `{n}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut sorted = features.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != features.len() {
            return Err(Error::Schema("duplicate feature names".into()));
        }
        for (subset, size) in [(LIGHTWEIGHT, Some(8)), (RERANK, Some(6)), (FULL, None)] {
            let idx = self.subset_indices(subset)?;
            if let Some(size) = size {
                if idx.len() != size {
                    return Err(Error::Schema(format!("subset `{subset}` must have {size} features, has {}", idx.len())));
                }
            }
        }
        Ok(features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_id: String,
}

/// One serialized feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub query_id: QueryId,
    pub pin_id: PinId,
    pub segment_id: Option<SegmentId>,
    pub values: Vec<f64>,
}

/// cosine of category distributions, in [0, 1] for non-negative inputs.
pub fn categoryboost(query_dist: &[f64], pin_dist: &[f64]) -> f64 {
    cosine(query_dist, pin_dist).max(0.0)
}

pub fn topicboost(query_topics: &[f64], pin_topics: &[f64]) -> f64 {
    cosine(query_topics, pin_topics).max(0.0)
}

pub fn embedding_sim(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b)
}

/// How well the pin suits the segment's gender: neutral pins score 1.0 for
/// everyone, gendered pins lose score for the other gender.
pub fn gender_feature(pin: &Pin, segment: &UserSegment) -> f64 {
    let lean = pin.gender_lean.clamp(-1.0, 1.0);
    match segment.gender {
        Gender::Female => 1.0 - lean.max(0.0),
        Gender::Male => 1.0 - (-lean).max(0.0),
        Gender::Unknown => 1.0 - lean.abs() / 2.0,
    }
}

/// (category affinity cosine, latent cosine) between a segment and a pin.
pub fn personalization(segment: &UserSegment, pin: &Pin) -> (f64, f64) {
    (
        cosine(&segment.category_affinity, &pin.category_dist).max(0.0),
        embedding_sim(&segment.latent_vec, &pin.latent_vec),
    )
}

pub fn freshness(age_days: f64) -> f64 {
    (-age_days.max(0.0) / FRESH_DAYS).exp()
}

/// Query topic mixture implied by its category mixture; topics belong to categories round-robin.
fn query_topics(query: &Query, n_topics: usize) -> Vec<f64> {
    let c = query.category_dist.len().max(1);
    let mut owners = vec![0usize; c];
    for t in 0..n_topics {
        owners[t % c] += 1;
    }
    (0..n_topics)
        .map(|t| {
            let cat = t % c;
            query.category_dist.get(cat).copied().unwrap_or(0.0) / owners[cat].max(1) as f64
        })
        .collect()
}

/// Computes feature vectors against a fixed schema. Cheap to clone; borrows
/// its statistics immutably so it can be shared across threads.
#[derive(Debug, Clone)]
pub struct Featurizer<'a> {
    schema: FeatureSchema,
    features: Vec<Feature>,
    text: &'a TextStats,
    navboost: &'a NavboostTable,
    params: Bm25Params,
}

impl<'a> Featurizer<'a> {
    pub fn new(schema: FeatureSchema, text: &'a TextStats, navboost: &'a NavboostTable, params: Bm25Params) -> Result<Self> {
        let features = schema.validate()?;
        Ok(Featurizer {
            schema,
            features,
            text,
            navboost,
            params,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn compute(&self, feature: Feature, query: &Query, segment: &UserSegment, pin: &Pin) -> f64 {
        let value = match feature {
            Feature::Bm25 => bm25(&query.tokens, &pin.annotations, self.text, &self.params),
            Feature::ProximityBm25 => proximity_bm25(&query.tokens, &pin.annotations, self.text, &self.params),
            Feature::CategoryBoost => categoryboost(&query.category_dist, &pin.category_dist),
            Feature::TopicBoost => topicboost(&query_topics(query, pin.topic_dist.len()), &pin.topic_dist),
            Feature::EmbeddingSim => embedding_sim(&query.latent_vec, &pin.latent_vec),
            Feature::NavboostCloseup => self.navboost.navboost(query.query_id, pin.pin_id, Action::Closeup),
            Feature::NavboostRepin => self.navboost.navboost(query.query_id, pin.pin_id, Action::Repin),
            Feature::NavboostClick => self.navboost.navboost(query.query_id, pin.pin_id, Action::Click),
            Feature::NavboostLongclick => self.navboost.navboost(query.query_id, pin.pin_id, Action::Longclick),
            Feature::TokenBoost => self.navboost.tokenboost(&query.tokens, pin.pin_id),
            Feature::QueryCtr => self.navboost.query_ctr(query.query_id),
            Feature::Gender => gender_feature(pin, segment),
            Feature::PersonalCategory => personalization(segment, pin).0,
            Feature::PersonalEmbedding => personalization(segment, pin).1,
            Feature::QueryLength => query.tokens.len() as f64,
            Feature::QueryLogFrequency => (1.0 + query.frequency as f64).ln(),
            Feature::QueryMaleScore => query.male_oriented_score,
            Feature::SocialScore => pin.social_score,
            Feature::Freshness => freshness(pin.age_days),
            Feature::LocaleMatch => f64::from(!segment.country.is_empty() && pin.linked_country == segment.country),
            Feature::AnnotationPresent => f64::from(!pin.annotations.is_empty()),
            Feature::Diversity => 0.0,
        };
        if value.is_finite() {
            value
        } else {
            0.0
        }
    }

    pub fn featurize(&self, query: &Query, segment: &UserSegment, pin: &Pin) -> FeatureVector {
        FeatureVector {
            values: self.features.iter().map(|&f| self.compute(f, query, segment, pin)).collect(),
            schema_id: self.schema.schema_id.clone(),
        }
    }

    /// Full-length vector with only the listed schema positions computed; all
    /// other entries are 0. Used by cascade stages restricted to a subset.
    pub fn featurize_subset(&self, query: &Query, segment: &UserSegment, pin: &Pin, indices: &[usize]) -> FeatureVector {
        let mut values = vec![0.0; self.features.len()];
        self.fill_subset(query, segment, pin, indices, &mut values);
        FeatureVector {
            values,
            schema_id: self.schema.schema_id.clone(),
        }
    }

    /// Writes the listed schema positions into `values` and leaves the rest
    /// untouched, so one zeroed buffer can be reused across pins.
    pub fn fill_subset(&self, query: &Query, segment: &UserSegment, pin: &Pin, indices: &[usize], values: &mut [f64]) {
        for &i in indices {
            values[i] = self.compute(self.features[i], query, segment, pin);
        }
    }

    pub fn check(&self, vector: &FeatureVector) -> Result<()> {
        if vector.schema_id != self.schema.schema_id || vector.values.len() != self.schema.len() {
            return Err(Error::Schema(format!(
                "vector ({}, {} values) does not match schema ({}, {} features)",
                vector.schema_id,
                vector.values.len(),
                self.schema.schema_id,
                self.schema.len()
            )));
        }
        Ok(())
    }
}
