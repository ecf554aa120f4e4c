//! Ranking models behind one train/score contract: pointwise GBDT, pairwise
//! GBRT, RankSVM and RankNet, ordinal DNN/CNN classifiers scored by expected
//! class, and a hand-weighted rule scorer.

pub mod boosting;
pub mod linear;
pub mod nn;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use boosting::{pair_loss, train_gbdt, train_gbrt, BoostParams};
pub use linear::{train_ranksvm, LinearScorer, Standardizer, SvmParams};
pub use nn::{CnnSpec, Network, SgdParams, N_CLASSES};
pub use tree::{fit_tree, BoostEnsemble, Node, RegressionTree};

use crate::error::{Error, Result};
use crate::featurize::{Feature, FeatureSchema};
use crate::labelgen::LabelSource;
use crate::synthlog::PinId;
use crate::util::{read_json, write_json};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Training rows (already projected onto the model's features) with their
/// continuous labels, ordinal classes and preference pairs over row indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub rows: Vec<Vec<f64>>,
    /// (preferred row, other row).
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
    /// Ordinal classes in 1..=4; may be empty for purely pairwise data.
    pub ordinals: Vec<u8>,
}

impl PairSet {
    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        if let Some(d) = self.rows.first().map(Vec::len) {
            if self.rows.iter().any(|r| r.len() != d) {
                return Err(Error::data("ragged feature rows"));
            }
        }
        if self.labels.len() != n {
            return Err(Error::data(format!("{n} rows but {} labels", self.labels.len())));
        }
        if !self.ordinals.is_empty() && self.ordinals.len() != n {
            return Err(Error::data(format!("{n} rows but {} ordinal labels", self.ordinals.len())));
        }
        if let Some(&(a, b)) = self.pairs.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
            return Err(Error::data(format!("pair ({a}, {b}) is invalid for {n} rows")));
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite feature value in training rows"));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gbdt,
    Gbrt,
    Ranksvm,
    Ranknet,
    Dnn,
    Cnn,
    Rule,
}

impl ModelKind {
    /// The six learned models, in reporting order.
    pub const TRAINED: [ModelKind; 6] = [
        ModelKind::Gbdt,
        ModelKind::Gbrt,
        ModelKind::Ranksvm,
        ModelKind::Ranknet,
        ModelKind::Dnn,
        ModelKind::Cnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gbdt => "gbdt",
            ModelKind::Gbrt => "gbrt",
            ModelKind::Ranksvm => "ranksvm",
            ModelKind::Ranknet => "ranknet",
            ModelKind::Dnn => "dnn",
            ModelKind::Cnn => "cnn",
            ModelKind::Rule => "rule",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ModelKind::TRAINED.as_slice(), &[ModelKind::Rule]]
            .concat()
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown model kind '{s}' (valid: gbdt, gbrt, ranksvm, ranknet, dnn, cnn, rule)"
                ))
            })
    }
}

/// Hand-set linear weights over named features plus a flat boost for fresh pins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleParams {
    pub weights: Vec<(String, f64)>,
    pub fresh_boost: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            weights: vec![
                ("bm25".into(), 0.1),
                ("navboost_repin".into(), 1.0),
                ("navboost_click".into(), 0.5),
                ("social_score".into(), 0.2),
            ],
            fresh_boost: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankNetParams {
    pub hidden: usize,
    pub sgd: SgdParams,
}

impl Default for RankNetParams {
    fn default() -> Self {
        RankNetParams {
            hidden: 32,
            sgd: SgdParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnnParams {
    pub hidden: Vec<usize>,
    pub sgd: SgdParams,
}

impl Default for DnnParams {
    fn default() -> Self {
        DnnParams {
            hidden: vec![64, 64],
            sgd: SgdParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnParams {
    pub spec: CnnSpec,
    pub sgd: SgdParams,
}

/// Hyperparameters for every model kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub gbdt: BoostParams,
    pub gbrt: BoostParams,
    pub ranksvm: SvmParams,
    pub ranknet: RankNetParams,
    pub dnn: DnnParams,
    pub cnn: CnnParams,
    pub rule: RuleParams,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.gbdt.validate()?;
        self.gbrt.validate()?;
        if self.ranksvm.c < 0.0 {
            return Err(Error::config(format!("ranksvm.c must be non-negative, got {}", self.ranksvm.c)));
        }
        self.ranknet.sgd.validate()?;
        self.dnn.sgd.validate()?;
        self.cnn.sgd.validate()?;
        Ok(())
    }

    pub fn hyperparameters(&self, kind: ModelKind) -> serde_json::Value {
        let v = match kind {
            ModelKind::Gbdt => serde_json::to_value(self.gbdt),
            ModelKind::Gbrt => serde_json::to_value(self.gbrt),
            ModelKind::Ranksvm => serde_json::to_value(self.ranksvm),
            ModelKind::Ranknet => serde_json::to_value(&self.ranknet),
            ModelKind::Dnn => serde_json::to_value(&self.dnn),
            ModelKind::Cnn => serde_json::to_value(&self.cnn),
            ModelKind::Rule => serde_json::to_value(&self.rule),
        };
        v.expect("hyperparameters serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Gbdt {
        ensemble: BoostEnsemble,
    },
    Gbrt {
        ensemble: BoostEnsemble,
    },
    Ranksvm {
        scorer: LinearScorer,
    },
    Ranknet {
        network: Network,
        standardizer: Standardizer,
    },
    Dnn {
        network: Network,
        standardizer: Standardizer,
    },
    Cnn {
        network: Network,
        standardizer: Standardizer,
    },
    Rule {
        weights: Vec<f64>,
        fresh_boost: f64,
        /// Position of the freshness feature among the model's features.
        fresh_index: Option<usize>,
    },
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Gbdt { .. } => ModelKind::Gbdt,
            ModelParams::Gbrt { .. } => ModelKind::Gbrt,
            ModelParams::Ranksvm { .. } => ModelKind::Ranksvm,
            ModelParams::Ranknet { .. } => ModelKind::Ranknet,
            ModelParams::Dnn { .. } => ModelKind::Dnn,
            ModelParams::Cnn { .. } => ModelKind::Cnn,
            ModelParams::Rule { .. } => ModelKind::Rule,
        }
    }

    /// Scores a vector already projected onto the model's features.
    pub fn score_projected(&self, x: &[f64]) -> f64 {
        match self {
            ModelParams::Gbdt { ensemble } | ModelParams::Gbrt { ensemble } => ensemble.predict(x),
            ModelParams::Ranksvm { scorer } => scorer.score(x),
            ModelParams::Ranknet { network, standardizer } => network.forward(&standardizer.apply(x))[0],
            ModelParams::Dnn { network, standardizer } | ModelParams::Cnn { network, standardizer } => {
                expected_class(&nn::softmax(&network.forward(&standardizer.apply(x))))
            }
            ModelParams::Rule {
                weights,
                fresh_boost,
                fresh_index,
            } => rule_based_score(x, weights, *fresh_boost, *fresh_index),
        }
    }
}

/// Freshness feature value at the 30-day boundary, e^-1.
pub const FRESH_FEATURE_THRESHOLD: f64 = 0.367_879_441_171_442_33;

/// Linear combination plus `fresh_boost` when the freshness feature marks the
/// pin as at most 30 days old.
pub fn rule_based_score(x: &[f64], weights: &[f64], fresh_boost: f64, fresh_index: Option<usize>) -> f64 {
    let base: f64 = x.iter().zip(weights).map(|(v, w)| v * w).sum();
    match fresh_index {
        Some(i) if x[i] >= FRESH_FEATURE_THRESHOLD => base + fresh_boost,
        _ => base,
    }
}

/// Sum over k of k * p_k for classes 1..=4, without validation.
fn expected_class(probs: &[f64]) -> f64 {
    probs.iter().enumerate().map(|(k, p)| (k + 1) as f64 * p).sum()
}

/// Expected class under a distribution over classes 1..=4.
pub fn classifier_score(probs: &[f64]) -> Result<f64> {
    if probs.len() != N_CLASSES || !crate::util::is_distribution(probs, 1e-9) {
        return Err(Error::data(format!("not a distribution over {N_CLASSES} classes: {probs:?}")));
    }
    Ok(expected_class(probs))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Training loss before the first and after every round or epoch.
    pub loss_curve: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<LabelSource>,
    pub n_rows: usize,
    pub n_pairs: usize,
}

/// Anything that scores full schema-ordered feature vectors.
pub trait Scorer {
    fn schema_id(&self) -> &str;
    /// Schema positions this scorer reads.
    fn feature_indices(&self) -> &[usize];
    fn score(&self, full: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub format_version: u32,
    pub schema_id: String,
    /// Names of the features the model reads, in model order.
    pub features: Vec<String>,
    /// Schema positions of `features`.
    pub feature_indices: Vec<usize>,
    pub params: ModelParams,
    pub hyperparameters: serde_json::Value,
    pub seed: u64,
    pub training_meta: TrainingMeta,
}

impl RankModel {
    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn project(&self, full: &[f64]) -> Vec<f64> {
        self.feature_indices.iter().map(|&i| full[i]).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RankModel = read_json(path)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "{}: model format version {} (expected {MODEL_FORMAT_VERSION})",
                path.display(),
                m.format_version
            )));
        }
        if m.features.len() != m.feature_indices.len() {
            return Err(Error::Schema(format!("{}: feature names and indices differ in length", path.display())));
        }
        Ok(m)
    }

    /// Fails unless the model was trained against `schema` and its feature
    /// names sit at the recorded positions.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if self.schema_id != schema.schema_id {
            return Err(Error::Schema(format!(
                "model schema '{}' does not match feature schema '{}'",
                self.schema_id, schema.schema_id
            )));
        }
        let expected = schema.indices_of(&self.features)?;
        if expected != self.feature_indices {
            return Err(Error::Schema("model feature positions disagree with the schema".into()));
        }
        Ok(())
    }
}

impl Scorer for RankModel {
    fn schema_id(&self) -> &str {
        &self.schema_id
    }

    fn feature_indices(&self) -> &[usize] {
        &self.feature_indices
    }

    fn score(&self, full: &[f64]) -> f64 {
        self.params.score_projected(&self.project(full))
    }
}

/// Sorts by score descending, ties by ascending pin id.
pub fn sort_scored(scored: &mut [(PinId, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Scores and orders candidates given as (pin id, full feature vector).
pub fn rank<S: Scorer + ?Sized>(model: &S, candidates: &[(PinId, Vec<f64>)]) -> Vec<(PinId, f64)> {
    let mut scored: Vec<(PinId, f64)> = candidates.iter().map(|(p, x)| (*p, model.score(x))).collect();
    sort_scored(&mut scored);
    scored
}

/// Which schema features a trained model reads.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSelection {
    pub names: Vec<String>,
    pub indices: Vec<usize>,
    pub schema_id: String,
}

impl FeatureSelection {
    pub fn subset(schema: &FeatureSchema, subset: &str) -> Result<Self> {
        let names = schema.subset_names(subset)?.to_vec();
        let indices = schema.indices_of(&names)?;
        Ok(FeatureSelection {
            names,
            indices,
            schema_id: schema.schema_id.clone(),
        })
    }

    /// Anonymous features f0..f{d-1} at positions 0..d, for synthetic data.
    pub fn anonymous(d: usize) -> Self {
        FeatureSelection {
            names: (0..d).map(|i| format!("f{i}")).collect(),
            indices: (0..d).collect(),
            schema_id: "anonymous".into(),
        }
    }

    pub fn project(&self, full: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| full[i]).collect()
    }
}

fn check_ordinals(set: &PairSet) -> Result<Vec<usize>> {
    if set.ordinals.len() != set.rows.len() {
        return Err(Error::data("classifier training needs an ordinal label per row"));
    }
    set.ordinals
        .iter()
        .map(|&k| {
            if (1..=N_CLASSES as u8).contains(&k) {
                Ok(k as usize - 1)
            } else {
                Err(Error::data(format!("ordinal label {k} outside 1..={N_CLASSES}")))
            }
        })
        .collect()
}

/// Trains one model of `kind` on rows projected onto `features`.
pub fn train_model(
    kind: ModelKind,
    set: &PairSet,
    features: &FeatureSelection,
    config: &ModelConfig,
    seed: u64,
    source: Option<LabelSource>,
) -> Result<RankModel> {
    set.validate()?;
    if set.n_features() != features.indices.len() && !set.rows.is_empty() {
        return Err(Error::data(format!(
            "rows have {} features but the selection names {}",
            set.n_features(),
            features.indices.len()
        )));
    }
    let d = features.indices.len();
    let (params, loss_curve) = match kind {
        ModelKind::Gbdt => {
            let (ensemble, curve) = train_gbdt(&set.rows, &set.labels, &config.gbdt)?;
            (ModelParams::Gbdt { ensemble }, curve)
        }
        ModelKind::Gbrt => {
            let (ensemble, curve) = train_gbrt(set, &config.gbrt)?;
            (ModelParams::Gbrt { ensemble }, curve)
        }
        ModelKind::Ranksvm => {
            let (scorer, curve) = train_ranksvm(set, &config.ranksvm)?;
            (ModelParams::Ranksvm { scorer }, curve)
        }
        ModelKind::Ranknet => {
            if set.pairs.is_empty() {
                return Err(Error::data("RankNet needs at least one preference pair"));
            }
            let standardizer = Standardizer::fit(&set.rows);
            let z: Vec<Vec<f64>> = set.rows.iter().map(|r| standardizer.apply(r)).collect();
            let mut network = Network::mlp(&[d, config.ranknet.hidden, 1], seed);
            let curve = nn::minibatch_descent(&mut network, set.pairs.len(), &config.ranknet.sgd, seed, "ranknet", |n, i, g| {
                let (a, b) = set.pairs[i];
                nn::pair_loss_grad(n, &z[a], &z[b], g)
            })?;
            (ModelParams::Ranknet { network, standardizer }, curve)
        }
        ModelKind::Dnn | ModelKind::Cnn => {
            let classes = check_ordinals(set)?;
            let standardizer = Standardizer::fit(&set.rows);
            let z: Vec<Vec<f64>> = set.rows.iter().map(|r| standardizer.apply(r)).collect();
            let (mut network, sgd) = if kind == ModelKind::Dnn {
                let mut sizes = vec![d];
                sizes.extend(&config.dnn.hidden);
                sizes.push(N_CLASSES);
                (Network::mlp(&sizes, seed), config.dnn.sgd)
            } else {
                (Network::cnn(d, &config.cnn.spec, N_CLASSES, seed)?, config.cnn.sgd)
            };
            let curve = nn::minibatch_descent(&mut network, z.len(), &sgd, seed, kind.name(), |n, i, g| {
                nn::class_loss_grad(n, &z[i], classes[i], g)
            })?;
            if kind == ModelKind::Dnn {
                (ModelParams::Dnn { network, standardizer }, curve)
            } else {
                (ModelParams::Cnn { network, standardizer }, curve)
            }
        }
        ModelKind::Rule => (rule_params(&config.rule, &features.names)?, Vec::new()),
    };
    Ok(RankModel {
        format_version: MODEL_FORMAT_VERSION,
        schema_id: features.schema_id.clone(),
        features: features.names.clone(),
        feature_indices: features.indices.clone(),
        params,
        hyperparameters: config.hyperparameters(kind),
        seed,
        training_meta: TrainingMeta {
            loss_curve,
            source,
            n_rows: set.rows.len(),
            n_pairs: set.pairs.len(),
        },
    })
}

/// Resolves named rule weights against the model's features. Weights for
/// features the model does not read are an error.
pub fn rule_params(rule: &RuleParams, names: &[String]) -> Result<ModelParams> {
    let mut weights = vec![0.0; names.len()];
    for (name, w) in &rule.weights {
        let i = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::config(format!("rule weight for '{name}', which is not among the model's features")))?;
        weights[i] = *w;
    }
    let fresh_index = names.iter().position(|n| n == Feature::Freshness.name());
    Ok(ModelParams::Rule {
        weights,
        fresh_boost: rule.fresh_boost,
        fresh_index,
    })
}

/// Builds a rule model directly (it has nothing to train).
pub fn rule_model(rule: &RuleParams, features: &FeatureSelection) -> Result<RankModel> {
    let config = ModelConfig {
        rule: rule.clone(),
        ..Default::default()
    };
    train_model(ModelKind::Rule, &PairSet::default(), features, &config, 0, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_score_examples() {
        assert_eq!(classifier_score(&[0.25; 4]).unwrap(), 2.5);
        assert_eq!(classifier_score(&[0.0, 0.0, 0.0, 1.0]).unwrap(), 4.0);
        assert_eq!(classifier_score(&[0.5, 0.5, 0.0, 0.0]).unwrap(), 1.5);
        assert!(classifier_score(&[0.5, 0.6, 0.0, 0.0]).is_err());
        assert!(classifier_score(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn rule_score_examples() {
        let names: Vec<String> = ["bm25", "freshness"].iter().map(|s| s.to_string()).collect();
        let rule = RuleParams {
            weights: vec![("bm25".into(), 1.0)],
            fresh_boost: 0.5,
        };
        let p = rule_params(&rule, &names).unwrap();
        assert_eq!(p.score_projected(&[0.0, 0.0]), 0.0);
        let fresh = p.score_projected(&[1.0, (-10.0f64 / 30.0).exp()]);
        let stale = p.score_projected(&[1.0, (-100.0f64 / 30.0).exp()]);
        assert!(fresh > stale);
        let bad = RuleParams {
            weights: vec![("nope".into(), 1.0)],
            fresh_boost: 0.0,
        };
        assert!(rule_params(&bad, &names).is_err());
    }

    #[test]
    fn rank_breaks_ties_by_pin_id() {
        let sel = FeatureSelection::anonymous(1);
        let m = rule_model(
            &RuleParams {
                weights: vec![("f0".into(), 1.0)],
                fresh_boost: 0.0,
            },
            &sel,
        )
        .unwrap();
        let ranked = rank(&m, &[(9, vec![0.5]), (3, vec![0.5]), (5, vec![0.9])]);
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), vec![5, 3, 9]);
    }

    #[test]
    fn kind_parsing_lists_valid_set() {
        assert_eq!("gbrt".parse::<ModelKind>().unwrap(), ModelKind::Gbrt);
        let err = "xgboost".parse::<ModelKind>().unwrap_err().to_string();
        assert!(err.contains("ranksvm"), "{err}");
    }
}
