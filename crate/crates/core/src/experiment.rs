//! End-to-end experiment plumbing: configuration, on-disk artifacts and the
//! one-shot pipeline from corpus generation to evaluation and benchmarking.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    self, rank_all, run_cascade, simulate_latency, Cascade, CascadeConfig, LatencyHistogram, LatencyModel,
    LoadedModel, ModelSet, RankedList, RerankPolicy, StageConfig, IDENTITY_MODEL,
};
use crate::ensemble::{select_gamma, train_stacked_gbrt, StackLoss, StackedModel, DEFAULT_GAMMA_GRID};
use crate::error::{Error, Result};
use crate::evalkit::{
    compare, evaluate_ndcg, freshness_localness, replay_metrics, EvalReport, LabelIndex, MetricDelta, NdcgSummary,
    RankedResult,
};
use crate::featurize::{
    build_navboost, Bm25Params, FeatureRow, FeatureSchema, Featurizer, NavboostTable, TextStats, FULL, LIGHTWEIGHT,
    RERANK,
};
use crate::labelgen::{
    assign_ordinals, average_judgment, engagement_instances, extract_pairs, group_instances, prune_groups,
    quartile_cuts, GroupKey, LabelConfig, LabelSource, LabeledInstance, PreferencePair, Split, SplitAssignment,
    SplitPart,
};
use crate::models::{
    rank, rule_model, train_model, FeatureSelection, ModelConfig, ModelKind, ModelParams, PairSet, RankModel,
    RuleParams, Scorer, MODEL_FORMAT_VERSION,
};
use crate::synthlog::{
    generate_corpus, generate_judgments, read_log, simulate_log, write_log, Corpus, CorpusParams, EngagementRecord,
    PinId, PlantedUtility, QueryId, RelevanceJudgment, SegmentId, SimParams, UserSegment,
};
use crate::util::{derive_seed, read_json, read_json_unused, read_jsonl, write_json, write_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub n_pins: usize,
    pub n_queries: usize,
    pub n_segments: usize,
    pub n_categories: usize,
    pub n_topics: usize,
    pub dim: usize,
    pub n_countries: usize,
    pub fresh_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            n_pins: 3000,
            n_queries: 50,
            n_segments: 4,
            n_categories: 8,
            n_topics: 24,
            dim: 16,
            n_countries: 4,
            fresh_fraction: 0.3,
        }
    }
}

impl CorpusSection {
    pub fn params(&self, seed: u64) -> CorpusParams {
        CorpusParams {
            seed,
            n_pins: self.n_pins,
            n_queries: self.n_queries,
            n_segments: self.n_segments,
            n_categories: self.n_categories,
            n_topics: self.n_topics,
            dim: self.dim,
            n_countries: self.n_countries,
            fresh_fraction: self.fresh_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSection {
    pub n_sessions: usize,
    pub position_bias: f64,
    pub page_size: usize,
    pub hide_rate: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            n_sessions: 40_000,
            position_bias: 0.5,
            page_size: 20,
            hide_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgmentSection {
    pub top_k: usize,
    pub random_k: usize,
    pub raters: usize,
}

impl Default for JudgmentSection {
    fn default() -> Self {
        JudgmentSection {
            top_k: 30,
            random_k: 30,
            raters: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavboostSection {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for NavboostSection {
    fn default() -> Self {
        NavboostSection { alpha: 1.0, beta: 9.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackingSection {
    pub gamma_grid: Vec<f64>,
    /// Weight of engagement NDCG against relevance NDCG when picking gamma.
    pub blend: f64,
    /// Cutoff of the validation NDCG used to pick gamma.
    pub cutoff: usize,
    /// Model kind stacked after training.
    pub kind: ModelKind,
    pub normalize: bool,
    pub loss: StackLoss,
}

impl Default for StackingSection {
    fn default() -> Self {
        StackingSection {
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            blend: 0.5,
            cutoff: 10,
            kind: ModelKind::Gbrt,
            normalize: false,
            loss: StackLoss::Pairwise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeSection {
    /// Trained lightweight model kind; compared against the rule baseline.
    pub light_kind: ModelKind,
    /// "stacked", "stacked-gbrt" or "<kind>-<source>".
    pub full_model: String,
    /// "identity" or "rule".
    pub rerank_model: String,
    pub keep_top: [usize; 3],
    pub policy: RerankPolicy,
    pub light_rule: RuleParams,
    pub rerank_rule: RuleParams,
}

impl Default for CascadeSection {
    fn default() -> Self {
        CascadeSection {
            light_kind: ModelKind::Ranksvm,
            full_model: "stacked".into(),
            rerank_model: IDENTITY_MODEL.into(),
            keep_top: [1000, 100, 25],
            policy: RerankPolicy {
                freshness_weight: 0.5,
                localness_weight: 0.2,
                diversity_penalty: 0.05,
                min_fresh_ratio: None,
            },
            light_rule: default_light_rule(),
            rerank_rule: RuleParams {
                weights: vec![
                    ("navboost_repin".into(), 1.0),
                    ("navboost_click".into(), 0.5),
                    ("embedding_sim".into(), 0.5),
                    ("locale_match".into(), 0.1),
                ],
                fresh_boost: 0.1,
            },
        }
    }
}

/// A deliberately plain lightweight rule: text match plus popularity.
pub fn default_light_rule() -> RuleParams {
    RuleParams {
        weights: vec![("bm25".into(), 0.1), ("social_score".into(), 1.0)],
        fresh_boost: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub cutoffs: Vec<usize>,
    /// Impressed results per list for replay and freshness/localness metrics.
    pub top_k: usize,
    pub log_base: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: crate::evalkit::DEFAULT_CUTOFFS.to_vec(),
            top_k: 25,
            log_base: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub n_queries: usize,
    pub n_candidates: usize,
    pub reps: usize,
    pub latency_model: LatencyModel,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            n_queries: 3,
            n_candidates: 100_000,
            reps: 5,
            latency_model: LatencyModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub judgments: JudgmentSection,
    #[serde(default)]
    pub labels: LabelConfig,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub navboost: NavboostSection,
    pub models: ModelConfig,
    #[serde(default)]
    pub stacking: StackingSection,
    #[serde(default)]
    pub cascade: CascadeSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub bench: BenchSection,
}

fn default_split() -> [f64; 3] {
    [0.7, 0.2, 0.1]
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            corpus: CorpusSection::default(),
            simulation: SimulationSection::default(),
            judgments: JudgmentSection::default(),
            labels: LabelConfig::default(),
            split: default_split(),
            navboost: NavboostSection::default(),
            models: ModelConfig::default(),
            stacking: StackingSection::default(),
            cascade: CascadeSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
        }
    }

    /// Loads a config file; the second value lists keys the config ignores.
    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        read_json_unused(path).map_err(|e| match e {
            Error::Parse { path, line, message } => {
                Error::Config(format!("{}:{line}: {message}", path.display()))
            }
            other => other,
        })
    }

    /// Named problems with the config; empty when it is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |r: Result<()>| {
            if let Err(e) = r {
                out.push(e.to_string());
            }
        };
        check(self.corpus.params(self.seed).validate());
        check(self.labels.validate());
        check(self.models.validate());
        check(SplitAssignment::new([0], (self.split[0], self.split[1], self.split[2]), 0).map(|_| ()));
        if self.simulation.n_sessions == 0 {
            out.push("simulation.n_sessions must be at least 1".into());
        }
        if self.judgments.raters == 0 {
            out.push("judgments.raters must be at least 1".into());
        }
        if self.stacking.gamma_grid.is_empty() {
            out.push("stacking.gamma_grid is empty".into());
        }
        if let Some(g) = self.stacking.gamma_grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            out.push(format!("stacking.gamma_grid value {g} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.stacking.blend) {
            out.push(format!("stacking.blend must lie in [0, 1], got {}", self.stacking.blend));
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            out.push("eval.cutoffs must be non-empty and positive".into());
        }
        if !self.cascade.full_model_valid() {
            out.push(format!(
                "cascade.full_model '{}' is not one of stacked, stacked-gbrt or <kind>-<source>",
                self.cascade.full_model
            ));
        }
        if ![IDENTITY_MODEL, "rule"].contains(&self.cascade.rerank_model.as_str()) {
            out.push(format!(
                "cascade.rerank_model '{}' must be identity or rule",
                self.cascade.rerank_model
            ));
        }
        let schema = FeatureSchema::standard();
        out.extend(self.cascade_config().violations(&schema));
        for (name, rule, subset) in [
            ("cascade.light_rule", &self.cascade.light_rule, LIGHTWEIGHT),
            ("cascade.rerank_rule", &self.cascade.rerank_rule, RERANK),
        ] {
            if let Ok(names) = schema.subset_names(subset) {
                if let Err(e) = crate::models::rule_params(rule, names) {
                    out.push(format!("{name}: {e}"));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }

    pub fn sim_params(&self) -> SimParams {
        let mut p = SimParams::new(
            self.simulation.n_sessions,
            self.simulation.position_bias,
            derive_seed(self.seed, 2),
        );
        p.page_size = self.simulation.page_size;
        p.hide_rate = self.simulation.hide_rate;
        p
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    /// The funnel used by `rank` and `reproduce`, referring to models by the
    /// names [`Pipeline`] registers.
    pub fn cascade_config(&self) -> CascadeConfig {
        let k = self.cascade.keep_top;
        let rerank = if self.cascade.rerank_model == "rule" {
            "rule-rerank".to_string()
        } else {
            IDENTITY_MODEL.to_string()
        };
        CascadeConfig {
            stages: vec![
                StageConfig {
                    name: "lightweight".into(),
                    model: format!("{}-light", self.cascade.light_kind),
                    feature_subset: LIGHTWEIGHT.into(),
                    keep_top: k[0],
                    rerank: false,
                },
                StageConfig {
                    name: "full".into(),
                    model: self.cascade.full_model.clone(),
                    feature_subset: FULL.into(),
                    keep_top: k[1],
                    rerank: false,
                },
                StageConfig {
                    name: "rerank".into(),
                    model: rerank,
                    feature_subset: RERANK.into(),
                    keep_top: k[2],
                    rerank: true,
                },
            ],
            rerank_policy: self.cascade.policy,
        }
    }
}

impl CascadeSection {
    fn full_model_valid(&self) -> bool {
        if self.full_model == "stacked" || self.full_model == "stacked-gbrt" {
            return true;
        }
        match self.full_model.split_once('-') {
            Some((kind, source)) => kind.parse::<ModelKind>().is_ok() && source.parse::<LabelSource>().is_ok(),
            None => false,
        }
    }
}

/// Synthetic world: corpus, hidden utility, judgments and engagement log.
#[derive(Debug, Clone)]
pub struct World {
    pub corpus: Corpus,
    pub utility: PlantedUtility,
    pub judgments: Vec<RelevanceJudgment>,
    pub log: Vec<EngagementRecord>,
}

pub fn generate_world_data(cfg: &ExperimentConfig) -> Result<(Corpus, PlantedUtility, Vec<RelevanceJudgment>)> {
    let (corpus, utility) = generate_corpus(&cfg.corpus.params(cfg.seed))?;
    let j = &cfg.judgments;
    let judgments = generate_judgments(&corpus, &utility, j.top_k, j.random_k, j.raters, derive_seed(cfg.seed, 1))?;
    Ok((corpus, utility, judgments))
}

pub fn generate_world(cfg: &ExperimentConfig) -> Result<World> {
    let (corpus, utility, judgments) = generate_world_data(cfg)?;
    let log = simulate_log(&corpus, &utility, &cfg.sim_params())?;
    Ok(World {
        corpus,
        utility,
        judgments,
        log,
    })
}

/// File names inside a data directory.
pub mod files {
    pub const CORPUS: &str = "corpus.json";
    pub const UTILITY: &str = "utility.json";
    pub const JUDGMENTS: &str = "judgments.jsonl";
    pub const LOG: &str = "log.jsonl";
    pub const SPLIT: &str = "split.json";
    pub const SCHEMA: &str = "schema.json";
    pub const NAVBOOST: &str = "navboost.json";
    pub const FEATURES: &str = "features.jsonl";

    pub fn labels(source: crate::labelgen::LabelSource) -> String {
        format!("labels_{}.jsonl", source.name())
    }

    pub fn pairs(source: crate::labelgen::LabelSource) -> String {
        format!("pairs_{}.jsonl", source.name())
    }

    pub fn cuts(source: crate::labelgen::LabelSource) -> String {
        format!("cuts_{}.json", source.name())
    }
}

pub fn write_world_data(dir: &Path, corpus: &Corpus, utility: &PlantedUtility, judgments: &[RelevanceJudgment]) -> Result<()> {
    write_json(&dir.join(files::CORPUS), corpus)?;
    write_json(&dir.join(files::UTILITY), utility)?;
    write_jsonl(&dir.join(files::JUDGMENTS), judgments)
}

pub fn read_corpus(dir: &Path) -> Result<(Corpus, PlantedUtility)> {
    Ok((read_json(&dir.join(files::CORPUS))?, read_json(&dir.join(files::UTILITY))?))
}

pub fn load_world(dir: &Path) -> Result<World> {
    let (corpus, utility) = read_corpus(dir)?;
    Ok(World {
        corpus,
        utility,
        judgments: read_jsonl(&dir.join(files::JUDGMENTS))?,
        log: read_log(&dir.join(files::LOG))?,
    })
}

/// Labels of one source after pruning, split assignment, discretization and
/// pair extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub source: LabelSource,
    pub cuts: [f64; 3],
    pub instances: Split<Vec<LabeledInstance>>,
    pub pairs: Split<Vec<PreferencePair>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInstance {
    pub split: SplitPart,
    #[serde(flatten)]
    pub instance: LabeledInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub split: SplitPart,
    #[serde(flatten)]
    pub pair: PreferencePair,
}

impl LabelSet {
    fn from_groups(
        source: LabelSource,
        groups: BTreeMap<GroupKey, Vec<LabeledInstance>>,
        split: &SplitAssignment,
        config: &LabelConfig,
    ) -> Self {
        let mut instances: Split<Vec<LabeledInstance>> = Split::default();
        let mut pairs: Split<Vec<PreferencePair>> = Split::default();
        for (key, group) in &groups {
            let Some(part) = split.part(key.0) else {
                continue;
            };
            instances.get_mut(part).extend(group.iter().cloned());
        }
        let cuts = config
            .discretize_cuts
            .unwrap_or_else(|| quartile_cuts(&instances.train.iter().map(|i| i.label).collect::<Vec<_>>()));
        for part in SplitPart::ALL {
            assign_ordinals(instances.get_mut(part), &cuts);
        }
        for part in SplitPart::ALL {
            for group in group_instances(instances.get(part).clone()).values() {
                pairs
                    .get_mut(part)
                    .extend(extract_pairs(group, config.max_pairs_per_group, config.seed));
            }
        }
        LabelSet {
            source,
            cuts,
            instances,
            pairs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let inst = SplitPart::ALL.iter().flat_map(|&p| {
            self.instances.get(p).iter().map(move |i| SplitInstance {
                split: p,
                instance: i.clone(),
            })
        });
        write_jsonl(&dir.join(files::labels(self.source)), inst)?;
        let pairs = SplitPart::ALL.iter().flat_map(|&p| {
            self.pairs.get(p).iter().map(move |pair| SplitPair { split: p, pair: *pair })
        });
        write_jsonl(&dir.join(files::pairs(self.source)), pairs)?;
        write_json(&dir.join(files::cuts(self.source)), &self.cuts)
    }

    pub fn read(dir: &Path, source: LabelSource) -> Result<Self> {
        let mut instances: Split<Vec<LabeledInstance>> = Split::default();
        for si in read_jsonl::<SplitInstance>(&dir.join(files::labels(source)))? {
            instances.get_mut(si.split).push(si.instance);
        }
        let mut pairs: Split<Vec<PreferencePair>> = Split::default();
        for sp in read_jsonl::<SplitPair>(&dir.join(files::pairs(source)))? {
            pairs.get_mut(sp.split).push(sp.pair);
        }
        Ok(LabelSet {
            source,
            cuts: read_json(&dir.join(files::cuts(source)))?,
            instances,
            pairs,
        })
    }

    pub fn n_groups(&self, part: SplitPart) -> usize {
        group_instances(self.instances.get(part).clone()).len()
    }
}

pub fn split_assignment(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<SplitAssignment> {
    SplitAssignment::new(
        corpus.queries.iter().map(|q| q.query_id),
        cfg.split_fractions(),
        derive_seed(cfg.seed, 3),
    )
}

/// Engagement and relevance label sets for the world under `split`.
pub fn build_labels(cfg: &ExperimentConfig, world: &World, split: &SplitAssignment) -> Result<(LabelSet, LabelSet)> {
    let mut label_cfg = cfg.labels.clone();
    label_cfg.seed = derive_seed(cfg.seed, label_cfg.seed ^ 4);
    let eng = engagement_instances(&world.log, &label_cfg)?;
    let eng_groups = prune_groups(group_instances(eng), label_cfg.neg_cap, label_cfg.seed);
    let rel: Vec<LabeledInstance> = world.judgments.iter().map(average_judgment).collect::<Result<_>>()?;
    let rel_groups: BTreeMap<GroupKey, Vec<LabeledInstance>> = group_instances(rel)
        .into_iter()
        .filter(|(_, g)| g.iter().any(|i| i.label > 0.0))
        .collect();
    Ok((
        LabelSet::from_groups(LabelSource::Engagement, eng_groups, split, &label_cfg),
        LabelSet::from_groups(LabelSource::Relevance, rel_groups, split, &label_cfg),
    ))
}

/// Feature statistics derived from the training split only.
#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub schema: FeatureSchema,
    pub text: TextStats,
    pub navboost: NavboostTable,
    pub bm25: Bm25Params,
}

impl FeatureContext {
    pub fn build(cfg: &ExperimentConfig, world: &World, split: &SplitAssignment) -> Result<Self> {
        let train = split.queries(SplitPart::Train);
        Ok(FeatureContext {
            schema: FeatureSchema::standard(),
            text: TextStats::from_pins(&world.corpus.pins),
            navboost: build_navboost(
                &world.log,
                &world.corpus.queries,
                |q| train.contains(&q),
                cfg.navboost.alpha,
                cfg.navboost.beta,
            )?,
            bm25: Bm25Params::default(),
        })
    }

    pub fn featurizer(&self) -> Result<Featurizer<'_>> {
        Featurizer::new(self.schema.clone(), &self.text, &self.navboost, self.bm25)
    }
}

/// Segment a labeled group is featurized under; judgments use a neutral one.
pub fn group_segment(corpus: &Corpus, segment_id: Option<SegmentId>) -> Result<UserSegment> {
    match segment_id {
        Some(s) => corpus
            .segment(s)
            .cloned()
            .ok_or_else(|| Error::data(format!("unknown segment {s}"))),
        None => Ok(UserSegment::neutral(corpus.params.n_categories, corpus.params.dim)),
    }
}

/// Full feature vectors for labeled (group, pin) instances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStore {
    rows: HashMap<(QueryId, Option<SegmentId>, PinId), Vec<f64>>,
}

impl FeatureStore {
    pub fn build<'a>(
        featurizer: &Featurizer<'_>,
        corpus: &Corpus,
        instances: impl IntoIterator<Item = &'a LabeledInstance>,
    ) -> Result<Self> {
        let mut rows = HashMap::new();
        let mut segments: HashMap<Option<SegmentId>, UserSegment> = HashMap::new();
        for inst in instances {
            let key = (inst.query_id, inst.segment_id, inst.pin_id);
            if rows.contains_key(&key) {
                continue;
            }
            let segment = match segments.get(&inst.segment_id) {
                Some(s) => s,
                None => {
                    let s = group_segment(corpus, inst.segment_id)?;
                    segments.entry(inst.segment_id).or_insert(s)
                }
            };
            let query = corpus
                .query(inst.query_id)
                .ok_or_else(|| Error::data(format!("unknown query {}", inst.query_id)))?;
            let pin = corpus
                .pin(inst.pin_id)
                .ok_or_else(|| Error::data(format!("unknown pin {}", inst.pin_id)))?;
            rows.insert(key, featurizer.featurize(query, segment, pin).values);
        }
        Ok(FeatureStore { rows })
    }

    pub fn get(&self, inst: &LabeledInstance) -> Result<&[f64]> {
        self.rows
            .get(&(inst.query_id, inst.segment_id, inst.pin_id))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::data(format!(
                    "no features for query {} segment {:?} pin {}",
                    inst.query_id, inst.segment_id, inst.pin_id
                ))
            })
    }

    pub fn to_rows(&self) -> Vec<FeatureRow> {
        let mut out: Vec<FeatureRow> = self
            .rows
            .iter()
            .map(|(&(query_id, segment_id, pin_id), values)| FeatureRow {
                query_id,
                pin_id,
                segment_id,
                values: values.clone(),
            })
            .collect();
        out.sort_by_key(|r| (r.query_id, r.segment_id, r.pin_id));
        out
    }

    pub fn from_rows(rows: Vec<FeatureRow>) -> Self {
        FeatureStore {
            rows: rows
                .into_iter()
                .map(|r| ((r.query_id, r.segment_id, r.pin_id), r.values))
                .collect(),
        }
    }
}

/// Training rows for one split part, projected onto `selection`.
pub fn pair_set(labels: &LabelSet, part: SplitPart, store: &FeatureStore, selection: &FeatureSelection) -> Result<PairSet> {
    let instances = labels.instances.get(part);
    let mut index: HashMap<(GroupKey, PinId), usize> = HashMap::with_capacity(instances.len());
    let mut set = PairSet::default();
    for (i, inst) in instances.iter().enumerate() {
        index.insert((inst.group(), inst.pin_id), i);
        set.rows.push(selection.project(store.get(inst)?));
        set.labels.push(inst.label);
        set.ordinals.push(inst.ordinal_label);
    }
    for p in labels.pairs.get(part) {
        let g = (p.query_id, p.segment_id);
        let (Some(&a), Some(&b)) = (index.get(&(g, p.preferred_pin)), index.get(&(g, p.other_pin))) else {
            return Err(Error::data(format!("pair references unlabeled pins in query {}", p.query_id)));
        };
        set.pairs.push((a, b));
    }
    Ok(set)
}

/// Ranks each labeled group of `instances` with `model`.
pub fn rank_groups<S: Scorer + ?Sized>(
    model: &S,
    instances: &[LabeledInstance],
    store: &FeatureStore,
) -> Result<Vec<RankedResult>> {
    let mut groups: BTreeMap<GroupKey, Vec<(PinId, Vec<f64>)>> = BTreeMap::new();
    for inst in instances {
        groups
            .entry(inst.group())
            .or_default()
            .push((inst.pin_id, store.get(inst)?.to_vec()));
    }
    Ok(groups
        .into_iter()
        .map(|((query_id, segment_id), cands)| RankedResult {
            query_id,
            segment_id,
            pin_ids: rank(model, &cands).into_iter().map(|(p, _)| p).collect(),
        })
        .collect())
}

/// NDCG of `model` on one split part of a label set.
pub fn model_ndcg<S: Scorer + ?Sized>(
    model: &S,
    labels: &LabelSet,
    part: SplitPart,
    store: &FeatureStore,
    eval: &EvalSection,
) -> Result<NdcgSummary> {
    let instances = labels.instances.get(part);
    let lists = rank_groups(model, instances, store)?;
    Ok(evaluate_ndcg(&lists, &LabelIndex::from_instances(instances), &eval.cutoffs, eval.log_base))
}

/// Everything built before model training, in memory.
pub struct Prepared {
    pub world: World,
    pub split: SplitAssignment,
    pub engagement: LabelSet,
    pub relevance: LabelSet,
    pub context: FeatureContext,
    pub store: FeatureStore,
}

impl Prepared {
    pub fn build(cfg: &ExperimentConfig, world: World) -> Result<Self> {
        let split = split_assignment(cfg, &world.corpus)?;
        let (engagement, relevance) = build_labels(cfg, &world, &split)?;
        let context = FeatureContext::build(cfg, &world, &split)?;
        let featurizer = context.featurizer()?;
        let all = SplitPart::ALL
            .iter()
            .flat_map(|&p| engagement.instances.get(p).iter().chain(relevance.instances.get(p)));
        let store = FeatureStore::build(&featurizer, &world.corpus, all)?;
        Ok(Prepared {
            world,
            split,
            engagement,
            relevance,
            context,
            store,
        })
    }

    pub fn labels(&self, source: LabelSource) -> &LabelSet {
        match source {
            LabelSource::Engagement => &self.engagement,
            LabelSource::Relevance => &self.relevance,
        }
    }

    /// Writes the split, both label sets and, when `with_features`, the
    /// schema, navboost table and feature rows.
    pub fn write_labels(&self, dir: &Path, with_features: bool) -> Result<()> {
        write_json(&dir.join(files::SPLIT), &self.split)?;
        self.engagement.write(dir)?;
        self.relevance.write(dir)?;
        if with_features {
            write_json(&dir.join(files::SCHEMA), &self.context.schema)?;
            write_json(&dir.join(files::NAVBOOST), &self.context.navboost)?;
            write_jsonl(&dir.join(files::FEATURES), self.store.to_rows())?;
        }
        Ok(())
    }

    /// Reads what `write_labels` (with features) and the data stages wrote.
    pub fn load(dir: &Path) -> Result<Self> {
        let world = load_world(dir)?;
        let context = FeatureContext {
            schema: read_json(&dir.join(files::SCHEMA))?,
            text: TextStats::from_pins(&world.corpus.pins),
            navboost: read_json(&dir.join(files::NAVBOOST))?,
            bm25: Bm25Params::default(),
        };
        context.schema.validate()?;
        Ok(Prepared {
            split: read_json(&dir.join(files::SPLIT))?,
            engagement: LabelSet::read(dir, LabelSource::Engagement)?,
            relevance: LabelSet::read(dir, LabelSource::Relevance)?,
            store: FeatureStore::from_rows(read_jsonl(&dir.join(files::FEATURES))?),
            context,
            world,
        })
    }
}

/// Trains `kind` on the training split of `source` over a feature subset.
pub fn train_on(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    kind: ModelKind,
    source: LabelSource,
    subset: &str,
) -> Result<RankModel> {
    let selection = FeatureSelection::subset(&prepared.context.schema, subset)?;
    if kind == ModelKind::Rule {
        let rule = if subset == RERANK {
            &cfg.cascade.rerank_rule
        } else if subset == LIGHTWEIGHT {
            &cfg.cascade.light_rule
        } else {
            &cfg.models.rule
        };
        return rule_model(rule, &selection);
    }
    let set = pair_set(prepared.labels(source), SplitPart::Train, &prepared.store, &selection)?;
    let seed = derive_seed(cfg.seed, 100 + kind as u64 * 2 + source as u64);
    info!("training {kind} on {} {} rows, {} pairs", source.name(), set.rows.len(), set.pairs.len());
    train_model(kind, &set, &selection, &cfg.models, seed, Some(source))
}

/// Stacked GBRT trained on both sources' pairs with the given gamma.
pub fn train_stacked(cfg: &ExperimentConfig, prepared: &Prepared, gamma: f64) -> Result<RankModel> {
    let selection = FeatureSelection::subset(&prepared.context.schema, FULL)?;
    let eng = pair_set(&prepared.engagement, SplitPart::Train, &prepared.store, &selection)?;
    let rel = pair_set(&prepared.relevance, SplitPart::Train, &prepared.store, &selection)?;
    let (ensemble, curve) = train_stacked_gbrt(&eng, &rel, gamma, &cfg.models.gbrt, cfg.stacking.loss)?;
    let mut hyper = cfg.models.hyperparameters(ModelKind::Gbrt);
    hyper["gamma"] = serde_json::json!(gamma);
    hyper["stack_loss"] = serde_json::to_value(cfg.stacking.loss)?;
    Ok(RankModel {
        format_version: MODEL_FORMAT_VERSION,
        schema_id: selection.schema_id.clone(),
        features: selection.names.clone(),
        feature_indices: selection.indices.clone(),
        params: ModelParams::Gbrt { ensemble },
        hyperparameters: hyper,
        seed: cfg.seed,
        training_meta: crate::models::TrainingMeta {
            loss_curve: curve,
            source: None,
            n_rows: eng.rows.len() + rel.rows.len(),
            n_pairs: eng.pairs.len() + rel.pairs.len(),
        },
    })
}

/// Per-model NDCG on the test split under both label sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub name: String,
    pub metrics: BTreeMap<String, f64>,
}

fn ndcg_metrics(prefix: &str, s: &NdcgSummary, out: &mut BTreeMap<String, f64>) {
    for (p, v) in s.cutoffs.iter().zip(&s.mean) {
        out.insert(format!("{prefix}@{p}"), *v);
    }
}

pub fn score_model<S: Scorer + ?Sized>(
    name: &str,
    model: &S,
    prepared: &Prepared,
    eval: &EvalSection,
    part: SplitPart,
) -> Result<ModelScore> {
    let mut metrics = BTreeMap::new();
    ndcg_metrics("ndcg_e", &model_ndcg(model, &prepared.engagement, part, &prepared.store, eval)?, &mut metrics);
    ndcg_metrics("ndcg_r", &model_ndcg(model, &prepared.relevance, part, &prepared.store, eval)?, &mut metrics);
    Ok(ModelScore {
        name: name.to_string(),
        metrics,
    })
}

/// Relative change of every metric of `b` against baseline `a`.
pub fn relative_to(a: &ModelScore, b: &ModelScore) -> BTreeMap<String, Option<f64>> {
    a.metrics
        .iter()
        .filter_map(|(k, va)| b.metrics.get(k).map(|vb| (k.clone(), crate::evalkit::relative_delta(*va, *vb))))
        .collect()
}

/// Cascade runs for every (test query, segment) over the whole corpus.
pub fn run_cascade_on_split(
    cascade: &Cascade<'_>,
    prepared: &Prepared,
    part: SplitPart,
) -> Result<Vec<RankedList>> {
    let featurizer = prepared.context.featurizer()?;
    let corpus = &prepared.world.corpus;
    let pins: Vec<&crate::synthlog::Pin> = corpus.pins.iter().collect();
    let mut out = Vec::new();
    for q in prepared.split.queries(part) {
        let query = corpus.query(q).ok_or_else(|| Error::data(format!("unknown query {q}")))?;
        for segment in &corpus.segments {
            out.push(run_cascade(cascade, &featurizer, query, segment, Some(segment.segment_id), &pins)?);
        }
    }
    Ok(out)
}

/// Evaluation of a set of cascade lists: NDCG against test engagement labels,
/// replay against the held-out log, freshness/localness ratios.
pub fn evaluate_lists(
    name: &str,
    lists: &[RankedResult],
    prepared: &Prepared,
    part: SplitPart,
    eval: &EvalSection,
) -> Result<EvalReport> {
    let queries = prepared.split.queries(part);
    let holdout: Vec<EngagementRecord> = prepared
        .world
        .log
        .iter()
        .filter(|r| queries.contains(&r.query_id))
        .cloned()
        .collect();
    let mut report = EvalReport::new(name, queries.iter().copied());
    let eng = LabelIndex::from_instances(prepared.engagement.instances.get(part));
    report.ndcg_engagement = Some(evaluate_ndcg(lists, &eng, &eval.cutoffs, eval.log_base));
    report.replay = Some(replay_metrics(lists, &holdout, eval.top_k));
    report.fresh_local = Some(freshness_localness(lists, &prepared.world.corpus, &holdout, eval.top_k)?);
    Ok(report)
}

/// Full-stage scores of every candidate in lightweight-score order, per
/// (query, segment) of a split part; input to the simulated latency model.
/// The full stage is the reference because the funnel exists to hand it the
/// candidates it would have ranked highest anyway.
pub fn lightweight_reference_scores<S: Scorer + ?Sized, R: Scorer + ?Sized>(
    model: &S,
    reference: &R,
    prepared: &Prepared,
    part: SplitPart,
) -> Result<Vec<Vec<f64>>> {
    let featurizer = prepared.context.featurizer()?;
    let corpus = &prepared.world.corpus;
    let pins: Vec<&crate::synthlog::Pin> = corpus.pins.iter().collect();
    let mut out = Vec::new();
    for q in prepared.split.queries(part) {
        let query = corpus.query(q).ok_or_else(|| Error::data(format!("unknown query {q}")))?;
        for segment in &corpus.segments {
            let reference_scores: HashMap<PinId, f64> = pins
                .iter()
                .map(|p| (p.pin_id, reference.score(&featurizer.featurize(query, segment, p).values)))
                .collect();
            let ranked = rank_all(model, &featurizer, query, segment, &pins);
            out.push(ranked.iter().map(|(p, _)| reference_scores[p]).collect());
        }
    }
    Ok(out)
}

/// Deterministic outputs of `reproduce`; timings live elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub seed: u64,
    pub n_groups: BTreeMap<String, usize>,
    /// Test-split NDCG of every full-stage model.
    pub models: Vec<ModelScore>,
    /// Relative change of each model against RankSVM trained on the same source.
    pub vs_ranksvm: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    /// (gamma, validation NDCG^e, validation NDCG^r) per grid value.
    pub gamma_table: Vec<(f64, f64, f64)>,
    pub gamma: f64,
    /// Lightweight stage: trained model against the rule baseline.
    pub lightweight: BTreeMap<String, ModelScore>,
    pub simulated_latency: BTreeMap<String, LatencyHistogram>,
    /// Cascade with the re-ranker policy against the identity re-ranker.
    pub cascade: Vec<EvalReport>,
    pub rerank_vs_identity: Vec<MetricDelta>,
}

/// Wall-clock latency of the funnel against full-model-on-all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_candidates: usize,
    pub cascade: LatencyHistogram,
    pub full_on_all: LatencyHistogram,
    /// Median full-on-all time over median cascade time.
    pub speedup: f64,
}

/// The trained model registry of a pipeline run, keyed by cascade names.
pub struct Pipeline {
    pub models: ModelSet,
}

impl Pipeline {
    pub fn model(&self, name: &str) -> Result<&LoadedModel> {
        self.models
            .get(name)
            .ok_or_else(|| Error::config(format!("no model named '{name}'")))
    }
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    info!("stage {name}");
    f().map_err(|e| e.in_stage(name))
}

/// Trains every model the pipeline needs and writes each under `models_dir`.
pub fn train_all(cfg: &ExperimentConfig, prepared: &Prepared, models_dir: &Path) -> Result<Pipeline> {
    let mut models = ModelSet::new();
    for source in [LabelSource::Engagement, LabelSource::Relevance] {
        for kind in ModelKind::TRAINED {
            let m = train_on(cfg, prepared, kind, source, FULL)?;
            let name = format!("{kind}-{}", source.name());
            m.save(&models_dir.join(format!("{name}.json")))?;
            models.insert(name, LoadedModel::Single(m));
        }
    }
    for (name, kind, subset) in [
        (format!("{}-light", cfg.cascade.light_kind), cfg.cascade.light_kind, LIGHTWEIGHT),
        ("rule-light".to_string(), ModelKind::Rule, LIGHTWEIGHT),
        ("rule-rerank".to_string(), ModelKind::Rule, RERANK),
    ] {
        let m = train_on(cfg, prepared, kind, LabelSource::Engagement, subset)?;
        m.save(&models_dir.join(format!("{name}.json")))?;
        models.insert(name, LoadedModel::Single(m));
    }
    Ok(Pipeline { models })
}

fn single<'a>(p: &'a Pipeline, name: &str) -> Result<&'a RankModel> {
    match p.model(name)? {
        LoadedModel::Single(m) => Ok(m),
        LoadedModel::Stacked(_) => Err(Error::config(format!("'{name}' is a stacked model"))),
    }
}

/// Post-hoc stacking of the configured kind with gamma chosen on validation.
pub fn stack_models(cfg: &ExperimentConfig, prepared: &Prepared, pipeline: &Pipeline) -> Result<(StackedModel, Vec<(f64, f64, f64)>)> {
    let kind = cfg.stacking.kind;
    let eng = single(pipeline, &format!("{kind}-engagement"))?.clone();
    let rel = single(pipeline, &format!("{kind}-relevance"))?.clone();
    let base = StackedModel::new(eng, rel, 1.0)?;
    let calibration: Vec<Vec<f64>> = prepared
        .engagement
        .instances
        .train
        .iter()
        .chain(&prepared.relevance.instances.train)
        .map(|i| prepared.store.get(i).map(<[f64]>::to_vec))
        .collect::<Result<_>>()?;
    let base = if cfg.stacking.normalize {
        base.with_normalization(&calibration)
    } else {
        base
    };
    let cutoff_idx = cfg.eval.cutoffs.iter().position(|&c| c == cfg.stacking.cutoff).unwrap_or(0);
    let (gamma, table) = select_gamma(&cfg.stacking.gamma_grid, cfg.stacking.blend, |g| {
        let mut m = base.clone();
        m.gamma = g;
        let e = model_ndcg(&m, &prepared.engagement, SplitPart::Valid, &prepared.store, &cfg.eval)?;
        let r = model_ndcg(&m, &prepared.relevance, SplitPart::Valid, &prepared.store, &cfg.eval)?;
        Ok((e.mean[cutoff_idx], r.mean[cutoff_idx]))
    })?;
    let mut stacked = base;
    stacked.gamma = gamma;
    Ok((stacked, table))
}

/// Runs the whole pipeline into `out`: data, labels, models, stacking,
/// cascade ranking, evaluation, simulated latency and the wall-clock bench.
/// `metrics.json` is deterministic in the config; `latency.json` holds timings.
pub fn reproduce(cfg: &ExperimentConfig, out: &Path) -> Result<ReproduceSummary> {
    stage("config", || cfg.validate())?;
    let data = out.join("data");
    let world = stage("gen", || {
        let (corpus, utility, judgments) = generate_world_data(cfg)?;
        write_world_data(&data, &corpus, &utility, &judgments)?;
        Ok((corpus, utility, judgments))
    })?;
    let world = stage("simlog", || {
        let (corpus, utility, judgments) = world;
        let log = simulate_log(&corpus, &utility, &cfg.sim_params())?;
        write_log(&log, &data.join(files::LOG))?;
        Ok(World {
            corpus,
            utility,
            judgments,
            log,
        })
    })?;
    let prepared = stage("labels", || {
        let p = Prepared::build(cfg, world)?;
        p.write_labels(&data, true)?;
        Ok(p)
    })?;
    let models_dir = out.join("models");
    let mut pipeline = stage("train", || train_all(cfg, &prepared, &models_dir))?;

    let (stacked, gamma_table, stacked_gbrt) = stage("stack", || {
        let (stacked, table) = stack_models(cfg, &prepared, &pipeline)?;
        stacked.save(&models_dir.join("stacked.json"))?;
        let trained = train_stacked(cfg, &prepared, stacked.gamma)?;
        trained.save(&models_dir.join("stacked-gbrt.json"))?;
        Ok((stacked, table, trained))
    })?;
    let gamma = stacked.gamma;
    pipeline.models.insert("stacked".into(), LoadedModel::Stacked(stacked));
    pipeline.models.insert("stacked-gbrt".into(), LoadedModel::Single(stacked_gbrt));

    let scores = stage("eval-models", || {
        let mut names: Vec<String> = Vec::new();
        for source in [LabelSource::Engagement, LabelSource::Relevance] {
            for kind in ModelKind::TRAINED {
                names.push(format!("{kind}-{}", source.name()));
            }
        }
        names.push("stacked".into());
        names.push("stacked-gbrt".into());
        names
            .iter()
            .map(|n| score_model(n, pipeline.model(n)?, &prepared, &cfg.eval, SplitPart::Test))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut vs_ranksvm = BTreeMap::new();
    for s in &scores {
        let source = s.name.rsplit('-').next().unwrap_or("");
        let baseline = match source {
            "engagement" | "relevance" => format!("ranksvm-{source}"),
            _ => "ranksvm-engagement".into(),
        };
        if let Some(b) = scores.iter().find(|x| x.name == baseline) {
            vs_ranksvm.insert(s.name.clone(), relative_to(b, s));
        }
    }

    let light_name = format!("{}-light", cfg.cascade.light_kind);
    let (lightweight, simulated_latency) = stage("lightweight", || {
        let mut scores = BTreeMap::new();
        let mut latency = BTreeMap::new();
        let full = pipeline.model(&cfg.cascade.full_model)?;
        for name in [light_name.as_str(), "rule-light"] {
            let m = pipeline.model(name)?;
            scores.insert(name.to_string(), score_model(name, m, &prepared, &cfg.eval, SplitPart::Test)?);
            let utils = lightweight_reference_scores(m, full, &prepared, SplitPart::Test)?;
            let mut lm = cfg.bench.latency_model;
            lm.seed = derive_seed(cfg.seed, 5);
            latency.insert(name.to_string(), simulate_latency(&utils, &lm));
        }
        Ok((scores, latency))
    })?;

    let (reports, ranked) = stage("rank", || {
        let schema = &prepared.context.schema;
        let with_policy = cfg.cascade_config();
        let mut identity = with_policy.clone();
        identity.rerank_policy = RerankPolicy::default();
        if let Some(last) = identity.stages.last_mut() {
            last.model = IDENTITY_MODEL.into();
        }
        let mut reports = Vec::new();
        let mut ranked = Vec::new();
        for (name, config) in [("cascade-identity-rerank", &identity), ("cascade-rerank", &with_policy)] {
            let c = Cascade::new(config, &pipeline.models, schema)?;
            let lists = run_cascade_on_split(&c, &prepared, SplitPart::Test)?;
            let results: Vec<RankedResult> = lists.iter().map(RankedList::to_result).collect();
            reports.push(evaluate_lists(name, &results, &prepared, SplitPart::Test, &cfg.eval)?);
            if name == "cascade-rerank" {
                ranked = lists;
            }
        }
        write_json(&out.join("cascade.json"), &with_policy)?;
        write_jsonl(&out.join("ranked.jsonl"), &ranked)?;
        Ok((reports, ranked))
    })?;
    drop(ranked);

    let summary = stage("eval", || {
        let eval_dir = out.join("eval");
        for r in &reports {
            r.write(&eval_dir, &r.name)?;
        }
        let deltas = compare(&reports[0], &reports[1])?;
        std::fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
        let path = eval_dir.join("rerank_vs_identity.csv");
        std::fs::write(&path, crate::evalkit::deltas_to_csv(&deltas)).map_err(|e| Error::io(&path, e))?;
        let mut n_groups = BTreeMap::new();
        for set in [&prepared.engagement, &prepared.relevance] {
            for part in SplitPart::ALL {
                n_groups.insert(format!("{}_{}", set.source.name(), part.name()), set.n_groups(part));
            }
        }
        let summary = ReproduceSummary {
            seed: cfg.seed,
            n_groups,
            models: scores,
            vs_ranksvm,
            gamma_table,
            gamma,
            lightweight,
            simulated_latency,
            cascade: reports,
            rerank_vs_identity: deltas,
        };
        write_json(&out.join("metrics.json"), &summary)?;
        Ok(summary)
    })?;

    stage("bench", || {
        let report = bench(cfg, &pipeline.models)?;
        write_json(&out.join("latency.json"), &report)
    })?;
    Ok(summary)
}

/// Wall-clock comparison of the funnel against scoring every candidate with
/// the full-stage model, on a fresh corpus of `bench.n_candidates` pins.
pub fn bench(cfg: &ExperimentConfig, models: &ModelSet) -> Result<BenchReport> {
    let b = &cfg.bench;
    let mut section = cfg.corpus.clone();
    section.n_pins = b.n_candidates;
    section.n_queries = b.n_queries.max(1);
    let (corpus, _) = generate_corpus(&section.params(derive_seed(cfg.seed, 6)))?;
    let text = TextStats::from_pins(&corpus.pins);
    let navboost = NavboostTable::empty(cfg.navboost.alpha, cfg.navboost.beta);
    let schema = FeatureSchema::standard();
    let featurizer = Featurizer::new(schema.clone(), &text, &navboost, Bm25Params::default())?;
    let config = cfg.cascade_config();
    let cascade = Cascade::new(&config, models, &schema)?;
    let full = models
        .get(&cfg.cascade.full_model)
        .ok_or_else(|| Error::config(format!("no full-stage model '{}'", cfg.cascade.full_model)))?;
    let pins: Vec<&crate::synthlog::Pin> = corpus.pins.iter().collect();
    let segment = &corpus.segments[0];
    let queries = &corpus.queries;
    let (funnel, all) = cascade::measure_latency_paired(
        queries.len(),
        b.reps,
        |q| Ok(run_cascade(&cascade, &featurizer, &queries[q], segment, Some(segment.segment_id), &pins)?.timings_ms),
        |q| {
            rank_all(full, &featurizer, &queries[q], segment, &pins);
            Ok(Vec::new())
        },
    )?;
    let med = |h: &LatencyHistogram| crate::util::median(&h.per_query_ms);
    Ok(BenchReport {
        n_candidates: b.n_candidates,
        speedup: med(&all) / med(&funnel).max(1e-9),
        cascade: funnel,
        full_on_all: all,
    })
}

/// Resolves a model file path for each cascade stage.
pub fn load_models(paths: &BTreeMap<String, PathBuf>) -> Result<ModelSet> {
    paths
        .iter()
        .map(|(name, path)| Ok((name.clone(), LoadedModel::load(path)?)))
        .collect()
}
