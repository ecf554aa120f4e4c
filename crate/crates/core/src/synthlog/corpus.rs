use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Gender, Pin, PinId, Query, RelevanceJudgment, UserSegment};
use crate::error::{Error, Result};
use crate::util::{cosine, hash_unit, rng_for};

pub const COUNTRIES: [&str; 8] = ["US", "GB", "DE", "FR", "JP", "BR", "IN", "MX"];

const WORDS_PER_CATEGORY: usize = 12;
const GENERIC_WORDS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub seed: u64,
    pub n_pins: usize,
    pub n_queries: usize,
    pub n_segments: usize,
    /// Number of categories (C).
    pub n_categories: usize,
    /// Number of topics (Z).
    pub n_topics: usize,
    /// Latent vector dimension (d).
    pub dim: usize,
    #[serde(default = "default_countries")]
    pub n_countries: usize,
    /// Fraction of pins generated with age at most 30 days.
    #[serde(default = "default_fresh_fraction")]
    pub fresh_fraction: f64,
}

fn default_countries() -> usize {
    4
}

fn default_fresh_fraction() -> f64 {
    0.3
}

impl CorpusParams {
    pub fn new(seed: u64, n_pins: usize, n_queries: usize, n_segments: usize, dims: (usize, usize, usize)) -> Self {
        CorpusParams {
            seed,
            n_pins,
            n_queries,
            n_segments,
            n_categories: dims.0,
            n_topics: dims.1,
            dim: dims.2,
            n_countries: default_countries(),
            fresh_fraction: default_fresh_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pins == 0 || self.n_queries == 0 || self.n_segments == 0 {
            return Err(Error::config("corpus sizes must all be at least 1"));
        }
        if self.n_categories == 0 || self.n_topics == 0 || self.dim == 0 {
            return Err(Error::config(format!(
                "invalid dims (C={}, Z={}, d={}): all must be at least 1",
                self.n_categories, self.n_topics, self.dim
            )));
        }
        if self.n_countries == 0 || self.n_countries > COUNTRIES.len() {
            return Err(Error::config(format!("n_countries must be in 1..={}", COUNTRIES.len())));
        }
        if !(0.0..=1.0).contains(&self.fresh_fraction) {
            return Err(Error::config("fresh_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub params: CorpusParams,
    pub pins: Vec<Pin>,
    pub queries: Vec<Query>,
    pub segments: Vec<crate::synthlog::UserSegment>,
}

impl Corpus {
    pub fn pin(&self, id: PinId) -> Option<&Pin> {
        // Generated pins are indexed by id; fall back to a scan for ingested corpora.
        match self.pins.get(id as usize) {
            Some(p) if p.pin_id == id => Some(p),
            _ => self.pins.iter().find(|p| p.pin_id == id),
        }
    }

    pub fn query(&self, id: u32) -> Option<&Query> {
        match self.queries.get(id as usize) {
            Some(q) if q.query_id == id => Some(q),
            _ => self.queries.iter().find(|q| q.query_id == id),
        }
    }

    pub fn segment(&self, id: u32) -> Option<&UserSegment> {
        match self.segments.get(id as usize) {
            Some(s) if s.segment_id == id => Some(s),
            _ => self.segments.iter().find(|s| s.segment_id == id),
        }
    }
}

/// Hidden (query, pin) relevance in [0, 1]. A pure function of the pair and a
/// private noise seed; only the simulator and evaluator hold one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedUtility {
    pub noise_seed: u64,
    /// Base relevance below which utility is exactly zero.
    pub floor: f64,
}

impl PlantedUtility {
    pub fn utility(&self, query: &Query, pin: &Pin) -> f64 {
        let cat = cosine(&query.category_dist, &pin.category_dist);
        let emb = cosine(&query.latent_vec, &pin.latent_vec).max(0.0);
        let text = if query.tokens.is_empty() {
            0.0
        } else {
            let hits = query.tokens.iter().filter(|t| pin.annotations.contains(t)).count();
            hits as f64 / query.tokens.len() as f64
        };
        let noise = 0.2 * (hash_unit(self.noise_seed, query.query_id as u64, pin.pin_id) - 0.5);
        let base = 0.45 * cat + 0.3 * emb + 0.2 * text + 0.1 * pin.social_score + noise;
        ((base - self.floor) / (1.0 - self.floor)).clamp(0.0, 1.0)
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    v
}

/// Mixes `mass` onto index `primary` with a Dirichlet background and renormalizes.
fn peaked(rng: &mut ChaCha8Rng, n: usize, primary: usize, mass: f64, alpha: f64) -> Vec<f64> {
    let mut v = dirichlet(rng, n, alpha);
    v.iter_mut().for_each(|x| *x *= 1.0 - mass);
    v[primary] += mass;
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn unit_normal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    normalize(v)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = crate::util::norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn category_word(category: usize, j: usize) -> String {
    format!("c{category}w{j}")
}

fn generic_word(j: usize) -> String {
    format!("g{j}")
}

/// Zipf-like index in 0..n favouring low indices.
fn skewed_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let u: f64 = rng.random();
    ((u * u) * n as f64) as usize % n
}

/// Per-category audience lean: a repeating neutral / male / female / neutral pattern.
fn category_lean(category: usize) -> f64 {
    match category % 4 {
        1 => 0.8,
        2 => -0.6,
        _ => 0.0,
    }
}

/// Generates pins, queries and segments deterministically from `params.seed`,
/// together with the hidden utility used by the simulator.
pub fn generate_corpus(params: &CorpusParams) -> Result<(Corpus, PlantedUtility)> {
    params.validate()?;
    let c = params.n_categories;
    let z = params.n_topics;
    let d = params.dim;

    let mut rng = rng_for(params.seed, 1);
    let centroids: Vec<Vec<f64>> = (0..c).map(|_| unit_normal(&mut rng, d)).collect();
    let countries = &COUNTRIES[..params.n_countries];

    let mut pins = Vec::with_capacity(params.n_pins);
    let mut pin_rng = rng_for(params.seed, 2);
    for pin_id in 0..params.n_pins {
        let rng = &mut pin_rng;
        let primary = rng.random_range(0..c);
        let category_dist = peaked(rng, c, primary, 0.7, 0.3);
        // Topics are owned by categories round-robin (topic t belongs to t % C).
        let owned: Vec<usize> = (0..z).filter(|t| t % c == primary).collect();
        let topic_primary = if owned.is_empty() {
            rng.random_range(0..z)
        } else {
            owned[rng.random_range(0..owned.len())]
        };
        let topic_dist = peaked(rng, z, topic_primary, 0.6, 0.3);
        let latent_vec = normalize(
            centroids[primary]
                .iter()
                .map(|&m| m + 0.6 * gauss(rng) / (d as f64).sqrt())
                .collect(),
        );
        let n_tokens = rng.random_range(3..=8);
        let annotations = (0..n_tokens)
            .map(|_| {
                if rng.random_bool(0.75) {
                    category_word(primary, skewed_index(rng, WORDS_PER_CATEGORY))
                } else {
                    generic_word(skewed_index(rng, GENERIC_WORDS))
                }
            })
            .collect();
        let age_days = if rng.random_bool(params.fresh_fraction) {
            rng.random_range(0.0..=30.0)
        } else {
            rng.random_range(30.5..1000.0)
        };
        let social_score = Beta::new(2.0, 3.0).expect("valid beta").sample(rng);
        let gender_lean = category_dist
            .iter()
            .enumerate()
            .map(|(k, w)| w * category_lean(k))
            .sum::<f64>()
            .clamp(-1.0, 1.0);
        pins.push(Pin {
            pin_id: pin_id as PinId,
            annotations,
            category_dist,
            topic_dist,
            latent_vec,
            linked_country: countries[rng.random_range(0..countries.len())].to_string(),
            age_days,
            social_score,
            gender_lean,
        });
    }

    let mut q_rng = rng_for(params.seed, 3);
    let queries = (0..params.n_queries)
        .map(|query_id| {
            let rng = &mut q_rng;
            let primary = rng.random_range(0..c);
            let category_dist = peaked(rng, c, primary, 0.8, 0.2);
            let latent_vec = normalize(
                centroids[primary]
                    .iter()
                    .map(|&m| m + 0.4 * gauss(rng) / (d as f64).sqrt())
                    .collect(),
            );
            let n_tokens = rng.random_range(1..=3);
            let tokens = (0..n_tokens)
                .map(|_| category_word(primary, skewed_index(rng, WORDS_PER_CATEGORY)))
                .collect();
            let lean: f64 = category_dist.iter().enumerate().map(|(k, w)| w * category_lean(k)).sum();
            Query {
                query_id: query_id as u32,
                tokens,
                category_dist,
                latent_vec,
                frequency: (1000 / (query_id + 1)) as u32 + 1,
                male_oriented_score: lean.clamp(0.0, 1.0),
            }
        })
        .collect();

    let mut s_rng = rng_for(params.seed, 4);
    let segments = (0..params.n_segments)
        .map(|segment_id| {
            let rng = &mut s_rng;
            let u: f64 = rng.random();
            let gender = if u < 0.6 {
                Gender::Female
            } else if u < 0.9 {
                Gender::Male
            } else {
                Gender::Unknown
            };
            UserSegment {
                segment_id: segment_id as u32,
                gender,
                country: countries[segment_id % countries.len()].to_string(),
                category_affinity: dirichlet(rng, c, 0.5),
                latent_vec: unit_normal(rng, d),
            }
        })
        .collect();

    let utility = PlantedUtility {
        noise_seed: crate::util::derive_seed(params.seed, 5),
        floor: 0.35,
    };
    Ok((
        Corpus {
            params: params.clone(),
            pins,
            queries,
            segments,
        },
        utility,
    ))
}

/// Simulated expert judgments: for every query, the `top_k` highest-utility
/// pins plus `random_k` random others, each rated by `raters` noisy judges.
pub fn generate_judgments(
    corpus: &Corpus,
    utility: &PlantedUtility,
    top_k: usize,
    random_k: usize,
    raters: usize,
    seed: u64,
) -> Result<Vec<RelevanceJudgment>> {
    if raters == 0 {
        return Err(Error::config("at least one rater is required"));
    }
    let mut out = Vec::new();
    for query in &corpus.queries {
        let mut rng = rng_for(seed, 0x1000 + query.query_id as u64);
        let mut scored: Vec<(f64, PinId)> = corpus.pins.iter().map(|p| (utility.utility(query, p), p.pin_id)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<PinId> = scored.iter().take(top_k).map(|&(_, id)| id).collect();
        let rest: Vec<PinId> = scored.iter().skip(top_k).map(|&(_, id)| id).collect();
        let k = random_k.min(rest.len());
        chosen.extend(sample(&mut rng, rest.len(), k).into_iter().map(|i| rest[i]));
        chosen.sort_unstable();
        for pin_id in chosen {
            let pin = corpus.pin(pin_id).expect("pin from corpus");
            let u = utility.utility(query, pin);
            let ratings = (0..raters)
                .map(|_| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    (2.0 * u + 0.4 * noise).round().clamp(0.0, 2.0) as u8
                })
                .collect();
            out.push(RelevanceJudgment {
                query_id: query.query_id,
                pin_id,
                ratings,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::is_distribution;

    fn small(seed: u64) -> CorpusParams {
        CorpusParams::new(seed, 1000, 50, 4, (8, 16, 32))
    }

    #[test]
    fn same_seed_same_corpus_bytes() {
        let (a, ua) = generate_corpus(&small(7)).unwrap();
        let (b, ub) = generate_corpus(&small(7)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(ua, ub);
    }

    #[test]
    fn different_seed_changes_annotations() {
        let (a, _) = generate_corpus(&small(7)).unwrap();
        let (b, _) = generate_corpus(&small(8)).unwrap();
        assert!(a.pins.iter().zip(&b.pins).any(|(x, y)| x.annotations != y.annotations));
    }

    #[test]
    fn utility_in_unit_interval_exhaustively() {
        let (corpus, utility) = generate_corpus(&small(7)).unwrap();
        let mut zero = 0;
        for q in &corpus.queries {
            for p in &corpus.pins {
                let u = utility.utility(q, p);
                assert!((0.0..=1.0).contains(&u));
                if u == 0.0 {
                    zero += 1;
                }
            }
        }
        // Most pins are irrelevant to a given query.
        assert!(zero > corpus.pins.len() * corpus.queries.len() / 2);
    }

    #[test]
    fn distributions_are_valid() {
        let (corpus, _) = generate_corpus(&small(3)).unwrap();
        for p in &corpus.pins {
            assert!(is_distribution(&p.category_dist, 1e-9));
            assert!(is_distribution(&p.topic_dist, 1e-9));
            assert!(p.age_days >= 0.0);
            assert!((0.0..=1.0).contains(&p.social_score));
        }
        for q in &corpus.queries {
            assert!(q.frequency >= 1);
            assert!(is_distribution(&q.category_dist, 1e-9));
        }
        for s in &corpus.segments {
            assert!(is_distribution(&s.category_affinity, 1e-9));
        }
    }

    #[test]
    fn zero_dims_rejected() {
        let mut p = small(1);
        p.dim = 0;
        assert!(matches!(generate_corpus(&p), Err(Error::Config(_))));
        let mut p = small(1);
        p.n_pins = 0;
        assert!(generate_corpus(&p).is_err());
    }

    #[test]
    fn judgments_are_on_three_level_scale() {
        let (corpus, utility) = generate_corpus(&CorpusParams::new(1, 200, 5, 2, (4, 8, 8))).unwrap();
        let js = generate_judgments(&corpus, &utility, 10, 20, 3, 9).unwrap();
        assert_eq!(js.len(), 5 * 30);
        assert!(js.iter().all(|j| j.ratings.len() == 3 && j.ratings.iter().all(|&r| r <= 2)));
    }
}
