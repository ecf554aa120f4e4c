use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::synthlog::Pin;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Maximum token distance for proximity pairs.
    pub window: usize,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: 1.2,
            b: 0.75,
            window: 3,
        }
    }
}

/// Document frequencies and average length over pin annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextStats {
    pub n_docs: usize,
    pub avg_len: f64,
    pub doc_freq: HashMap<String, u32>,
}

impl TextStats {
    pub fn from_pins<'a>(pins: impl IntoIterator<Item = &'a Pin>) -> Self {
        Self::from_docs(pins.into_iter().map(|p| p.annotations.as_slice()))
    }

    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut stats = TextStats::default();
        let mut total = 0usize;
        for doc in docs {
            stats.n_docs += 1;
            total += doc.len();
            let mut seen: Vec<&String> = doc.iter().collect();
            seen.sort();
            seen.dedup();
            for t in seen {
                *stats.doc_freq.entry(t.clone()).or_insert(0) += 1;
            }
        }
        stats.avg_len = if stats.n_docs == 0 { 0.0 } else { total as f64 / stats.n_docs as f64 };
        stats
    }

    /// Non-negative idf: ln((N - df + 0.5) / (df + 0.5) + 1).
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq.get(token).copied().unwrap_or(0) as f64;
        let n = self.n_docs as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn length_norm(&self, doc_len: usize, params: &Bm25Params) -> f64 {
        let ratio = if self.avg_len > 0.0 { doc_len as f64 / self.avg_len } else { 1.0 };
        params.k1 * (1.0 - params.b + params.b * ratio)
    }
}

fn saturate(tf: f64, norm: f64, k1: f64) -> f64 {
    if tf <= 0.0 {
        0.0
    } else {
        tf * (k1 + 1.0) / (tf + norm)
    }
}

/// BM25 of the annotations against the query. Repeated query tokens
/// contribute once per occurrence.
pub fn bm25(query: &[String], annotations: &[String], stats: &TextStats, params: &Bm25Params) -> f64 {
    let norm = stats.length_norm(annotations.len(), params);
    query
        .iter()
        .map(|t| {
            let tf = annotations.iter().filter(|a| *a == t).count() as f64;
            stats.idf(t) * saturate(tf, norm, params.k1)
        })
        .sum()
}

/// BM25 over pseudo-terms formed by adjacent query token pairs. A pair's
/// frequency counts annotation positions (i, j) holding the two tokens with
/// 1 <= |i - j| <= window; its idf is the larger of the two token idfs.
pub fn proximity_bm25(query: &[String], annotations: &[String], stats: &TextStats, params: &Bm25Params) -> f64 {
    if query.len() < 2 || params.window == 0 {
        return 0.0;
    }
    let norm = stats.length_norm(annotations.len(), params);
    query
        .windows(2)
        .map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            let mut tf = 0usize;
            for (i, x) in annotations.iter().enumerate() {
                let hi = (i + params.window).min(annotations.len() - 1);
                for (j, y) in annotations.iter().enumerate().take(hi + 1).skip(i + 1) {
                    debug_assert!(j > i);
                    if (x == a && y == b) || (x == b && y == a) {
                        tf += 1;
                    }
                }
            }
            stats.idf(a).max(stats.idf(b)) * saturate(tf as f64, norm, params.k1)
        })
        .sum()
}
