//! Answer matching, Pass@1 accuracy and nearest-neighbor retrieval metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("non-finite value: pred={pred}, truth={truth}")]
    NonFinite { pred: f64, truth: f64 },
    #[error("no results to aggregate")]
    EmptyInput,
    #[error("length mismatch: {0} embeddings vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("embedding {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("k must be positive")]
    InvalidK,
}

/// Envelope for answer matching: `|pred - truth| <= max(absolute, relative * |truth|)`.
/// The envelope scales with the reference value only, so matching is not
/// symmetric in its arguments when `relative > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchTolerance {
    #[serde(default = "default_atol")]
    pub absolute: f64,
    #[serde(default = "default_rtol")]
    pub relative: f64,
}

fn default_atol() -> f64 {
    1e-6
}
fn default_rtol() -> f64 {
    1e-4
}

impl Default for MatchTolerance {
    fn default() -> Self {
        MatchTolerance { absolute: default_atol(), relative: default_rtol() }
    }
}

impl MatchTolerance {
    pub const EXACT: MatchTolerance = MatchTolerance { absolute: 0.0, relative: 0.0 };
}

pub fn answers_match(pred: f64, truth: f64, tol: MatchTolerance) -> Result<bool, EvaluationError> {
    if !pred.is_finite() || !truth.is_finite() {
        return Err(EvaluationError::NonFinite { pred, truth });
    }
    Ok((pred - truth).abs() <= tol.absolute.max(tol.relative * truth.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassAtOne {
    pub micro: f64,
    pub macro_avg: f64,
}

/// Micro (pooled) and macro (mean of per-benchmark) Pass@1. Empty
/// benchmarks are ignored.
pub fn pass_at_1<B: AsRef<[bool]>>(results: &[B]) -> Result<PassAtOne, EvaluationError> {
    let groups: Vec<&[bool]> = results.iter().map(AsRef::as_ref).filter(|g| !g.is_empty()).collect();
    if groups.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let correct = |g: &[bool]| g.iter().filter(|&&b| b).count();
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let hits: usize = groups.iter().map(|g| correct(g)).sum();
    let macro_avg = groups.iter().map(|g| correct(g) as f64 / g.len() as f64).sum::<f64>() / groups.len() as f64;
    Ok(PassAtOne { micro: hits as f64 / total as f64, macro_avg })
}

/// Per-benchmark result row plus both averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassTable {
    pub benchmarks: BTreeMap<String, BenchmarkScore>,
    pub micro: f64,
    pub macro_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

pub fn pass_table<'a, I>(records: I) -> Result<PassTable, EvaluationError>
where
    I: IntoIterator<Item = (&'a str, bool)>,
{
    let mut grouped: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for (bench, ok) in records {
        grouped.entry(bench.to_string()).or_default().push(ok);
    }
    let groups: Vec<&Vec<bool>> = grouped.values().collect();
    let p = pass_at_1(&groups)?;
    let benchmarks = grouped
        .iter()
        .map(|(k, v)| {
            let correct = v.iter().filter(|&&b| b).count();
            (k.clone(), BenchmarkScore { correct, total: v.len(), accuracy: correct as f64 / v.len() as f64 })
        })
        .collect();
    Ok(PassTable { benchmarks, micro: p.micro, macro_avg: p.macro_avg })
}

impl PassTable {
    pub fn render(&self) -> String {
        let mut out = format!("{:<24} {:>8} {:>8} {:>9}\n", "benchmark", "correct", "total", "pass@1");
        for (name, s) in &self.benchmarks {
            out.push_str(&format!("{:<24} {:>8} {:>8} {:>8.2}%\n", name, s.correct, s.total, s.accuracy * 100.0));
        }
        out.push_str(&format!("{:<24} {:>26.2}%\n", "micro-avg", self.micro * 100.0));
        out.push_str(&format!("{:<24} {:>26.2}%\n", "macro-avg", self.macro_avg * 100.0));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub hit_at: BTreeMap<usize, f64>,
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub map_at: BTreeMap<usize, f64>,
    pub query_count: usize,
    /// Queries whose label group has a single member.
    pub skipped_queries: usize,
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// KNN retrieval quality of `labels` under cosine similarity. Each query
/// ranks every other point (self excluded) by descending similarity, ties by
/// ascending index. Average precision at k divides by `min(k, group_size - 1)`.
pub fn retrieval_metrics<L: Eq + std::hash::Hash>(
    embeddings: &[Vec<f64>],
    labels: &[L],
    ks: &[usize],
) -> Result<RetrievalReport, EvaluationError> {
    if embeddings.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch(embeddings.len(), labels.len()));
    }
    if ks.contains(&0) {
        return Err(EvaluationError::InvalidK);
    }
    if let Some(first) = embeddings.first() {
        if let Some((index, e)) = embeddings.iter().enumerate().find(|(_, e)| e.len() != first.len()) {
            return Err(EvaluationError::DimensionMismatch { index, expected: first.len(), found: e.len() });
        }
    }
    let mut group_size: HashMap<&L, usize> = HashMap::new();
    for l in labels {
        *group_size.entry(l).or_default() += 1;
    }
    let n = embeddings.len();
    let mut hit = vec![0.0; ks.len()];
    let mut prec = vec![0.0; ks.len()];
    let mut rec = vec![0.0; ks.len()];
    let mut ap = vec![0.0; ks.len()];
    let mut mrr = 0.0;
    let mut queries = 0usize;
    let mut skipped = 0usize;

    for q in 0..n {
        let relevant_total = group_size[&labels[q]] - 1;
        if relevant_total == 0 {
            skipped += 1;
            continue;
        }
        queries += 1;
        let mut ranked: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| (j, cosine_similarity(&embeddings[q], &embeddings[j])))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let relevant: Vec<bool> = ranked.iter().map(|(j, _)| labels[*j] == labels[q]).collect();

        if let Some(first) = relevant.iter().position(|&r| r) {
            mrr += 1.0 / (first + 1) as f64;
        }
        for (slot, &k) in ks.iter().enumerate() {
            let top = &relevant[..k.min(relevant.len())];
            let found = top.iter().filter(|&&r| r).count();
            if found > 0 {
                hit[slot] += 1.0;
            }
            prec[slot] += found as f64 / k as f64;
            rec[slot] += found as f64 / relevant_total as f64;
            let mut seen = 0usize;
            let mut sum = 0.0;
            for (rank, &r) in top.iter().enumerate() {
                if r {
                    seen += 1;
                    sum += seen as f64 / (rank + 1) as f64;
                }
            }
            ap[slot] += sum / k.min(relevant_total) as f64;
        }
    }

    let mean = |v: f64| if queries == 0 { 0.0 } else { v / queries as f64 };
    let by_k = |vals: &[f64]| ks.iter().zip(vals).map(|(&k, &v)| (k, mean(v))).collect::<BTreeMap<_, _>>();
    Ok(RetrievalReport {
        hit_at: by_k(&hit),
        precision_at: by_k(&prec),
        recall_at: by_k(&rec),
        mrr: mean(mrr),
        map_at: by_k(&ap),
        query_count: queries,
        skipped_queries: skipped,
    })
}
