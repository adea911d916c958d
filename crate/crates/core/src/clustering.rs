//! DBSCAN under cosine distance, plus partition-agreement diagnostics.
//!
//! Clustering uses exact pairwise distances; neighborhoods include the
//! boundary (`distance <= epsilon`) and the point itself. Border points that
//! touch several clusters join the cluster of their nearest core neighbor
//! (ties go to the lower index). Cluster ids are canonical: cluster 0
//! contains the lowest-indexed clustered point, cluster 1 the lowest-indexed
//! point not in cluster 0, and so on.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archetype::cosine_distance_raw;
use crate::providers::EmbeddingVector;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MIN_SAMPLES: usize = 1;
pub const NOISE: i64 = -1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusteringError {
    #[error("no points to cluster")]
    EmptyInput,
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("min_samples must be at least 1")]
    InvalidMinSamples,
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two labelled items, got {0}")]
    TooFewItems(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    pub cluster_count: usize,
}

impl ClusterAssignment {
    /// Member indices of each cluster, in cluster-id order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// Renumbers non-noise labels by first appearance in index order.
pub fn canonical_labels(labels: &[i64]) -> Vec<i64> {
    let mut map: HashMap<i64, i64> = HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l == NOISE {
                NOISE
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

fn distance_matrix(points: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = cosine_distance_raw(points[i], points[j]).unwrap_or(2.0);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Raw-slice entry point; vectors need not be normalized but must be
/// nonzero and share one dimension.
pub fn dbscan_raw(points: &[&[f64]], epsilon: f64, min_samples: usize) -> Result<ClusterAssignment, ClusteringError> {
    if points.is_empty() {
        return Err(ClusteringError::EmptyInput);
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(ClusteringError::InvalidEpsilon(epsilon));
    }
    if min_samples == 0 {
        return Err(ClusteringError::InvalidMinSamples);
    }
    let dim = points[0].len();
    if let Some((index, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(ClusteringError::DimensionMismatch { index, expected: dim, found: p.len() });
    }

    let n = points.len();
    let dist = distance_matrix(points);
    let neighbors: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| dist[i][j] <= epsilon).collect()).collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    // Connected components of the core-core ε-graph.
    let mut labels = vec![NOISE; n];
    let mut next = 0i64;
    let mut stack = Vec::new();
    for seed in 0..n {
        if !is_core[seed] || labels[seed] != NOISE {
            continue;
        }
        labels[seed] = next;
        stack.push(seed);
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if is_core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }

    // Border points: nearest core neighbor, lower index on ties.
    for i in (0..n).filter(|&i| !is_core[i]) {
        let nearest = neighbors[i]
            .iter()
            .copied()
            .filter(|&j| is_core[j])
            .min_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)));
        if let Some(j) = nearest {
            labels[i] = labels[j];
        }
    }

    let labels = canonical_labels(&labels);
    let cluster_count = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    Ok(ClusterAssignment { labels, cluster_count })
}

pub fn dbscan(
    points: &[EmbeddingVector],
    epsilon: f64,
    min_samples: usize,
) -> Result<ClusterAssignment, ClusteringError> {
    let slices: Vec<&[f64]> = points.iter().map(EmbeddingVector::values).collect();
    dbscan_raw(&slices, epsilon, min_samples)
}

fn check_pair(pred: &[i64], truth: &[i64]) -> Result<(), ClusteringError> {
    if pred.len() != truth.len() {
        return Err(ClusteringError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return Err(ClusteringError::TooFewItems(pred.len()));
    }
    Ok(())
}

fn comb2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

struct Contingency {
    joint: HashMap<(i64, i64), u64>,
    pred: HashMap<i64, u64>,
    truth: HashMap<i64, u64>,
}

fn contingency(pred: &[i64], truth: &[i64]) -> Contingency {
    let mut c = Contingency { joint: HashMap::new(), pred: HashMap::new(), truth: HashMap::new() };
    for (&p, &t) in pred.iter().zip(truth) {
        *c.joint.entry((p, t)).or_default() += 1;
        *c.pred.entry(p).or_default() += 1;
        *c.truth.entry(t).or_default() += 1;
    }
    c
}

/// Adjusted Rand index. Labels are compared by value only; callers that
/// want noise points treated as singletons must relabel them first.
pub fn adjusted_rand_index(pred: &[i64], truth: &[i64]) -> Result<f64, ClusteringError> {
    check_pair(pred, truth)?;
    let c = contingency(pred, truth);
    let index: f64 = c.joint.values().map(|&v| comb2(v)).sum();
    let sum_pred: f64 = c.pred.values().map(|&v| comb2(v)).sum();
    let sum_truth: f64 = c.truth.values().map(|&v| comb2(v)).sum();
    let total = comb2(pred.len() as u64);
    let expected = sum_pred * sum_truth / total;
    let max = (sum_pred + sum_truth) / 2.0;
    if max == expected {
        // Both partitions are trivial in the same way (all singletons or
        // one block); agreement is perfect by convention.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// F1 over same-cluster pairs.
pub fn pairwise_f1(pred: &[i64], truth: &[i64]) -> Result<f64, ClusteringError> {
    check_pair(pred, truth)?;
    let c = contingency(pred, truth);
    let both: f64 = c.joint.values().map(|&v| comb2(v)).sum();
    let pred_pairs: f64 = c.pred.values().map(|&v| comb2(v)).sum();
    let truth_pairs: f64 = c.truth.values().map(|&v| comb2(v)).sum();
    if pred_pairs == 0.0 && truth_pairs == 0.0 {
        return Ok(1.0);
    }
    if pred_pairs == 0.0 || truth_pairs == 0.0 || both == 0.0 {
        return Ok(0.0);
    }
    let precision = both / pred_pairs;
    let recall = both / truth_pairs;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Replaces every noise label with a fresh singleton id.
pub fn noise_as_singletons(labels: &[i64]) -> Vec<i64> {
    let mut next = labels.iter().copied().max().unwrap_or(0).max(0) + 1;
    labels
        .iter()
        .map(|&l| {
            if l == NOISE {
                next += 1;
                next - 1
            } else {
                l
            }
        })
        .collect()
}
