//! Exhaustive ranking of indexed words against a query vector.
//!
//! In the original descriptor space the distance is the L1 (city-block)
//! Minkowski distance. In a PCA subspace it is L1 over plain projections, or
//! Euclidean over whitened projections, which is the Mahalanobis distance in
//! the original space. Every distance is mapped onto a 0-100 similarity rate
//! relative to the farthest word for the same query.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusIndex;
use crate::features::DESCRIPTOR_LEN;
use crate::subspace::PcaModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("vector lengths differ: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("query lives in {query:?} but the index offers {index:?}")]
    Space { query: Space, index: Option<Space> },
    #[error("index is empty")]
    EmptyIndex,
    #[error("distance {md} outside [0, {max_md}]")]
    Range { md: f64, max_md: f64 },
    #[error("query has non-finite components")]
    NonFinite,
}

/// Coordinate system of a query vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Space {
    /// Raw 93-component descriptors.
    Original,
    /// PCA coordinates with `dim` retained directions.
    Subspace { dim: usize },
}

impl Space {
    pub fn dim(&self) -> usize {
        match self {
            Space::Original => DESCRIPTOR_LEN,
            Space::Subspace { dim } => *dim,
        }
    }
}

/// Distance used by [`rank`] in a given space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L1,
    /// Scanned as squared Euclidean; the square root is taken per row so
    /// rates are computed on the distance itself.
    Euclidean,
}

impl Metric {
    /// L1 everywhere except whitened subspaces.
    pub fn for_space(space: Space, model: Option<&PcaModel>) -> Metric {
        match (space, model) {
            (Space::Subspace { .. }, Some(m)) if m.is_whitened() => Metric::Euclidean,
            _ => Metric::L1,
        }
    }

    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L1 => l1(a, b),
            Metric::Euclidean => squared_l2(a, b).sqrt(),
        }
    }
}

/// A query in a specific space. Components may leave the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryVector {
    values: Vec<f64>,
    space: Space,
}

impl QueryVector {
    pub fn new(values: Vec<f64>, space: Space) -> Result<Self, RankError> {
        if values.len() != space.dim() {
            return Err(RankError::Dimension(values.len(), space.dim()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RankError::NonFinite);
        }
        Ok(Self { values, space })
    }

    pub fn original(values: &[f64]) -> Result<Self, RankError> {
        Self::new(values.to_vec(), Space::Original)
    }

    /// Projects an original-space descriptor through `model`.
    pub fn projected(model: &PcaModel, descriptor: &[f64]) -> Result<Self, RankError> {
        let y = model
            .project(descriptor)
            .map_err(|_| RankError::Dimension(descriptor.len(), model.source_dim()))?;
        Self::new(y, Space::Subspace { dim: model.dim() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub word_id: u64,
    pub distance: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub results: Vec<RankedResult>,
    pub max_distance: f64,
    pub space: Space,
}

impl RankedList {
    pub fn top(&self, n: usize) -> &[RankedResult] {
        &self.results[..n.min(self.results.len())]
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    /// Word ids whose rate is at least `threshold`.
    pub fn at_or_above(&self, threshold: f64) -> impl Iterator<Item = u64> + '_ {
        self.results.iter().take_while(move |r| r.rate >= threshold).map(|r| r.word_id)
    }
}

const LANES: usize = 8;

/// Sums `f(a[k], b[k])` over independent lanes so the loop vectorizes.
#[inline(always)]
fn lane_sum(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += f(x[k], y[k]);
        }
    }
    for (k, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[k] += f(*x, *y);
    }
    acc.iter().sum()
}

#[inline]
fn l1(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| (x - y).abs())
}

#[inline]
fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| (x - y) * (x - y))
}

/// Sum of absolute component differences.
pub fn minkowski_distance(q: &[f64], w: &[f64]) -> Result<f64, RankError> {
    if q.len() != w.len() {
        return Err(RankError::Dimension(q.len(), w.len()));
    }
    Ok(l1(q, w))
}

/// `100 * (1 - md / max_md)`; 100 when every distance is zero.
pub fn similarity_rate(md: f64, max_md: f64) -> Result<f64, RankError> {
    if !(md >= 0.0) || !(max_md >= 0.0) || md > max_md {
        return Err(RankError::Range { md, max_md });
    }
    if max_md == 0.0 {
        return Ok(100.0);
    }
    Ok(100.0 * (1.0 - md / max_md))
}

/// Ranks every entry of `index` against `query`.
///
/// Results are sorted by ascending distance, ties by ascending word id.
/// Subspace queries require the index to carry the matching PCA model.
pub fn rank(query: &QueryVector, index: &CorpusIndex) -> Result<RankedList, RankError> {
    if index.is_empty() {
        return Err(RankError::EmptyIndex);
    }
    let (matrix, metric) = match query.space {
        Space::Original => (index.descriptor_matrix(), Metric::L1),
        Space::Subspace { dim } => match (index.pca(), index.projected_matrix()) {
            (Some(model), Some(m)) if model.dim() == dim => (m, Metric::for_space(query.space, Some(model))),
            (model, _) => {
                return Err(RankError::Space {
                    query: query.space,
                    index: model.map(|m| Space::Subspace { dim: m.dim() }),
                })
            }
        },
    };
    Ok(rank_matrix(query.values(), matrix, index, metric, query.space))
}

/// Core scan over a contiguous row-major matrix aligned with `index.entries()`.
fn rank_matrix(q: &[f64], matrix: &[f64], index: &CorpusIndex, metric: Metric, space: Space) -> RankedList {
    let d = q.len();
    let ids = index.word_ids();
    debug_assert!(ids.len() <= u32::MAX as usize);
    let mut distances = Vec::with_capacity(ids.len());
    let mut max_distance = 0.0f64;
    for row in matrix.chunks_exact(d) {
        let dist = metric.distance(q, row);
        max_distance = max_distance.max(dist);
        distances.push(dist);
    }

    // Sort single words keyed by (distance rounded to f32, row). Rounding is
    // monotone, so only runs sharing an f32 key can be out of order; those
    // are re-sorted on the exact distance. Rows follow ascending word id,
    // which makes the row the tie-breaker.
    let mut keys: Vec<u64> = distances
        .iter()
        .enumerate()
        .map(|(row, &dist)| (u64::from((dist as f32).to_bits()) << 32) | row as u64)
        .collect();
    keys.sort_unstable();
    let mut start = 0;
    while start < keys.len() {
        let hi = keys[start] >> 32;
        let end = start + keys[start..].iter().take_while(|&&k| k >> 32 == hi).count();
        if end - start > 1 {
            keys[start..end].sort_unstable_by(|a, b| {
                let (ra, rb) = ((a & 0xffff_ffff) as usize, (b & 0xffff_ffff) as usize);
                distances[ra].total_cmp(&distances[rb]).then(ra.cmp(&rb))
            });
        }
        start = end;
    }

    let results = keys
        .into_iter()
        .map(|k| {
            let row = (k & 0xffff_ffff) as usize;
            let distance = distances[row];
            RankedResult {
                word_id: ids[row],
                distance,
                rate: if max_distance == 0.0 {
                    100.0
                } else {
                    100.0 * (1.0 - distance / max_distance)
                },
            }
        })
        .collect();
    RankedList {
        results,
        max_distance,
        space,
    }
}
