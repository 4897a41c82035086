//! Exact nearest-neighbor retrieval and the hubness diagnostics built on it.
//!
//! `N_k(x)` counts how many other items list `x` among their `k` nearest
//! neighbors. Hubness is the skewness of the `N_k` distribution; the hubness
//! index maps it to `[0, 1]` as `exp(-|skew|)` (1 = no hubness) and averages
//! over several `k`.
//!
//! Neighbor ties are broken by the lower index (insertion order). Distances
//! within [`TIE_TOLERANCE`] (relative) of each other count as ties, so that
//! rounding noise does not override the rule on symmetric layouts.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{euclidean, l2_norm, pearson};
use crate::ratings::DistanceMatrix;

pub const DEFAULT_K_SET: [usize; 5] = [3, 5, 7, 11, 17];

/// Tolerance on `|v| = 1` accepted when building a checked index.
pub const INDEX_NORM_TOLERANCE: f64 = 1e-6;

/// Relative gap below which two neighbor distances are considered tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingIndex {
    /// Builds an index of unit-norm vectors with unique ids.
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let idx = Self::new_unnormalized(ids, vectors)?;
        for (id, v) in idx.ids.iter().zip(&idx.vectors) {
            let n = l2_norm(v);
            if (n - 1.0).abs() > INDEX_NORM_TOLERANCE {
                log::debug!("vector {id} not unit norm");
                return Err(Error::Normalization { norm: n });
            }
        }
        Ok(idx)
    }

    /// Skips the unit-norm check (raw vectors, e.g. 1-D test layouts).
    pub fn new_unnormalized(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::shape(
                format!("{} vectors", ids.len()),
                vectors.len(),
            ));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Format(format!("duplicate id `{id}`")));
            }
        }
        if let Some(first) = vectors.first() {
            let d = first.len();
            if vectors.iter().any(|v| v.len() != d) {
                return Err(Error::Format("vectors differ in dimension".into()));
            }
        }
        Ok(EmbeddingIndex { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn distance_matrix(&self) -> DistanceMatrix {
        DistanceMatrix::from_points(&self.vectors)
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.len() {
            return Err(Error::Domain(format!(
                "k = {k} must satisfy 1 <= k < N = {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// The `k` closest items to `query`, ascending by distance.
    pub fn knn_query(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        self.check_k(k)?;
        if query.len() != self.vectors[0].len() {
            return Err(Error::shape(self.vectors[0].len(), query.len()));
        }
        let dists: Vec<f64> = self.vectors.iter().map(|v| euclidean(v, query)).collect();
        Ok(k_smallest(&dists, k, None)
            .into_iter()
            .map(|i| (self.ids[i].clone(), dists[i]))
            .collect())
    }

    /// Neighbors of an indexed item, excluding the item itself.
    pub fn knn_of(&self, pos: usize, k: usize) -> Result<Vec<(String, f64)>> {
        self.check_k(k)?;
        let q = &self.vectors[pos];
        let dists: Vec<f64> = self.vectors.iter().map(|v| euclidean(v, q)).collect();
        Ok(k_smallest(&dists, k, Some(pos))
            .into_iter()
            .map(|i| (self.ids[i].clone(), dists[i]))
            .collect())
    }

    /// Self-excluded k-NN lists of every item.
    pub fn neighbor_lists(&self, k: usize, exec: Execution) -> Result<Vec<Vec<usize>>> {
        self.check_k(k)?;
        let dm = self.distance_matrix();
        Ok(exec.map_range(self.len(), |i| {
            k_smallest(dm.as_matrix().row(i), k, Some(i))
        }))
    }

    pub fn k_occurrences(&self, k: usize) -> Result<KOccurrenceProfile> {
        self.k_occurrences_with(k, Execution::default())
    }

    pub fn k_occurrences_with(&self, k: usize, exec: Execution) -> Result<KOccurrenceProfile> {
        let lists = self.neighbor_lists(k, exec)?;
        Ok(KOccurrenceProfile::from_lists(k, self.len(), &lists))
    }

    pub fn hubness_index(&self, k_set: &[usize]) -> Result<f64> {
        self.hubness_index_with(k_set, Execution::default())
    }

    pub fn hubness_index_with(&self, k_set: &[usize], exec: Execution) -> Result<f64> {
        Ok(self.hubness_by_k(k_set, exec)?.mean_index)
    }

    pub fn hubness_by_k(&self, k_set: &[usize], exec: Execution) -> Result<HubnessSummary> {
        if k_set.is_empty() {
            return Err(Error::Domain("empty k set".into()));
        }
        let per_k = k_set
            .iter()
            .map(|&k| {
                let profile = self.k_occurrences_with(k, exec)?;
                let skew = hubness_skewness(&profile)?;
                Ok(KHubness {
                    k,
                    skewness: skew,
                    index: (-skew.abs()).exp(),
                    orphans: profile.orphan_count(),
                    max_count: profile.counts.iter().copied().max().unwrap_or(0),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_index = per_k.iter().map(|h| h.index).sum::<f64>() / per_k.len() as f64;
        Ok(HubnessSummary { per_k, mean_index })
    }

    pub fn hub_report(&self, k: usize) -> Result<HubReport> {
        let lists = self.neighbor_lists(k, Execution::default())?;
        let profile = KOccurrenceProfile::from_lists(k, self.len(), &lists);
        let skewness = hubness_skewness(&profile)?;
        let hub = profile.counts.iter().enumerate().fold(0, |best, (i, &c)| {
            if c > profile.counts[best] {
                i
            } else {
                best
            }
        });
        let reverse_queries = lists
            .iter()
            .enumerate()
            .filter(|(_, l)| l.contains(&hub))
            .map(|(q, _)| self.ids[q].clone())
            .collect();
        let orphan_ids = profile
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| self.ids[i].clone())
            .collect();
        Ok(HubReport {
            k,
            hub_id: self.ids[hub].clone(),
            hub_count: profile.counts[hub],
            reverse_queries,
            orphan_ids,
            skewness,
            hubness_index: (-skewness.abs()).exp(),
        })
    }
}

/// Indices of the `k` smallest values, ascending, ties to the lower index.
fn k_smallest(dists: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dists.len()).filter(|&i| Some(i) != exclude).collect();
    idx.sort_by(|a, b| dists[*a].total_cmp(&dists[*b]).then(a.cmp(b)));
    // Regroup runs of near-equal distances by index. Only runs starting
    // before position k can affect the result.
    let mut start = 0;
    while start < k.min(idx.len()) {
        let mut end = start + 1;
        while end < idx.len() && is_tie(dists[idx[end - 1]], dists[idx[end]]) {
            end += 1;
        }
        idx[start..end].sort_unstable();
        start = end;
    }
    idx.truncate(k);
    idx
}

fn is_tie(a: f64, b: f64) -> bool {
    (b - a).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KOccurrenceProfile {
    pub k: usize,
    pub counts: Vec<usize>,
}

impl KOccurrenceProfile {
    fn from_lists(k: usize, n: usize, lists: &[Vec<usize>]) -> Self {
        let mut counts = vec![0; n];
        for l in lists {
            for &j in l {
                counts[j] += 1;
            }
        }
        KOccurrenceProfile { k, counts }
    }

    pub fn orphan_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KHubness {
    pub k: usize,
    pub skewness: f64,
    pub index: f64,
    pub orphans: usize,
    pub max_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubnessSummary {
    pub per_k: Vec<KHubness>,
    pub mean_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubReport {
    pub k: usize,
    pub hub_id: String,
    pub hub_count: usize,
    pub reverse_queries: Vec<String>,
    pub orphan_ids: Vec<String>,
    pub skewness: f64,
    pub hubness_index: f64,
}

/// Population skewness `m3 / m2^1.5` of the counts; 0 when they are constant.
pub fn hubness_skewness(profile: &KOccurrenceProfile) -> Result<f64> {
    skewness(&profile.counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
}

pub fn skewness(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 3 {
        return Err(Error::Domain(format!("skewness needs N >= 3, got {n}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n as f64;
    m3 /= n as f64;
    if m2 <= 0.0 {
        return Ok(0.0);
    }
    Ok(m3 / m2.powf(1.5))
}

/// Pearson correlation between the strict upper triangles of two distance
/// matrices.
pub fn rating_correlation(
    embedding_dm: &DistanceMatrix,
    rating_dm: &DistanceMatrix,
) -> Result<f64> {
    if embedding_dm.size() != rating_dm.size() {
        return Err(Error::shape(rating_dm.size(), embedding_dm.size()));
    }
    if embedding_dm.size() < 3 {
        return Err(Error::Domain("rating correlation needs N >= 3".into()));
    }
    pearson(&embedding_dm.upper_triangle(), &rating_dm.upper_triangle())
        .ok_or_else(|| Error::Degenerate("constant distance triangle".into()))
}
