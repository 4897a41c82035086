//! Rating vectors, rating sets and the set-to-set semantic distance.
//!
//! Each patch carries a multiset of annotation rating vectors. The distance
//! between two patches averages, in both directions, the L2 distance from
//! every rating to its nearest rating in the other set:
//!
//! `D(A,B) = 1/(2n) Σ_i min_j |A_i - B_j| + 1/(2m) Σ_j min_i |B_j - A_i|`
//!
//! This is not a metric (no triangle inequality); it is symmetric, non
//! negative and zero on identical sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{euclidean, Matrix};

pub const DEFAULT_CHARACTERISTICS: [&str; 9] = [
    "Subtlety",
    "Internal Structure",
    "Calcification",
    "Sphericity",
    "Margin",
    "Lobulation",
    "Spiculation",
    "Texture",
    "Malignancy",
];

/// LIDC calcification goes up to 6, so the default range admits it for every
/// characteristic.
pub const DEFAULT_RANGE: (f64, f64) = (1.0, 6.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicSchema {
    names: Vec<String>,
    ranges: Vec<(f64, f64)>,
}

impl Default for CharacteristicSchema {
    fn default() -> Self {
        CharacteristicSchema {
            names: DEFAULT_CHARACTERISTICS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ranges: vec![DEFAULT_RANGE; DEFAULT_CHARACTERISTICS.len()],
        }
    }
}

impl CharacteristicSchema {
    pub fn new(names: Vec<String>, ranges: Vec<(f64, f64)>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema(
                "schema needs at least one characteristic".into(),
            ));
        }
        if names.len() != ranges.len() {
            return Err(Error::Schema(format!(
                "{} names but {} ranges",
                names.len(),
                ranges.len()
            )));
        }
        for (name, &(lo, hi)) in names.iter().zip(&ranges) {
            if !(lo < hi) {
                return Err(Error::Schema(format!("range for {name} has min >= max")));
            }
        }
        Ok(CharacteristicSchema { names, ranges })
    }

    /// Schema of `dim` anonymous characteristics sharing one range.
    pub fn uniform(dim: usize, range: (f64, f64)) -> Result<Self> {
        Self::new(
            (0..dim).map(|i| format!("c{i}")).collect(),
            vec![range; dim],
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn range(&self, idx: usize) -> (f64, f64) {
        self.ranges[idx]
    }

    /// Index of the malignancy characteristic; the last one when no
    /// characteristic is named "Malignancy".
    pub fn malignancy_index(&self) -> usize {
        self.names
            .iter()
            .position(|n| n.eq_ignore_ascii_case("malignancy"))
            .unwrap_or(self.names.len() - 1)
    }

    pub fn check(&self, v: &RatingVector) -> Result<()> {
        if v.dim() != self.len() {
            return Err(Error::Schema(format!(
                "rating has {} values, schema has {}",
                v.dim(),
                self.len()
            )));
        }
        for ((x, &(lo, hi)), name) in v.values().iter().zip(&self.ranges).zip(&self.names) {
            if !x.is_finite() || *x < lo || *x > hi {
                return Err(Error::Schema(format!("{name} = {x} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, v: &RatingVector) -> RatingVector {
        RatingVector(
            v.values()
                .iter()
                .zip(&self.ranges)
                .map(|(x, &(lo, hi))| x.clamp(lo, hi))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatingVector(Vec<f64>);

impl RatingVector {
    pub fn new(values: Vec<f64>) -> Self {
        RatingVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for RatingVector {
    fn from(v: Vec<f64>) -> Self {
        RatingVector(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSet {
    ratings: Vec<RatingVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

impl RatingSet {
    pub fn new(ratings: Vec<RatingVector>) -> Result<Self> {
        Self::build(ratings, None)
    }

    pub fn with_weights(ratings: Vec<RatingVector>, weights: Vec<f64>) -> Result<Self> {
        Self::build(ratings, Some(weights))
    }

    fn build(ratings: Vec<RatingVector>, weights: Option<Vec<f64>>) -> Result<Self> {
        let Some(first) = ratings.first() else {
            return Err(Error::Domain("rating set is empty".into()));
        };
        let dim = first.dim();
        if ratings.iter().any(|r| r.dim() != dim) {
            return Err(Error::Schema("ratings in a set differ in dimension".into()));
        }
        if let Some(w) = &weights {
            if w.len() != ratings.len() {
                return Err(Error::Domain(format!(
                    "{} weights for {} ratings",
                    w.len(),
                    ratings.len()
                )));
            }
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Domain("rating weights must be nonnegative".into()));
            }
        }
        Ok(RatingSet { ratings, weights })
    }

    pub fn singleton(v: RatingVector) -> Self {
        RatingSet {
            ratings: vec![v],
            weights: None,
        }
    }

    pub fn from_values(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(RatingVector).collect())
    }

    pub fn ratings(&self) -> &[RatingVector] {
        &self.ratings
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.ratings[0].dim()
    }

    pub fn check(&self, schema: &CharacteristicSchema) -> Result<()> {
        self.ratings.iter().try_for_each(|r| schema.check(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MalignancyClass {
    Benign,
    Unknown,
    Malignant,
}

impl MalignancyClass {
    pub const ALL: [MalignancyClass; 3] = [
        MalignancyClass::Benign,
        MalignancyClass::Unknown,
        MalignancyClass::Malignant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MalignancyClass::Benign => "benign",
            MalignancyClass::Unknown => "unknown",
            MalignancyClass::Malignant => "malignant",
        }
    }
}

impl std::fmt::Display for MalignancyClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MalignancyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(MalignancyClass::Benign),
            "unknown" => Ok(MalignancyClass::Unknown),
            "malignant" => Ok(MalignancyClass::Malignant),
            other => Err(Error::Format(format!("unknown malignancy class `{other}`"))),
        }
    }
}

/// Bins a (possibly fractional) mean malignancy score: at most 2.5 is benign,
/// at least 3.5 is malignant, anything between is unknown.
pub fn malignancy_class(mean_malignancy: f64, range: (f64, f64)) -> Result<MalignancyClass> {
    let (lo, hi) = range;
    if !mean_malignancy.is_finite() || mean_malignancy < lo || mean_malignancy > hi {
        return Err(Error::Domain(format!(
            "malignancy {mean_malignancy} outside [{lo}, {hi}]"
        )));
    }
    Ok(if mean_malignancy <= 2.5 {
        MalignancyClass::Benign
    } else if mean_malignancy >= 3.5 {
        MalignancyClass::Malignant
    } else {
        MalignancyClass::Unknown
    })
}

/// Symmetric, zero-diagonal, nonnegative square matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Matrix);

impl DistanceMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape("square matrix", format!("{:?}", m.shape())));
        }
        let n = m.rows();
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::Domain(format!("nonzero diagonal at {i}")));
            }
            for j in i + 1..n {
                let v = m[(i, j)];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Domain(format!("invalid distance {v} at ({i},{j})")));
                }
                if v != m[(j, i)] {
                    return Err(Error::Domain(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(DistanceMatrix(m))
    }

    /// Euclidean distances between the rows of `points`.
    pub fn from_points(points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let d = euclidean(&points[i], &points[j]);
                m[(i, j)] = d;
                m[(j, i)] = d;
            }
        }
        DistanceMatrix(m)
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Strict upper triangle, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.size();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            out.extend_from_slice(&self.0.row(i)[i + 1..]);
        }
        out
    }

    /// Sub-matrix over the given item indices, in that order.
    pub fn select(&self, idx: &[usize]) -> DistanceMatrix {
        DistanceMatrix(Matrix::from_fn(idx.len(), idx.len(), |a, b| {
            self.0[(idx[a], idx[b])]
        }))
    }
}

pub fn rating_l2(a: &RatingVector, b: &RatingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Schema(format!(
            "rating dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(euclidean(a.values(), b.values()))
}

fn mean_nearest(from: &RatingSet, to: &RatingSet) -> f64 {
    let total: f64 = from
        .ratings
        .iter()
        .map(|a| {
            to.ratings
                .iter()
                .map(|b| euclidean(a.values(), b.values()))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

pub fn set_distance(a: &RatingSet, b: &RatingSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("rating set is empty".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Schema(format!(
            "rating dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(0.5 * mean_nearest(a, b) + 0.5 * mean_nearest(b, a))
}

pub fn set_distance_matrix(sets: &[RatingSet]) -> Result<DistanceMatrix> {
    set_distance_matrix_with(sets, Execution::default())
}

/// Row-parallel variant; the result is bit-identical for every mode since each
/// entry is computed by the same scalar routine.
pub fn set_distance_matrix_with(sets: &[RatingSet], exec: Execution) -> Result<DistanceMatrix> {
    let n = sets.len();
    if n < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 rating sets, got {n}"
        )));
    }
    let dim = sets[0].dim();
    if let Some(i) = sets.iter().position(|s| s.dim() != dim) {
        return Err(Error::Schema(format!(
            "set {i} has dimension {}",
            sets[i].dim()
        )));
    }
    let rows = exec.map_range(n, |i| {
        (i + 1..n)
            .map(|j| {
                0.5 * mean_nearest(&sets[i], &sets[j]) + 0.5 * mean_nearest(&sets[j], &sets[i])
            })
            .collect::<Vec<_>>()
    });
    let mut m = Matrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, d) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    Ok(DistanceMatrix(m))
}

/// Unweighted per-characteristic mean of the set; weights are ignored.
pub fn mean_rating(set: &RatingSet) -> Result<RatingVector> {
    if set.is_empty() {
        return Err(Error::Domain("rating set is empty".into()));
    }
    let mut acc = vec![0.0; set.dim()];
    for r in &set.ratings {
        for (a, x) in acc.iter_mut().zip(r.values()) {
            *a += x;
        }
    }
    let n = set.len() as f64;
    Ok(RatingVector(acc.into_iter().map(|a| a / n).collect()))
}
