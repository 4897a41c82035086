//! Raw annotation records and patch preprocessing.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::RatingVector;

/// Hounsfield window mapped to `[0, 1]`.
pub const HU_WINDOW: (f64, f64) = (-300.0, 700.0);

/// One rater's outline of a nodule: the slices it covers and their areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub nodule_id: String,
    pub annotation_id: String,
    /// `(slice_index, area_mm2)` pairs.
    pub slices: Vec<(i64, f64)>,
    pub rating: RatingVector,
}

impl AnnotationRecord {
    pub fn check(&self) -> Result<()> {
        if self.slices.is_empty() {
            return Err(Error::Domain(format!(
                "annotation {} covers no slice",
                self.annotation_id
            )));
        }
        let mut seen = HashSet::new();
        for &(s, area) in &self.slices {
            if !(area > 0.0) || !area.is_finite() {
                return Err(Error::Domain(format!(
                    "annotation {} has non-positive area {area} on slice {s}",
                    self.annotation_id
                )));
            }
            if !seen.insert(s) {
                return Err(Error::Domain(format!(
                    "annotation {} lists slice {s} twice",
                    self.annotation_id
                )));
            }
        }
        Ok(())
    }
}

/// Picks the slice with the largest summed relative area. Each annotation
/// weights its slices by area over its own maximal area; ties go to the lower
/// slice index.
pub fn select_representative_slice(annotations: &[AnnotationRecord]) -> Result<i64> {
    if annotations.is_empty() {
        return Err(Error::Domain("no annotations for nodule".into()));
    }
    let mut weights: BTreeMap<i64, f64> = BTreeMap::new();
    for ann in annotations {
        ann.check()?;
        let max = ann.slices.iter().map(|s| s.1).fold(f64::MIN, f64::max);
        for &(s, area) in &ann.slices {
            *weights.entry(s).or_default() += area / max;
        }
    }
    // BTreeMap iterates ascending, and only a strictly larger weight moves
    // the choice, so ties keep the lower slice.
    let mut best = None::<(i64, f64)>;
    for (s, w) in weights {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((s, w));
        }
    }
    Ok(best.expect("non-empty").0)
}

/// Clamps raw HU values to the window and maps them linearly to `[0, 1]`.
pub fn normalize_patch(raw: &[f64]) -> Vec<f64> {
    let (lo, hi) = HU_WINDOW;
    raw.iter()
        .map(|&v| (v.clamp(lo, hi) - lo) / (hi - lo))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(id: &str, slices: &[(i64, f64)]) -> AnnotationRecord {
        AnnotationRecord {
            nodule_id: "n".into(),
            annotation_id: id.into(),
            slices: slices.to_vec(),
            rating: RatingVector::new(vec![3.0; 9]),
        }
    }

    #[test]
    fn slice_selection() {
        assert_eq!(
            select_representative_slice(&[ann("a", &[(0, 10.0), (1, 20.0), (2, 10.0)])]).unwrap(),
            1
        );
        let two = [
            ann("a", &[(0, 10.0), (1, 20.0), (2, 10.0)]),
            ann("b", &[(1, 30.0), (2, 30.0)]),
        ];
        assert_eq!(select_representative_slice(&two).unwrap(), 1);
        let mirror = [
            ann("a", &[(4, 10.0), (5, 5.0)]),
            ann("b", &[(4, 5.0), (5, 10.0)]),
        ];
        assert_eq!(select_representative_slice(&mirror).unwrap(), 4);
        assert!(select_representative_slice(&[]).is_err());
        assert!(select_representative_slice(&[ann("a", &[(0, 0.0)])]).is_err());
        assert!(select_representative_slice(&[ann("a", &[(0, 1.0), (0, 2.0)])]).is_err());
    }

    #[test]
    fn hu_window() {
        assert_eq!(
            normalize_patch(&[-300.0, 700.0, 200.0, -1000.0, 3000.0]),
            vec![0.0, 1.0, 0.5, 0.0, 1.0]
        );
    }
}
