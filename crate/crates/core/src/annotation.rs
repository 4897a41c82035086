//! Rating-regression quality against multi-rater ground truth.
//!
//! Inter-observer RMSE is the square root of the mean within-ROI population
//! variance over ROIs with at least [`MIN_RATERS`] ratings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pearson;
use crate::ratings::{mean_rating, CharacteristicSchema, RatingSet, RatingVector};

/// Minimum number of ratings for an ROI to enter rater-distribution statistics.
pub const MIN_RATERS: usize = 4;

pub const DEFAULT_RIDGE: f64 = 1e-3;

pub const INTER_OBSERVER_AGGREGATION: &str = "sqrt of mean within-ROI population variance";

fn check_pairs(pred: &[RatingVector], truth: &[RatingSet]) -> Result<usize> {
    if pred.len() != truth.len() {
        return Err(Error::shape(truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Domain("no items to evaluate".into()));
    }
    let dim = pred[0].dim();
    for (p, t) in pred.iter().zip(truth) {
        if p.dim() != dim {
            return Err(Error::shape(dim, p.dim()));
        }
        if t.dim() != dim {
            return Err(Error::shape(dim, t.dim()));
        }
    }
    Ok(dim)
}

fn targets(truth: &[RatingSet]) -> Result<Vec<RatingVector>> {
    truth.iter().map(mean_rating).collect()
}

/// Per-characteristic RMSE between predictions and mean rater ratings.
pub fn per_param_rmse(pred: &[RatingVector], truth: &[RatingSet]) -> Result<Vec<f64>> {
    let dim = check_pairs(pred, truth)?;
    let means = targets(truth)?;
    let n = pred.len() as f64;
    Ok((0..dim)
        .map(|c| {
            let sse: f64 = pred
                .iter()
                .zip(&means)
                .map(|(p, t)| (p.values()[c] - t.values()[c]).powi(2))
                .sum();
            (sse / n).sqrt()
        })
        .collect())
}

/// Per-characteristic Pearson correlation; `None` where either side is constant.
pub fn per_param_correlation(
    pred: &[RatingVector],
    truth: &[RatingSet],
) -> Result<Vec<Option<f64>>> {
    let dim = check_pairs(pred, truth)?;
    let means = targets(truth)?;
    Ok((0..dim)
        .map(|c| {
            let x: Vec<f64> = pred.iter().map(|p| p.values()[c]).collect();
            let y: Vec<f64> = means.iter().map(|t| t.values()[c]).collect();
            pearson(&x, &y)
        })
        .collect())
}

/// Mahalanobis distance from `pred` to the distribution of rater votes, using
/// the population covariance plus `ridge * I`. `None` when fewer than
/// [`MIN_RATERS`] ratings are available (the item is skipped).
pub fn mahalanobis_to_raters(
    pred: &RatingVector,
    raters: &RatingSet,
    ridge: f64,
) -> Result<Option<f64>> {
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
    }
    if raters.len() < MIN_RATERS {
        return Ok(None);
    }
    let d = raters.dim();
    if pred.dim() != d {
        return Err(Error::shape(d, pred.dim()));
    }
    let n = raters.len() as f64;
    let mut mu = DVector::<f64>::zeros(d);
    for r in raters.ratings() {
        mu += DVector::from_column_slice(r.values());
    }
    mu /= n;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in raters.ratings() {
        let x = DVector::from_column_slice(r.values()) - &mu;
        cov += &x * x.transpose();
    }
    cov /= n;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let diff = DVector::from_column_slice(pred.values()) - &mu;
    let chol = cov.cholesky().ok_or_else(|| {
        Error::Degenerate(format!(
            "rater covariance is singular (ridge {ridge}); use a positive ridge"
        ))
    })?;
    let q = diff.dot(&chol.solve(&diff));
    Ok(Some(q.max(0.0).sqrt()))
}

/// Normalized Shannon entropy of the rounded score histogram of one
/// characteristic over all individual ratings. Levels are the integers of the
/// characteristic's range.
pub fn param_entropy(
    sets: &[RatingSet],
    schema: &CharacteristicSchema,
    characteristic: usize,
) -> Result<f64> {
    if characteristic >= schema.len() {
        return Err(Error::Domain(format!(
            "characteristic {characteristic} out of range for {} characteristics",
            schema.len()
        )));
    }
    let (lo, hi) = schema.range(characteristic);
    let (lo, hi) = (lo.round() as i64, hi.round() as i64);
    let levels = (hi - lo + 1).max(1) as usize;
    let mut hist = vec![0usize; levels];
    for set in sets {
        for r in set.ratings() {
            let v = r.values()[characteristic].round() as i64;
            hist[(v.clamp(lo, hi) - lo) as usize] += 1;
        }
    }
    histogram_entropy(&hist)
}

/// Entropy of a count histogram normalized by `ln(bins)`.
pub fn histogram_entropy(hist: &[usize]) -> Result<f64> {
    let total: usize = hist.iter().sum();
    if total == 0 {
        return Err(Error::Domain("empty rating histogram".into()));
    }
    if hist.len() < 2 || hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Ok(0.0);
    }
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok((h / (hist.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Per-characteristic expert RMSE estimate from rater disagreement.
pub fn inter_observer_rmse(truth: &[RatingSet]) -> Result<Vec<f64>> {
    let qualifying: Vec<&RatingSet> = truth.iter().filter(|s| s.len() >= MIN_RATERS).collect();
    let Some(first) = qualifying.first() else {
        return Err(Error::Domain(format!(
            "no ROI with at least {MIN_RATERS} ratings"
        )));
    };
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for set in &qualifying {
        let n = set.len() as f64;
        for (c, a) in acc.iter_mut().enumerate() {
            let mean = set.ratings().iter().map(|r| r.values()[c]).sum::<f64>() / n;
            *a += set
                .ratings()
                .iter()
                .map(|r| (r.values()[c] - mean).powi(2))
                .sum::<f64>()
                / n;
        }
    }
    Ok(acc
        .into_iter()
        .map(|v| (v / qualifying.len() as f64).sqrt())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub parameter: String,
    pub rmse: f64,
    pub inter_observer_rmse: Option<f64>,
    pub correlation: Option<f64>,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub rows: Vec<ParamRow>,
    /// Mean over items with enough ratings; `None` when no item qualifies.
    pub mahalanobis_mean: Option<f64>,
    pub mahalanobis_items: usize,
    pub ridge: f64,
    pub n_items: usize,
    pub inter_observer_aggregation: String,
}

impl RegressionReport {
    pub fn build(
        pred: &[RatingVector],
        truth: &[RatingSet],
        schema: &CharacteristicSchema,
        ridge: f64,
    ) -> Result<Self> {
        let dim = check_pairs(pred, truth)?;
        if dim != schema.len() {
            return Err(Error::shape(schema.len(), dim));
        }
        let rmse = per_param_rmse(pred, truth)?;
        let corr = per_param_correlation(pred, truth)?;
        let inter = inter_observer_rmse(truth).ok();
        let mut rows = Vec::with_capacity(dim);
        for c in 0..dim {
            rows.push(ParamRow {
                parameter: schema.names()[c].clone(),
                rmse: rmse[c],
                inter_observer_rmse: inter.as_ref().map(|v| v[c]),
                correlation: corr[c],
                entropy: param_entropy(truth, schema, c)?,
            });
        }
        let mut total = 0.0;
        let mut count = 0;
        for (p, t) in pred.iter().zip(truth) {
            if let Some(m) = mahalanobis_to_raters(p, t, ridge)? {
                total += m;
                count += 1;
            }
        }
        Ok(RegressionReport {
            rows,
            mahalanobis_mean: (count > 0).then(|| total / count as f64),
            mahalanobis_items: count,
            ridge,
            n_items: pred.len(),
            inter_observer_aggregation: INTER_OBSERVER_AGGREGATION.into(),
        })
    }

    /// Per-characteristic table; absent values are written as `NA`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let mut out = String::from("parameter,rmse,inter_observer_rmse,correlation,entropy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{},{},{:.6}\n",
                r.parameter,
                r.rmse,
                opt(r.inter_observer_rmse),
                opt(r.correlation),
                r.entropy
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set1(vals: &[f64]) -> RatingSet {
        RatingSet::from_values(vals.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn rmse_cases() {
        let truth = vec![set1(&[1.0, 3.0]), set1(&[4.0])];
        let pred = vec![RatingVector::new(vec![2.0]), RatingVector::new(vec![4.0])];
        assert_eq!(per_param_rmse(&pred, &truth).unwrap(), vec![0.0]);
        let off = vec![RatingVector::new(vec![4.0]), RatingVector::new(vec![4.0])];
        assert!((per_param_rmse(&off, &truth).unwrap()[0] - (2.0f64).sqrt()).abs() < 1e-12);
        assert!(per_param_rmse(&pred[..1], &truth).is_err());
    }

    #[test]
    fn correlation_absent_for_constant_truth() {
        let truth = vec![set1(&[2.0]), set1(&[2.0]), set1(&[2.0])];
        let pred: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| RatingVector::new(vec![v]))
            .collect();
        assert_eq!(per_param_correlation(&pred, &truth).unwrap(), vec![None]);
    }

    #[test]
    fn mahalanobis_scalar_case() {
        let raters = set1(&[1.0, 2.0, 3.0, 4.0]);
        let m = mahalanobis_to_raters(&RatingVector::new(vec![4.5]), &raters, 0.0)
            .unwrap()
            .unwrap();
        assert!((m - 2.0 / 1.25f64.sqrt()).abs() < 1e-12);
        let at_mean = mahalanobis_to_raters(&RatingVector::new(vec![2.5]), &raters, 0.0).unwrap();
        assert_eq!(at_mean, Some(0.0));
        assert_eq!(
            mahalanobis_to_raters(&RatingVector::new(vec![2.5]), &set1(&[1.0, 2.0, 3.0]), 0.0)
                .unwrap(),
            None
        );
    }

    #[test]
    fn mahalanobis_singular_without_ridge() {
        let raters = RatingSet::from_values(vec![vec![1.0, 1.0]; 4]).unwrap();
        let p = RatingVector::new(vec![1.0, 2.0]);
        assert!(matches!(
            mahalanobis_to_raters(&p, &raters, 0.0),
            Err(Error::Degenerate(_))
        ));
        assert!(mahalanobis_to_raters(&p, &raters, 1e-3).unwrap().unwrap() > 0.0);
    }

    #[test]
    fn entropy_extremes() {
        let schema = CharacteristicSchema::uniform(1, (1.0, 5.0)).unwrap();
        let constant: Vec<_> = (0..10).map(|_| set1(&[3.0])).collect();
        assert_eq!(param_entropy(&constant, &schema, 0).unwrap(), 0.0);
        let uniform: Vec<_> = (1..=5).map(|v| set1(&[v as f64, v as f64])).collect();
        assert!((param_entropy(&uniform, &schema, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inter_observer_cases() {
        let v = inter_observer_rmse(&[set1(&[1.0, 2.0, 3.0, 4.0]), set1(&[5.0])]).unwrap();
        assert!((v[0] - 1.25f64.sqrt()).abs() < 1e-12);
        let agree = inter_observer_rmse(&[set1(&[2.0; 4])]).unwrap();
        assert_eq!(agree, vec![0.0]);
        assert!(inter_observer_rmse(&[set1(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn report_has_one_row_per_characteristic() {
        let schema = CharacteristicSchema::uniform(2, (1.0, 5.0)).unwrap();
        let truth: Vec<_> = (0..6)
            .map(|i| {
                let b = 1.0 + (i % 4) as f64;
                RatingSet::from_values(vec![
                    vec![b, 2.0],
                    vec![b + 0.5, 2.5],
                    vec![b - 0.5, 1.5],
                    vec![b, 3.0],
                ])
                .unwrap()
            })
            .collect();
        let pred: Vec<_> = truth.iter().map(|t| mean_rating(t).unwrap()).collect();
        let r = RegressionReport::build(&pred, &truth, &schema, DEFAULT_RIDGE).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.mahalanobis_items, 6);
        assert!(r.mahalanobis_mean.unwrap() < 1e-9);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().contains("NA"));
    }

    proptest! {
        #[test]
        fn mahalanobis_affine_invariant(
            pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 6..10),
            a in (0.5f64..2.0, -0.8f64..0.8, -0.8f64..0.8, 0.5f64..2.0),
            shift in (-5.0f64..5.0, -5.0f64..5.0),
            p in (-3.0f64..3.0, -3.0f64..3.0),
        ) {
            let det = a.0 * a.3 - a.1 * a.2;
            prop_assume!(det.abs() > 0.2);
            let raters = RatingSet::from_values(pts.iter().map(|&(x, y)| vec![x, y]).collect()).unwrap();
            // well-conditioned covariance only
            let n = pts.len() as f64;
            let (mx, my) = (pts.iter().map(|q| q.0).sum::<f64>() / n, pts.iter().map(|q| q.1).sum::<f64>() / n);
            let sxx = pts.iter().map(|q| (q.0 - mx).powi(2)).sum::<f64>() / n;
            let syy = pts.iter().map(|q| (q.1 - my).powi(2)).sum::<f64>() / n;
            let sxy = pts.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum::<f64>() / n;
            prop_assume!(sxx * syy - sxy * sxy > 0.05);
            let tf = |x: f64, y: f64| vec![a.0 * x + a.1 * y + shift.0, a.2 * x + a.3 * y + shift.1];
            let raters_t = RatingSet::from_values(pts.iter().map(|&(x, y)| tf(x, y)).collect()).unwrap();
            let m0 = mahalanobis_to_raters(&RatingVector::new(vec![p.0, p.1]), &raters, 0.0).unwrap().unwrap();
            let m1 = mahalanobis_to_raters(&RatingVector::new(tf(p.0, p.1)), &raters_t, 0.0).unwrap().unwrap();
            prop_assert!((m0 - m1).abs() < 1e-6 * (1.0 + m0));
        }

        #[test]
        fn entropy_monotone_toward_uniform(total in 2usize..200, frac in 0.0f64..1.0) {
            let a = ((total as f64) * frac * 0.5).floor() as usize;
            let b = a + 1;
            prop_assume!(b <= total / 2);
            let e_a = histogram_entropy(&[a, total - a]).unwrap();
            let e_b = histogram_entropy(&[b, total - b]).unwrap();
            prop_assert!(e_b >= e_a);
            prop_assert!((0.0..=1.0).contains(&e_a));
        }
    }
}
