//! Training objectives and their analytic gradients.
//!
//! Distance-matrix losses take plain square matrices rather than
//! [`DistanceMatrix`](crate::ratings::DistanceMatrix) so that gradients are
//! defined per entry: every entry `(i, j)` is an independent input, and a
//! symmetric prediction simply receives gradient on both halves.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, euclidean, l2_norm, Matrix};

/// Allowed deviation of an embedding norm from 1 before a pairwise loss
/// rejects it.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub gradient: Matrix,
}

/// Sign of the exponent used when turning distance rows into distributions.
/// `Positive` exponentiates `+distance` (farther items get more mass).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxSign {
    #[default]
    Positive,
    Negative,
}

impl SoftmaxSign {
    fn factor(self) -> f64 {
        match self {
            SoftmaxSign::Positive => 1.0,
            SoftmaxSign::Negative => -1.0,
        }
    }
}

/// `log(cosh(x))` without overflow for large `|x|`.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

fn same_square(p: &Matrix, t: &Matrix, min: usize) -> Result<usize> {
    if !p.is_square() {
        return Err(Error::shape(
            "square prediction",
            format!("{:?}", p.shape()),
        ));
    }
    t.ensure_shape(p.rows(), p.cols())?;
    let b = p.rows();
    if b < min {
        return Err(Error::Domain(format!("batch size {b} below minimum {min}")));
    }
    Ok(b)
}

/// Mean log-cosh over every entry of a `B x C` prediction.
pub fn logcosh_regression(pred: &Matrix, target: &Matrix) -> Result<LossResult> {
    target.ensure_shape(pred.rows(), pred.cols())?;
    let n = (pred.rows() * pred.cols()) as f64;
    if n == 0.0 {
        return Err(Error::Domain("empty regression batch".into()));
    }
    let mut value = 0.0;
    let mut gradient = Matrix::zeros(pred.rows(), pred.cols());
    for ((g, p), t) in gradient
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let r = p - t;
        value += log_cosh(r);
        *g = r.tanh() / n;
    }
    Ok(LossResult {
        value: value / n,
        gradient,
    })
}

/// Mean log-cosh between off-diagonal entries of predicted and target
/// distance matrices. For symmetric inputs this is the strict upper triangle
/// mean; the gradient is split evenly over both halves.
pub fn dm_logcosh(p: &Matrix, t: &Matrix) -> Result<LossResult> {
    let b = same_square(p, t, 2)?;
    let count = (b * (b - 1)) as f64;
    let mut value = 0.0;
    let mut gradient = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let r = p[(i, j)] - t[(i, j)];
            value += log_cosh(r);
            gradient[(i, j)] = r.tanh() / count;
        }
    }
    Ok(LossResult {
        value: value / count,
        gradient,
    })
}

fn off_diagonal(row: &[f64], b: usize) -> Vec<f64> {
    row.iter()
        .enumerate()
        .filter(|&(i, _)| i != b)
        .map(|(_, &x)| x)
        .collect()
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Negated mean row-wise Pearson correlation between `p` and `t`.
///
/// Each row is correlated over its off-diagonal entries (the diagonal of a
/// distance matrix is structurally zero). Rows with zero variance on either
/// side are rejected.
pub fn dm_pearson(p: &Matrix, t: &Matrix) -> Result<LossResult> {
    let b = same_square(p, t, 3)?;
    let mut value = 0.0;
    let mut gradient = Matrix::zeros(b, b);
    for row in 0..b {
        let xc = centered(&off_diagonal(p.row(row), row));
        let yc = centered(&off_diagonal(t.row(row), row));
        let nx = l2_norm(&xc);
        let ny = l2_norm(&yc);
        if !(nx > 0.0) || !(ny > 0.0) {
            return Err(Error::DegenerateRow { row });
        }
        let r = dot(&xc, &yc) / (nx * ny);
        value -= r;
        let g_row = gradient.row_mut(row);
        let mut k = 0;
        for (col, g) in g_row.iter_mut().enumerate() {
            if col == row {
                continue;
            }
            let dr = yc[k] / (nx * ny) - r * xc[k] / (nx * nx);
            *g = -dr / b as f64;
            k += 1;
        }
    }
    Ok(LossResult {
        value: value / b as f64,
        gradient,
    })
}

/// Row-wise softmax, diagonal included.
pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn row_log_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Back-propagates a gradient through a row-wise softmax with output `q`.
fn softmax_backward(q: &Matrix, g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(q.rows(), q.cols());
    for i in 0..q.rows() {
        let inner = dot(q.row(i), g.row(i));
        for (o, (qv, gv)) in out.row_mut(i).iter_mut().zip(q.row(i).iter().zip(g.row(i))) {
            *o = qv * (gv - inner);
        }
    }
    out
}

/// Pearson loss applied after a row softmax of both matrices.
pub fn dm_ranked_pearson(p: &Matrix, t: &Matrix) -> Result<LossResult> {
    same_square(p, t, 3)?;
    let q = row_softmax(p);
    let s = row_softmax(t);
    let inner = dm_pearson(&q, &s)?;
    Ok(LossResult {
        value: inner.value,
        gradient: softmax_backward(&q, &inner.gradient),
    })
}

/// Summed KL divergence between softmax-normalized rows of `t` and `p`.
pub fn dm_kl(p: &Matrix, t: &Matrix) -> Result<LossResult> {
    dm_kl_with(p, t, SoftmaxSign::Positive)
}

pub fn dm_kl_with(p: &Matrix, t: &Matrix, sign: SoftmaxSign) -> Result<LossResult> {
    let b = same_square(p, t, 2)?;
    let s = sign.factor();
    let log_p = row_log_softmax(&p.scale(s));
    let log_t = row_log_softmax(&t.scale(s));
    let mut value = 0.0;
    let mut gradient = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            let lt = log_t[(i, j)];
            let lp = log_p[(i, j)];
            let tt = lt.exp();
            value += tt * (lt - lp);
            gradient[(i, j)] = s * (lp.exp() - tt);
        }
    }
    Ok(LossResult {
        value: value.max(0.0),
        gradient,
    })
}

/// Pairwise distance regression: mean log-cosh between `|a_k - b_k|` and the
/// target distance. The gradient stacks `d/da` (rows `0..n`) over `d/db`
/// (rows `n..2n`). Coincident pairs get zero gradient.
pub fn siamese_distance_loss(a: &Matrix, b: &Matrix, d_true: &[f64]) -> Result<LossResult> {
    let n = a.rows();
    let d = a.cols();
    b.ensure_shape(n, d)?;
    if d_true.len() != n {
        return Err(Error::shape(format!("{n} target distances"), d_true.len()));
    }
    if n == 0 {
        return Err(Error::Domain("no pairs".into()));
    }
    for m in [a, b] {
        for k in 0..n {
            let norm = l2_norm(m.row(k));
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Normalization { norm });
            }
        }
    }
    if let Some(bad) = d_true.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::Domain(format!("negative target distance {bad}")));
    }
    let mut value = 0.0;
    let mut gradient = Matrix::zeros(2 * n, d);
    for k in 0..n {
        let (ra, rb) = (a.row(k), b.row(k));
        let dist = euclidean(ra, rb);
        let r = dist - d_true[k];
        value += log_cosh(r);
        if dist > 0.0 {
            let scale = r.tanh() / (n as f64 * dist);
            for c in 0..d {
                let g = scale * (ra[c] - rb[c]);
                gradient[(k, c)] = g;
                gradient[(n + k, c)] = -g;
            }
        }
    }
    Ok(LossResult {
        value: value / n as f64,
        gradient,
    })
}

/// `w_reg * reg + w_sim * sim`. Both gradients must already refer to the same
/// input (typically the batch embeddings).
pub fn multi_task_combine(
    reg: &LossResult,
    sim: &LossResult,
    w_reg: f64,
    w_sim: f64,
) -> Result<LossResult> {
    if !(w_reg >= 0.0) || !(w_sim >= 0.0) {
        return Err(Error::Config(format!(
            "loss weights must be nonnegative, got ({w_reg}, {w_sim})"
        )));
    }
    let (r, c) = reg.gradient.shape();
    sim.gradient.ensure_shape(r, c)?;
    let mut gradient = reg.gradient.scale(w_reg);
    for (g, s) in gradient
        .as_mut_slice()
        .iter_mut()
        .zip(sim.gradient.as_slice())
    {
        *g += w_sim * s;
    }
    Ok(LossResult {
        value: w_reg * reg.value + w_sim * sim.value,
        gradient,
    })
}

/// Pairwise Euclidean distances between the rows of `e`.
pub fn pairwise_distances(e: &Matrix) -> Matrix {
    let n = e.rows();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(e.row(i), e.row(j));
            p[(i, j)] = d;
            p[(j, i)] = d;
        }
    }
    p
}

/// Chain rule from `dL/dP` to `dL/dE` for `P = pairwise_distances(E)`.
/// Entries `(i, j)` and `(j, i)` are both functions of the same pair, so their
/// gradients are summed. Coincident rows contribute nothing.
pub fn pairwise_distances_backward(e: &Matrix, p: &Matrix, grad_p: &Matrix) -> Matrix {
    let n = e.rows();
    let mut out = Matrix::zeros(n, e.cols());
    for i in 0..n {
        for j in i + 1..n {
            let d = p[(i, j)];
            if d <= 0.0 {
                continue;
            }
            let g = (grad_p[(i, j)] + grad_p[(j, i)]) / d;
            for c in 0..e.cols() {
                let diff = g * (e[(i, c)] - e[(j, c)]);
                out[(i, c)] += diff;
                out[(j, c)] -= diff;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
    }

    fn fd_check(input: &Matrix, analytic: &Matrix, f: impl Fn(&Matrix) -> f64, tol: f64) {
        let h = 1e-5;
        for k in 0..input.as_slice().len() {
            let mut plus = input.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = input.clone();
            minus.as_mut_slice()[k] -= h;
            let num = (f(&plus) - f(&minus)) / (2.0 * h);
            let ana = analytic.as_slice()[k];
            let denom = ana.abs().max(num.abs()).max(1e-6);
            assert!(
                (ana - num).abs() / denom < tol,
                "entry {k}: analytic {ana} vs numeric {num}"
            );
        }
    }

    #[test]
    fn logcosh_scalar() {
        let p = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let t = Matrix::zeros(1, 1);
        let r = logcosh_regression(&p, &t).unwrap();
        assert!((r.value - 0.433_780_830_483_027).abs() < 1e-6);
        assert!((r.gradient[(0, 0)] - 0.761_594_155_955_765).abs() < 1e-6);
        let z = logcosh_regression(&t, &t).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(logcosh_regression(&p, &Matrix::zeros(1, 2)).is_err());
        assert!(log_cosh(1000.0).is_finite());
    }

    #[test]
    fn logcosh_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random(&mut rng, 4, 9, 1.0, 6.0);
        let t = random(&mut rng, 4, 9, 1.0, 6.0);
        let r = logcosh_regression(&p, &t).unwrap();
        fd_check(
            &p,
            &r.gradient,
            |x| logcosh_regression(x, &t).unwrap().value,
            1e-6,
        );
    }

    #[test]
    fn dm_logcosh_cases() {
        let t = Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(dm_logcosh(&t, &t).unwrap().value, 0.0);
        assert!((dm_logcosh(&p, &t).unwrap().value - log_cosh(1.0)).abs() < 1e-12);
        let g = dm_logcosh(&p, &t).unwrap().gradient;
        assert_eq!(g[(0, 1)], g[(1, 0)]);
    }

    #[test]
    fn pearson_affine_and_anti() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = crate::ratings::DistanceMatrix::from_points(
            &(0..6)
                .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
                .collect::<Vec<_>>(),
        )
        .into_matrix();
        let mut p = t.map(|x| 2.0 * x + 1.0);
        for i in 0..6 {
            p[(i, i)] = 0.0;
        }
        assert!((dm_pearson(&p, &t).unwrap().value + 1.0).abs() < 1e-12);
        let neg = t.scale(-1.0);
        assert!((dm_pearson(&neg, &t).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_degenerate_row_named() {
        let mut t = Matrix::from_fn(4, 4, |i, j| (i + 2 * j) as f64);
        for j in 0..4 {
            t[(2, j)] = 1.0;
        }
        let p = Matrix::from_fn(4, 4, |i, j| (i * j) as f64 + j as f64);
        match dm_pearson(&p, &t) {
            Err(Error::DegenerateRow { row }) => assert_eq!(row, 2),
            other => panic!("expected degenerate row, got {other:?}"),
        }
        assert!(dm_pearson(&Matrix::zeros(2, 2), &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn softmax_cases() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 2f64.ln()]]).unwrap();
        let s = row_softmax(&m);
        assert!((s[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s[(1, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s[(1, 1)] - 2.0 / 3.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = row_softmax(&random(&mut rng, 7, 7, -20.0, 20.0));
        for i in 0..7 {
            assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ranked_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random(&mut rng, 5, 5, 0.0, 3.0);
        assert!((dm_ranked_pearson(&t, &t).unwrap().value + 1.0).abs() < 1e-12);
        let mut p = t.clone();
        for i in 0..5 {
            let c = rng.random_range(-4.0..4.0);
            p.row_mut(i).iter_mut().for_each(|x| *x += c);
        }
        assert!((dm_ranked_pearson(&p, &t).unwrap().value + 1.0).abs() < 1e-10);
    }

    #[test]
    fn kl_closed_form() {
        let t = Matrix::from_rows(&[vec![0.0, 2f64.ln()]]).unwrap();
        let t = Matrix::from_rows(&[t.row(0).to_vec(), vec![2f64.ln(), 0.0]]).unwrap();
        let p = Matrix::zeros(2, 2);
        let expected_row = (1.0 / 3.0) * (2.0f64 / 3.0).ln() + (2.0 / 3.0) * (4.0f64 / 3.0).ln();
        assert!((expected_row - 0.056_633).abs() < 1e-6);
        // Both rows carry the same distribution (mirrored), so twice the row value.
        let v = dm_kl(&p, &t).unwrap().value;
        assert!((v - 2.0 * expected_row).abs() < 1e-12);
        assert_eq!(dm_kl(&t, &t).unwrap().value, 0.0);
    }

    #[test]
    fn kl_gradients_both_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random(&mut rng, 6, 6, 0.0, 2.0);
        let t = random(&mut rng, 6, 6, 0.0, 5.0);
        for sign in [SoftmaxSign::Positive, SoftmaxSign::Negative] {
            let r = dm_kl_with(&p, &t, sign).unwrap();
            assert!(r.value >= 0.0);
            fd_check(
                &p,
                &r.gradient,
                |x| dm_kl_with(x, &t, sign).unwrap().value,
                1e-4,
            );
        }
    }

    #[test]
    fn siamese_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![-1.0, 0.0]]).unwrap();
        let same = siamese_distance_loss(&a, &a, &[0.0]).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.gradient.as_slice().iter().all(|&g| g == 0.0));
        assert!(siamese_distance_loss(&a, &b, &[2.0]).unwrap().value.abs() < 1e-15);
        let z = Matrix::zeros(1, 2);
        assert!(matches!(
            siamese_distance_loss(&z, &a, &[1.0]),
            Err(Error::Normalization { .. })
        ));
        assert!(siamese_distance_loss(&a, &b, &[-1.0]).is_err());
    }

    #[test]
    fn combine_cases() {
        let mk = |v: f64| LossResult {
            value: v,
            gradient: Matrix::from_vec(1, 2, vec![v, 2.0 * v]).unwrap(),
        };
        let c = multi_task_combine(&mk(0.2), &mk(0.4), 0.5, 0.5).unwrap();
        assert!((c.value - 0.3).abs() < 1e-15);
        let c = multi_task_combine(&mk(0.2), &mk(0.4), 1.0, 0.0).unwrap();
        assert_eq!(c, mk(0.2));
        let c = multi_task_combine(&mk(1.0), &mk(2.0), 0.9, 0.1).unwrap();
        assert!((c.value - 1.1).abs() < 1e-15);
        assert!(matches!(
            multi_task_combine(&mk(1.0), &mk(1.0), -0.1, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn distance_backward_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let e = random(&mut rng, 5, 3, -1.0, 1.0);
        let t = random(&mut rng, 5, 5, 0.0, 3.0);
        let f = |x: &Matrix| dm_logcosh(&pairwise_distances(x), &t).unwrap().value;
        let p = pairwise_distances(&e);
        let g = pairwise_distances_backward(&e, &p, &dm_logcosh(&p, &t).unwrap().gradient);
        fd_check(&e, &g, f, 1e-5);
    }
}
