//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use cbir_core::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        g.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    g
}

/// Largest entrywise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = random_matrix(rng, rows, cols, -1.0, 1.0);
    for i in 0..rows {
        let n = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        m.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    m
}

/// Plain Euclidean distance table of the rows of `m`.
pub fn distance_table(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.rows(), |i, j| {
        m.row(i)
            .iter()
            .zip(m.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    })
}

/// Mean-of-minima set distance by explicit all-pairs enumeration.
pub fn brute_set_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut table = vec![vec![0.0; b.len()]; a.len()];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..x.len() {
                s += (x[k] - y[k]).powi(2);
            }
            table[i][j] = s.sqrt();
        }
    }
    let mut forward = 0.0;
    for row in &table {
        let mut m = f64::INFINITY;
        for &v in row {
            if v < m {
                m = v;
            }
        }
        forward += m;
    }
    let mut backward = 0.0;
    for j in 0..b.len() {
        let mut m = f64::INFINITY;
        for row in &table {
            if row[j] < m {
                m = row[j];
            }
        }
        backward += m;
    }
    0.5 * forward / a.len() as f64 + 0.5 * backward / b.len() as f64
}

/// k nearest neighbors by sorting every candidate, ties to the lower index.
pub fn sort_knn(
    points: &[Vec<f64>],
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| {
            let d = p
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            (d, i)
        })
        .collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Population skewness from raw moments.
pub fn moment_skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let s1: f64 = values.iter().sum::<f64>() / n;
    let s2: f64 = values.iter().map(|v| v * v).sum::<f64>() / n;
    let s3: f64 = values.iter().map(|v| v * v * v).sum::<f64>() / n;
    let m2 = s2 - s1 * s1;
    let m3 = s3 - 3.0 * s1 * s2 + 2.0 * s1 * s1 * s1;
    if m2.abs() < 1e-12 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}
