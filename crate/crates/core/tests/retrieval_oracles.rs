mod common;

use cbir_core::exec::Execution;
use cbir_core::linalg::Matrix;
use cbir_core::ratings::DistanceMatrix;
use cbir_core::retrieval::{
    hubness_skewness, rating_correlation, EmbeddingIndex, KOccurrenceProfile,
};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn index_of(m: &Matrix) -> EmbeddingIndex {
    EmbeddingIndex::new(
        (0..m.rows()).map(|i| format!("v{i:03}")).collect(),
        (0..m.rows()).map(|i| m.row(i).to_vec()).collect(),
    )
    .unwrap()
}

#[test]
fn knn_matches_full_sort_on_100_vectors() {
    let mut r = rng(100);
    let m = unit_rows(&mut r, 100, 8);
    let idx = index_of(&m);
    let points: Vec<Vec<f64>> = (0..100).map(|i| m.row(i).to_vec()).collect();
    for _ in 0..20 {
        let q = unit_rows(&mut r, 1, 8);
        for k in [1, 5, 17, 99] {
            let got: Vec<String> = idx
                .knn_query(q.row(0), k)
                .unwrap()
                .into_iter()
                .map(|x| x.0)
                .collect();
            let want: Vec<String> = sort_knn(&points, q.row(0), k, None)
                .into_iter()
                .map(|i| format!("v{i:03}"))
                .collect();
            assert_eq!(got, want);
        }
    }
    // k-occurrences agree with self-excluded sort oracle lists
    for k in [1, 3, 7] {
        let mut counts = vec![0; 100];
        for (i, p) in points.iter().enumerate() {
            for j in sort_knn(&points, p, k, Some(i)) {
                counts[j] += 1;
            }
        }
        assert_eq!(idx.k_occurrences(k).unwrap().counts, counts);
    }
}

#[test]
fn distances_are_ascending_and_external_query_finds_itself() {
    let mut r = rng(101);
    let m = unit_rows(&mut r, 30, 5);
    let idx = index_of(&m);
    let res = idx.knn_query(m.row(7), 6).unwrap();
    assert_eq!(res[0], ("v007".to_string(), 0.0));
    assert!(res.windows(2).all(|w| w[0].1 <= w[1].1));
    assert!(idx.knn_query(m.row(7), 30).is_err());
}

#[test]
fn skewness_matches_moment_oracle() {
    let mut r = rng(102);
    for _ in 0..200 {
        let n = r.random_range(3..300);
        let counts: Vec<usize> = (0..n).map(|_| r.random_range(0..25)).collect();
        let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let got = hubness_skewness(&KOccurrenceProfile { k: 5, counts }).unwrap();
        assert!((got - moment_skewness(&values)).abs() < 1e-10);
    }
}

#[test]
fn independent_distance_matrices_barely_correlate() {
    // seed 103, N = 30 (435 pairs)
    let mut r = rng(103);
    let a = DistanceMatrix::from_points(
        &(0..30)
            .map(|_| (0..9).map(|_| r.random_range(1.0..6.0)).collect())
            .collect::<Vec<_>>(),
    );
    let b = DistanceMatrix::from_points(
        &(0..30)
            .map(|_| (0..9).map(|_| r.random_range(1.0..6.0)).collect())
            .collect::<Vec<_>>(),
    );
    let c = rating_correlation(&a, &b).unwrap();
    assert!(c.abs() < 0.15, "{c}");
    assert!((c - pearson_oracle(&a.upper_triangle(), &b.upper_triangle())).abs() < 1e-12);
}

#[test]
fn hub_report_and_orphans_are_consistent() {
    let mut r = rng(104);
    for _ in 0..20 {
        let n = r.random_range(20..60);
        let idx = index_of(&unit_rows(&mut r, n, 3));
        for k in [1, 2, 5] {
            let p = idx.k_occurrences(k).unwrap();
            let rep = idx.hub_report(k).unwrap();
            let max = *p.counts.iter().max().unwrap();
            assert_eq!(rep.reverse_queries.len(), max);
            assert_eq!(rep.hub_count, max);
            let first_max = p.counts.iter().position(|&c| c == max).unwrap();
            assert_eq!(rep.hub_id, format!("v{first_max:03}"));
            let nonzero = p.counts.iter().filter(|&&c| c > 0).count();
            assert_eq!(rep.orphan_ids.len() + nonzero, n);
        }
    }
}

#[test]
fn parallel_and_sequential_diagnostics_agree() {
    let mut r = rng(105);
    let idx = index_of(&unit_rows(&mut r, 80, 6));
    let k = [3, 5, 7, 11, 17];
    assert_eq!(
        idx.hubness_by_k(&k, Execution::Sequential).unwrap(),
        idx.hubness_by_k(&k, Execution::Parallel).unwrap()
    );
}

proptest! {
    #[test]
    fn counts_conserved_and_index_bounded(seed in 0u64..1000, n in 20usize..60, dim in 2usize..8) {
        let mut r = rng(seed);
        let idx = index_of(&unit_rows(&mut r, n, dim));
        for k in [1, 3, 5, 7, 11, 17] {
            prop_assert_eq!(idx.k_occurrences(k).unwrap().counts.iter().sum::<usize>(), k * n);
        }
        let h = idx.hubness_index(&[3, 5, 7, 11, 17]).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn correlation_symmetric_and_affine_invariant(seed in 0u64..1000, scale in 0.1f64..10.0, shift in 0.0f64..5.0) {
        let mut r = rng(seed);
        let a = DistanceMatrix::from_points(&(0..12).map(|_| vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect::<Vec<_>>());
        let b = DistanceMatrix::from_points(&(0..12).map(|_| vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect::<Vec<_>>());
        let ab = rating_correlation(&a, &b).unwrap();
        prop_assert!((ab - rating_correlation(&b, &a).unwrap()).abs() < 1e-12);
        let t = DistanceMatrix::new(Matrix::from_fn(12, 12, |i, j| if i == j { 0.0 } else { scale * a.get(i, j) + shift })).unwrap();
        prop_assert!((ab - rating_correlation(&t, &b).unwrap()).abs() < 1e-9);
    }
}
