use lsc_core::mat_core::DenseMatrix;
use lsc_core::sa::*;
use lsc_core::synth::{generate_instance, Instance, ModelParams};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn instance(n1: usize, n2: usize, r: usize, rho: f64, k: usize, seed: u64) -> Instance {
    generate_instance(&ModelParams::new(n1, n2, r, rho, k, seed)).unwrap()
}

#[test]
fn scaled_phase_region_is_detected_exactly() {
    let exact = (0..10)
        .filter(|&seed| {
            let inst = generate_instance(&ModelParams::new(60, 60, 5, 0.05, 30, seed).leading()).unwrap();
            let report = detect_outliers(&inst.d, &SaConfig::default()).unwrap();
            report.outliers == (0..30).collect::<Vec<_>>()
        })
        .count();
    assert!(exact >= 8, "exact detection on {exact}/10 seeds");
}

#[test]
fn decomposition_recovers_the_subspace() {
    let inst = instance(60, 90, 3, 0.01, 10, 2);
    let dec = sa_decompose(&inst.d, &SaConfig::default()).unwrap();
    assert_eq!(dec.outliers, inst.outlier_indices);
    for &j in &dec.outliers {
        assert!(dec.low_rank.as_matrix().column(j).amax() == 0.0);
        assert!(dec.sparse.as_matrix().column(j).amax() == 0.0);
    }
    let err = lsc_core::bench::low_rank_log_error(&inst, dec.low_rank.as_matrix()).unwrap();
    assert!(err < -3.0, "log error {err}");
}

#[test]
fn inlier_dominant_counts_respect_the_sparsity_bound() {
    let (n1, r, rho) = (80, 4, 0.02);
    let bound = 2.0 * r as f64 * rho * n1 as f64;
    for seed in 0..3 {
        let inst = instance(n1, 120, r, rho, 10, 30 + seed);
        let report = detect_outliers(&inst.d, &SaConfig::default()).unwrap();
        for j in inst.inlier_indices() {
            let count = report.certificates[j].dominant_count;
            assert!((count as f64) < bound, "seed {seed} column {j}: {count} >= {bound}");
        }
    }
}

#[test]
fn certificate_normalization() {
    let cfg = SaConfig::default();
    let c = sparsity_certificate(&[0.5, -2.0, 0.1, 0.0], 7, &cfg);
    assert_eq!(c.column_index, 7);
    assert_eq!(c.normalized_residual, vec![0.25, 1.0, 0.05, 0.0]);
    assert_eq!(c.dominant_count, 2);
    assert_eq!(c.dominant_fraction, 0.5);
    assert!(c.is_outlier);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lower_magnitude_threshold_never_lowers_the_fraction(
        residual in prop::collection::vec(-5.0..5.0f64, 1..40),
        a in 0.01..0.99f64,
        b in 0.01..0.99f64,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let at = |t| sparsity_certificate(&residual, 0, &SaConfig { mag_threshold: t, ..Default::default() });
        let (cl, ch) = (at(lo), at(hi));
        prop_assert!(cl.dominant_fraction >= ch.dominant_fraction);
        let ones = cl.normalized_residual.iter().filter(|&&h| h == 1.0).count();
        prop_assert!(cl.normalized_residual.iter().all(|&h| (0.0..=1.0).contains(&h)));
        prop_assert!(ones >= 1 || residual.iter().all(|&x| x == 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn column_permutation_permutes_the_detected_set(seed in 0u64..1000) {
        let inst = instance(30, 40, 2, 0.02, 5, seed);
        let n2 = inst.d.cols();
        let perm: Vec<usize> = (0..n2).map(|j| (j * 7 + 3) % n2).collect();
        let permuted = inst.d.select_columns(&perm).unwrap();
        let base = detect_outliers(&inst.d, &SaConfig::default()).unwrap();
        let moved = detect_outliers(&permuted, &SaConfig::default()).unwrap();
        let mut mapped: Vec<usize> = moved.outliers.iter().map(|&j| perm[j]).collect();
        mapped.sort_unstable();
        prop_assert_eq!(mapped, base.outliers);
    }

    #[test]
    fn column_scale_does_not_change_classification(seed in 0u64..1000, c in prop::sample::select(vec![0.01, 0.3, 7.0, 250.0])) {
        let inst = instance(30, 40, 2, 0.02, 5, seed);
        let col = inst.inlier_indices()[0];
        let mut scaled: DMatrix<f64> = inst.d.as_matrix().clone();
        scaled.column_mut(col).scale_mut(c);
        let base = detect_outliers(&inst.d, &SaConfig::default()).unwrap();
        let moved = detect_outliers(&DenseMatrix::from_matrix(scaled).unwrap(), &SaConfig::default()).unwrap();
        prop_assert_eq!(base.certificates[col].is_outlier, moved.certificates[col].is_outlier);
        prop_assert_eq!(base.outliers, moved.outliers);
    }
}
