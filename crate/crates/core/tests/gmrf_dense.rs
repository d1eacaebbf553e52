use inla_core::gmrf::{build_rw2_precision, cholesky, SparseSymmetric};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Random sparse symmetric matrix made SPD by diagonal dominance.
fn spd_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>, Vec<f64>)> {
    (2usize..=50).prop_flat_map(|n| {
        let off = prop::collection::vec((0..n, 0..n, -1.0f64..1.0), 0..3 * n);
        let rhs = prop::collection::vec(-5.0f64..5.0, n);
        (Just(n), off, rhs)
    })
}

fn assemble(n: usize, off: &[(usize, usize, f64)]) -> SparseSymmetric {
    let mut row_abs = vec![0.0; n];
    let mut trips = Vec::new();
    for &(i, j, v) in off {
        if i != j {
            trips.push((i, j, v));
            row_abs[i] += v.abs();
            row_abs[j] += v.abs();
        }
    }
    for (k, r) in row_abs.iter().enumerate() {
        trips.push((k, k, 1.0 + r));
    }
    SparseSymmetric::from_triplets(n, trips).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factor_matches_dense((n, off, rhs) in spd_strategy()) {
        let q = assemble(n, &off);
        let dense = q.to_dense();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(q.get(i, j), q.get(j, i));
            }
        }
        for permute in [false, true] {
            let f = cholesky(&q, permute).unwrap();
            let rec = f.reconstruct_dense();
            prop_assert!((&rec - &dense).norm() <= 1e-10 * dense.norm());

            let chol = dense.clone().cholesky().unwrap();
            let det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            prop_assert!((f.log_det() - det).abs() <= 1e-9 * det.abs().max(1.0));

            let x = f.solve(&rhs).unwrap();
            let xd = chol.solve(&DVector::from_column_slice(&rhs));
            for (a, b) in x.iter().zip(xd.iter()) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }

            let inv = chol.inverse();
            for (k, v) in f.marginal_variances().iter().enumerate() {
                prop_assert!((v - inv[(k, k)]).abs() <= 1e-9 * inv[(k, k)]);
            }
        }
    }

    #[test]
    fn rw2_annihilates_linear_trends(t in 3usize..40, a in -3.0f64..3.0, b in -1.0f64..1.0, log_tau in -2.0f64..4.0) {
        let q = build_rw2_precision(t, log_tau).unwrap();
        let line: Vec<f64> = (0..t).map(|i| a + b * i as f64).collect();
        let ones = vec![1.0; t];
        prop_assert!(q.quad_form(&line).abs() < 1e-9 * (1.0 + a * a + b * b * (t * t) as f64) * log_tau.exp());
        prop_assert!(q.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12 * log_tau.exp()));
        prop_assert_eq!(q.bandwidth(), 2);
    }
}

#[test]
fn rw2_second_differences_exactly() {
    // integer-valued second differences of a sequence with a quadratic bump
    let q = build_rw2_precision(6, 0.0).unwrap();
    let f: [f64; 6] = [0.0, 1.0, 2.0, 4.0, 6.0, 8.0];
    let expect: f64 = (2..6).map(|t| (f[t] - 2.0 * f[t - 1] + f[t - 2]).powi(2)).sum();
    assert_eq!(q.quad_form(&f), expect);
}

#[test]
fn rw2_plus_identity_variances() {
    let mut q = build_rw2_precision(8, 0.0).unwrap();
    q.add_to_diagonal(&[1.0; 8]);
    let inv: DMatrix<f64> = q.to_dense().try_inverse().unwrap();
    let v = cholesky(&q, true).unwrap().marginal_variances();
    for k in 0..8 {
        assert!((v[k] - inv[(k, k)]).abs() < 1e-9);
    }
}
