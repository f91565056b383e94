use nalgebra::DMatrix;
use proptest::prelude::*;
use srf::consensus::{align, central_run, RunSet};
use srf::evaluate::{auc_from_scores, predict_odd_one_out, ridge_predict, RidgeConfig};
use srf::hyptest::{bh_correct, mantel_statistic};
use srf::io::{read_mask, read_matrix, write_mask, write_matrix};
use srf::rank::assign_folds;
use srf::simmat::{
    linear_kernel, rbf_kernel, symmetrize_clip, triplet_similarity, FeatureMatrix, TripletCounts,
};
use srf::simulate::{add_noise_to_snr, noisy_unclipped};
use srf::solver::{subproblem_objective, w_subproblem_sweep};
use srf::stats::{spearman_brown, variance};
use srf::{fit, DenseSimilarity, Embedding, Mask, SolverConfig};

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn sized_matrix(lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..8, 1usize..5).prop_flat_map(move |(n, d)| matrix(n, d, lo, hi))
}

fn assert_symmetric_nonnegative(s: &DenseSimilarity) {
    let v = s.values();
    for i in 0..s.n() {
        assert!(s.mask().get(i, i));
        for j in 0..s.n() {
            assert_eq!(v[(i, j)], v[(j, i)]);
            assert!(v[(i, j)] >= 0.0);
            assert_eq!(s.mask().get(i, j), s.mask().get(j, i));
        }
    }
}

fn strictly_monotone(x: f64) -> f64 {
    x.exp() * 3.0 + x.powi(3)
}

fn rotation(d: usize, angles: &[f64]) -> DMatrix<f64> {
    let mut q = DMatrix::identity(d, d);
    for (k, &a) in angles.iter().enumerate() {
        let (i, j) = (k % d, (k + 1) % d);
        if i == j {
            continue;
        }
        let mut g = DMatrix::identity(d, d);
        g[(i, i)] = a.cos();
        g[(j, j)] = a.cos();
        g[(i, j)] = -a.sin();
        g[(j, i)] = a.sin();
        q = g * q;
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triplet_similarity_monotone_in_together_count(
        m in 1u64..40, c in 0u64..40, extra in 1u64..10, alpha in 0.01f64..5.0,
    ) {
        let c = c.min(m);
        let extra = extra.min(m - c);
        let mut t = TripletCounts::zeros(3);
        t.m[(0, 1)] = m;
        t.m[(1, 0)] = m;
        t.c[(0, 1)] = c;
        t.c[(1, 0)] = c;
        let before = triplet_similarity(&t, alpha).unwrap();
        t.c[(0, 1)] = c + extra;
        t.c[(1, 0)] = c + extra;
        let after = triplet_similarity(&t, alpha).unwrap();
        prop_assert!(after.values()[(0, 1)] >= before.values()[(0, 1)]);
        assert_symmetric_nonnegative(&after);
    }

    #[test]
    fn linear_kernel_is_psd_and_symmetric(x in sized_matrix(0.0, 3.0)) {
        let s = linear_kernel(&FeatureMatrix::new(x).unwrap()).unwrap();
        assert_symmetric_nonnegative(&s);
        let eig = s.values().clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-9));
    }

    #[test]
    fn rbf_kernel_ignores_rotation_and_translation(
        x in matrix(6, 3, -2.0, 2.0),
        shift in prop::collection::vec(-5.0f64..5.0, 3),
        angles in prop::collection::vec(0.0f64..6.28, 3),
        mult in 0.1f64..2.0,
    ) {
        let q = rotation(3, &angles);
        let mut moved = &x * q.transpose();
        for mut row in moved.row_iter_mut() {
            for (v, s) in row.iter_mut().zip(&shift) {
                *v += s;
            }
        }
        let a = rbf_kernel(&FeatureMatrix::new(x).unwrap(), mult).unwrap();
        let b = rbf_kernel(&FeatureMatrix::new(moved).unwrap(), mult).unwrap();
        assert_symmetric_nonnegative(&a);
        prop_assert!((a.values() - b.values()).amax() < 1e-9);
    }

    #[test]
    fn symmetrize_clip_output_is_valid(
        (x, bits) in (2usize..8).prop_flat_map(|n| (
            matrix(n, n, -1.0, 1.0),
            prop::collection::vec(any::<bool>(), n * n),
        )),
    ) {
        let n = x.nrows();
        let mask = DMatrix::from_vec(n, n, bits);
        let s = symmetrize_clip(&x, Some(&mask)).unwrap();
        assert_symmetric_nonnegative(&s);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    prop_assert_eq!(s.mask().get(i, j), mask[(i, j)] && mask[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn odd_one_out_ignores_monotone_rescaling(
        scores in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let score = |x: usize, y: usize| scores[x + y - 1];
        let raw = predict_odd_one_out([0, 1, 2], score);
        let warped = predict_odd_one_out([0, 1, 2], |x, y| strictly_monotone(score(x, y)));
        prop_assert_eq!(raw, warped);
    }

    #[test]
    fn auc_ignores_monotone_rescaling(
        pos in prop::collection::vec(-3.0f64..3.0, 1..20),
        neg in prop::collection::vec(-3.0f64..3.0, 1..20),
    ) {
        let a = auc_from_scores(&pos, &neg).unwrap();
        let pw: Vec<f64> = pos.iter().map(|&v| strictly_monotone(v)).collect();
        let nw: Vec<f64> = neg.iter().map(|&v| strictly_monotone(v)).collect();
        let b = auc_from_scores(&pw, &nw).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn mantel_statistic_ignores_constant_shift(
        (h, s) in (3usize..9).prop_flat_map(|n| (matrix(n, n, 0.0, 1.0), matrix(n, n, 0.0, 1.0))),
        shift in -10.0f64..10.0,
    ) {
        let h = (&h + h.transpose()) * 0.5;
        let s = (&s + s.transpose()) * 0.5;
        let shifted = s.add_scalar(shift);
        let a = mantel_statistic(&h, &s);
        let b = mantel_statistic(&h, &shifted);
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
    }

    #[test]
    fn bh_rejections_grow_with_alpha(
        p in prop::collection::vec(0.0f64..1.0, 1..40),
        a in 0.001f64..0.5,
        b in 0.001f64..0.5,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let strict = bh_correct(&p, lo);
        let loose = bh_correct(&p, hi);
        for (s, l) in strict.iter().zip(&loose) {
            prop_assert!(!s || *l);
        }
    }

    #[test]
    fn spearman_brown_is_monotone(a in -0.99f64..1.0, b in -0.99f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(spearman_brown(lo) <= spearman_brown(hi) + 1e-15);
        if lo >= 0.0 {
            prop_assert!(spearman_brown(lo) >= lo);
        }
    }

    #[test]
    fn folds_partition_observed_pairs(
        n in 4usize..20, keep in 0.2f64..1.0, folds in 2usize..6, seed in any::<u64>(),
    ) {
        let threshold = (keep * 1000.0) as usize;
        let mask = Mask::from_fn_and(n, |i, j| (i * 31 + j * 17) % 1000 < threshold);
        prop_assume!(mask.observed_offdiag_count() >= folds);
        let parts = assign_folds(&mask, folds, seed).unwrap();
        prop_assert_eq!(parts.len(), folds);
        let mut all: Vec<(usize, usize)> = parts.concat();
        all.sort_unstable();
        let mut expected = mask.observed_pairs();
        expected.sort_unstable();
        prop_assert_eq!(all, expected);
        prop_assert_eq!(parts, assign_folds(&mask, folds, seed).unwrap());
    }

    #[test]
    fn matrix_and_mask_round_trip(
        (x, bits) in (1usize..7).prop_flat_map(|n| (
            matrix(n, n, -1e6, 1e6),
            prop::collection::vec(any::<bool>(), n * n),
        )),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matrix(&path, &x).unwrap();
        prop_assert_eq!(read_matrix(&path).unwrap(), x.clone());
        let n = x.nrows();
        let mask = Mask::from_fn_and(n, |i, j| bits[i * n + j]);
        let mpath = dir.path().join("mask.csv");
        write_mask(&mpath, &mask).unwrap();
        prop_assert_eq!(read_mask(&mpath).unwrap(), mask);
    }

    #[test]
    fn sweep_never_increases_subproblem(
        (w, target) in (2usize..7, 1usize..4).prop_flat_map(|(n, r)| (
            matrix(n, r, 0.0, 1.5),
            matrix(n, n, -0.5, 2.0),
        )),
    ) {
        let target = (&target + target.transpose()) * 0.5;
        let w = Embedding::new(w);
        let next = w_subproblem_sweep(&w, &target);
        prop_assert!(next.is_nonnegative());
        let before = subproblem_objective(&w, &target, 1.0);
        let after = subproblem_objective(&next, &target, 1.0);
        prop_assert!(after <= before + 1e-12 * before.max(1.0));
    }

    #[test]
    fn noise_hits_requested_snr(
        x in matrix(12, 3, 0.0, 1.0), snr in 0.05f64..1.0, seed in any::<u64>(),
    ) {
        let clean = &x * x.transpose();
        let raw = noisy_unclipped(&clean, snr, seed).unwrap();
        let realized = variance(clean.as_slice()) / variance(raw.as_slice());
        prop_assert!((realized - snr).abs() < 1e-3, "{realized} vs {snr}");
        let clipped = add_noise_to_snr(&clean, snr, seed).unwrap();
        prop_assert!(clipped.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(clipped.clone(), clipped.transpose());
    }

    #[test]
    fn align_recovers_column_permutation(
        x in matrix(15, 4, 0.0, 1.0),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let a = Embedding::new(x);
        let b = a.permute_columns(&perm);
        let res = align(&a, &b).unwrap();
        for (k, &l) in res.permutation.iter().enumerate() {
            prop_assert_eq!(b.column(l), a.column(k));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ridge_prediction_ignores_own_target(
        x in matrix(20, 3, -1.0, 1.0),
        y in prop::collection::vec(-2.0f64..2.0, 20),
        row in 0usize..20,
        bump in -50.0f64..50.0,
    ) {
        let cfg = RidgeConfig { folds: 4, alpha_grid: vec![0.1, 1.0, 10.0], seed: 3 };
        let base = ridge_predict(&x, &y, &cfg).unwrap();
        let mut changed = y.clone();
        changed[row] += bump;
        let moved = ridge_predict(&x, &changed, &cfg).unwrap();
        prop_assert_eq!(base.fold.clone(), moved.fold.clone());
        prop_assert!((base.predictions[row] - moved.predictions[row]).abs() < 1e-9);
    }

    #[test]
    fn central_run_ignores_run_order(
        runs in prop::collection::vec(matrix(10, 3, 0.0, 1.0), 3..6),
        rotate in 1usize..5,
    ) {
        let m = runs.len();
        let original = RunSet::from_runs(runs.iter().cloned().map(Embedding::new).collect()).unwrap();
        let shift = rotate % m;
        let reordered: Vec<Embedding> = (0..m)
            .map(|k| Embedding::new(runs[(k + shift) % m].clone()))
            .collect();
        let rotated = RunSet::from_runs(reordered).unwrap();
        let a = central_run(&original);
        let b = (central_run(&rotated) + shift) % m;
        prop_assert_eq!(original.runs()[a].matrix(), original.runs()[b].matrix());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fit_is_deterministic_and_respects_bounds(
        x in matrix(10, 2, 0.0, 1.0), seed in any::<u64>(),
    ) {
        let s = DenseSimilarity::full(&x * x.transpose()).unwrap();
        let cfg = SolverConfig::new(3.0, 60, 20, 1e-8, seed).unwrap();
        let a = fit(&s, 2, &cfg).unwrap();
        let b = fit(&s, 2, &cfg).unwrap();
        prop_assert!(a.embedding.is_nonnegative());
        prop_assert_eq!(a.embedding.matrix(), b.embedding.matrix());
        prop_assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn fit_reconstruction_scales_with_input(
        x in matrix(8, 2, 0.2, 1.0), gamma in 0.5f64..2.0, seed in 0u64..1000,
    ) {
        let base = &x * x.transpose();
        let cfg = SolverConfig::new(3.0, 3000, 50, 1e-12, seed)
            .unwrap()
            .with_inner_tol(1e-10)
            .unwrap();
        let a = fit(&DenseSimilarity::full(base.clone()).unwrap(), 2, &cfg).unwrap();
        let b = fit(&DenseSimilarity::full(&base * gamma).unwrap(), 2, &cfg).unwrap();
        let scaled = a.embedding.gram() * gamma;
        let err = (b.embedding.gram() - &scaled).norm() / scaled.norm();
        prop_assert!(err < 1e-3, "relative reconstruction gap {err}");
    }
}
