mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sbr::fit::fit_with_variances;
use sbr::ssbr::{
    adaptive_penalties, build_svd_context, dense_precision, solve_general, solve_general_dense, solve_relaxed,
    CVariant, Control, KlContext, Penalty,
};
use sbr::{GramCache, MultiSourceDataset, SbrFit, ShrinkageVector};

fn setup(seed: u64, n: usize, dims: &[usize], lambda: &[f64]) -> (MultiSourceDataset, KlContext, SbrFit) {
    let mut r = rng(seed);
    let ds = random_dataset(&mut r, n, dims).standardize().unwrap();
    let cache = GramCache::build(&ds);
    let l = ShrinkageVector::user(lambda.to_vec()).unwrap();
    let fit = fit_with_variances(&cache, &ds, &l, None).unwrap();
    let ctx = build_svd_context(&cache, &ds, &l, &fit, CVariant::Integrated).unwrap();
    (ds, ctx, fit)
}

/// `c (XᵀX + Λ)` built directly from the standardized design.
fn oracle_q(ds: &MultiSourceDataset, lambda: &[f64], c: f64) -> DMatrix<f64> {
    let (x, w) = dense_design(&ds.blocks(), lambda);
    let mut q = x.transpose() * &x;
    for (j, wj) in w.iter().enumerate() {
        q[(j, j)] += wj;
    }
    q * c
}

fn objective(q: &DMatrix<f64>, beta: &DVector<f64>, alpha: &[f64], g: &DVector<f64>) -> f64 {
    let e = g - beta;
    0.5 * e.dot(&(q * &e)) + g.iter().zip(alpha).map(|(v, a)| a * v.abs()).sum::<f64>()
}

/// Accelerated proximal gradient from a given start.
fn fista(q: &DMatrix<f64>, beta: &DVector<f64>, alpha: &[f64], start: DVector<f64>) -> DVector<f64> {
    let step = 1.0 / q.symmetric_eigenvalues().max();
    let prox = |v: DVector<f64>| {
        DVector::from_iterator(
            v.len(),
            v.iter()
                .zip(alpha)
                .map(|(x, a)| x.signum() * (x.abs() - step * a).max(0.0)),
        )
    };
    let mut x = start.clone();
    let mut z = start;
    let mut t = 1.0f64;
    for _ in 0..20_000 {
        let grad = q * (&z - beta);
        let xn = prox(&z - grad * step);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        t = tn;
    }
    x
}

#[test]
fn general_matches_multistart_proximal_oracle() {
    for seed in 0..4u64 {
        let lambda = [0.8, 2.5];
        let (ds, ctx, _) = setup(seed, 4, &[2, 4], &lambda);
        let q = oracle_q(&ds, &lambda, ctx.c_n_lambda);
        let beta = nav(&ctx.beta_hat);
        let amax = ctx.alpha_max().unwrap();
        let alpha: Vec<f64> = (0..6).map(|j| amax * (0.05 + 0.1 * j as f64)).collect();
        let sol = solve_general(&ctx, &Penalty::PerCoefficient(alpha.clone()), None).unwrap();
        let mut r = rng(1000 + seed);
        let mut best: Option<(f64, DVector<f64>)> = None;
        for _ in 0..100 {
            let start = DVector::from_vec(randn_vec(&mut r, 6)) * 2.0;
            let g = fista(&q, &beta, &alpha, start);
            let f = objective(&q, &beta, &alpha, &g);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, g));
            }
        }
        let (_, g) = best.unwrap();
        let d = max_abs_diff(&sol.gamma_hat, g.as_slice());
        assert!(d < 1e-5, "seed {seed}: max diff {d}");
    }
}

#[test]
fn low_rank_and_dense_general_agree() {
    for (seed, dims) in [(1u64, vec![10usize, 25]), (2, vec![50]), (3, vec![5, 5, 30])] {
        let lambda: Vec<f64> = (0..dims.len()).map(|k| 0.5 + k as f64).collect();
        let (ds, ctx, fit) = setup(seed, 15, &dims, &lambda);
        let prec = dense_precision(&ds, &fit.lambda).unwrap();
        for pen in [
            Penalty::PerCoefficient(adaptive_penalties(&fit, &fit.lambda).unwrap()),
            Penalty::Scalar(0.3 * ctx.alpha_max().unwrap()),
        ] {
            let a = solve_general(&ctx, &pen, None).unwrap();
            let b = solve_general_dense(&ctx, &prec, &pen, None).unwrap();
            let d = max_abs_diff(&a.gamma_hat, &b.gamma_hat);
            assert!(d < 1e-6, "seed {seed}: {d}");
        }
    }
}

/// Minimizes `(c / 2v)(b − γ)² + t|γ|` by golden section on the segment
/// between 0 and b, then compares with γ = 0.
fn golden_scalar(b: f64, v: f64, c: f64, pen: f64) -> f64 {
    let f = |g: f64| 0.5 * c / v * (b - g).powi(2) + pen * g.abs();
    let (mut lo, mut hi) = if b >= 0.0 { (0.0, b) } else { (b, 0.0) };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let g = 0.5 * (lo + hi);
    if f(0.0) <= f(g) {
        0.0
    } else {
        g
    }
}

#[test]
fn relaxed_matches_coordinatewise_minimization() {
    let (_, ctx, fit) = setup(5, 20, &[8, 40], &[1.5, 0.7]);
    let v = fit.var_diag.as_ref().unwrap();
    for control in [Control::None, Control::LogN, Control::SqrtN] {
        let alpha = adaptive_penalties(&fit, &fit.lambda).unwrap();
        let sol = solve_relaxed(&ctx, &Penalty::PerCoefficient(alpha.clone()), control).unwrap();
        let f_n = control.factor(ctx.n);
        for j in 0..ctx.p() {
            let g = golden_scalar(ctx.beta_hat[j], v[j], ctx.c_n_lambda, alpha[j] * f_n);
            assert!((g - sol.gamma_hat[j]).abs() < 1e-8, "j={j}: {g} vs {}", sol.gamma_hat[j]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn relaxed_preserves_sign_and_shrinks(seed in 0u64..10_000, scale in 0.01f64..20.0) {
        let (_, ctx, fit) = setup(seed, 12, &[6, 20], &[0.5 + (seed % 7) as f64, 1.0]);
        let alpha: Vec<f64> = adaptive_penalties(&fit, &fit.lambda).unwrap().iter().map(|a| a * scale).collect();
        let sol = solve_relaxed(&ctx, &Penalty::PerCoefficient(alpha), Control::LogN).unwrap();
        for (g, b) in sol.gamma_hat.iter().zip(&ctx.beta_hat) {
            if *g != 0.0 {
                prop_assert_eq!(g.signum(), b.signum());
                prop_assert!(g.abs() < b.abs());
            }
        }
        prop_assert!((sol.sparsity - sol.nonzero_count as f64 / ctx.p() as f64).abs() < 1e-15);
    }

    #[test]
    fn sparsity_is_monotone_in_penalty_scale(seed in 0u64..10_000, s1 in 0.01f64..5.0, s2 in 0.01f64..5.0) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let (_, ctx, fit) = setup(seed, 10, &[5, 15], &[1.0, 2.0]);
        let base = Penalty::PerCoefficient(adaptive_penalties(&fit, &fit.lambda).unwrap());
        let r_lo = solve_relaxed(&ctx, &base.scaled(lo), Control::None).unwrap();
        let r_hi = solve_relaxed(&ctx, &base.scaled(hi), Control::None).unwrap();
        prop_assert!(r_hi.nonzero_count <= r_lo.nonzero_count);
        let g_lo = solve_general(&ctx, &base.scaled(lo), None).unwrap();
        let g_hi = solve_general(&ctx, &base.scaled(hi), None).unwrap();
        prop_assert!(g_hi.nonzero_count <= g_lo.nonzero_count,
            "general: {} at {} vs {} at {}", g_hi.nonzero_count, hi, g_lo.nonzero_count, lo);
    }

    #[test]
    fn controlled_is_never_denser(seed in 0u64..10_000, n in 3usize..30) {
        let (_, ctx, fit) = setup(seed, n, &[4, 25], &[0.7, 3.0]);
        let alpha = Penalty::PerCoefficient(adaptive_penalties(&fit, &fit.lambda).unwrap());
        let plain = solve_relaxed(&ctx, &alpha, Control::None).unwrap();
        let ctrl = solve_relaxed(&ctx, &alpha, Control::LogN).unwrap();
        prop_assert!(ctrl.sparsity <= plain.sparsity);
    }
}
