//! Empirical-Bayes tuning of the shrinkage vector: closed-form leave-one-out
//! CV, marginal likelihood, and MAP under an exponential prior centred on
//! the CV estimate. Optimization runs Nelder–Mead over `log λ`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Estimator, ShrinkageVector};
use crate::error::{Result, SbrError};
use crate::fit::log_marginal;
use crate::gram::{core_solve, CoreSolve, GramCache};
use crate::nelder_mead::{self, NelderMeadOptions};

/// Largest number of sources accepted by [`tune`].
pub const MAX_SOURCES: usize = 32;

#[derive(Debug, Clone)]
pub struct TuneConfig {
    pub estimator: Estimator,
    /// Box for `ln λ_k`.
    pub log_lambda_bounds: (f64, f64),
    pub restarts: usize,
    /// Relative tolerance on the objective.
    pub tolerance: f64,
    /// Evaluation budget per restart.
    pub max_evals: usize,
    pub seed: u64,
    pub record_trace: bool,
    /// Integrate out an intercept under a flat prior. Needed when `y` and the
    /// design are centered: the constant direction then carries no residual
    /// and the plain objectives are driven to `λ → 0`.
    pub intercept: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            estimator: Estimator::Map,
            log_lambda_bounds: (-12.0, 12.0),
            restarts: 5,
            tolerance: 1e-6,
            max_evals: 2000,
            seed: 0,
            record_trace: false,
            intercept: true,
        }
    }
}

impl TuneConfig {
    pub fn with_estimator(estimator: Estimator) -> Self {
        TuneConfig {
            estimator,
            ..TuneConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.log_lambda_bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(SbrError::Config(format!("invalid log-lambda bounds ({lo}, {hi})")));
        }
        if self.restarts == 0 {
            return Err(SbrError::Config("restarts must be >= 1".into()));
        }
        if self.estimator == Estimator::User {
            return Err(SbrError::Config("user-supplied lambda needs no tuning".into()));
        }
        Ok(())
    }
}

/// One objective evaluation recorded during tuning.
#[derive(Debug, Clone)]
pub struct TracePoint {
    pub stage: Estimator,
    pub lambda: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub lambda_hat: ShrinkageVector,
    /// Minimized value: RSS for CV, negative log marginal for ML, negative
    /// log posterior for MAP.
    pub objective_value: f64,
    pub evals_used: usize,
    pub converged: bool,
    /// `λ̂_CV` used as the prior mean (MAP only).
    pub lambda_cv: Option<ShrinkageVector>,
    pub trace: Option<Vec<TracePoint>>,
    /// Objective at the start of each restart.
    pub start_values: Vec<f64>,
}

/// Closed-form leave-one-out residual sum of squares,
/// `Σ_i (w_i / [(I + G_λ)⁻¹]_ii)²`.
pub fn cv_objective_core(core: &CoreSolve) -> Result<f64> {
    let diag = core.chol.inverse_diag();
    let mut rss = 0.0;
    for (w, d) in core.w_lambda.iter().zip(&diag) {
        if !(*d >= 1e-300) {
            return Err(SbrError::Numerical(format!(
                "inverse diagonal entry {d:e} too small for LOO residual"
            )));
        }
        let r = w / d;
        rss += r * r;
    }
    Ok(rss)
}

pub fn cv_objective(cache: &GramCache, y: &[f64], lambda: &ShrinkageVector) -> Result<f64> {
    let core = core_solve(&cache.assemble(lambda)?, y)?;
    cv_objective_core(&core)
}

/// `(I + G_λ)⁻¹` restricted to contrasts: the limit of
/// `(I + G_λ + c 11ᵀ)⁻¹` as `c → ∞`, which is what a flat prior on an
/// intercept leaves behind.
#[derive(Debug, Clone)]
pub struct InterceptAdjusted {
    /// `w' = w − u (1ᵀw)/s`
    pub w: Vec<f64>,
    /// `yᵀ w'`
    pub q: f64,
    /// `log |I + G_λ| + log s`
    pub logdet: f64,
    /// `u = (I + G_λ)⁻¹ 1`
    pub u: Vec<f64>,
    /// `s = 1ᵀ u`
    pub s: f64,
}

pub fn intercept_adjusted(core: &CoreSolve, y: &[f64]) -> Result<InterceptAdjusted> {
    let n = core.n();
    let u = core.chol.solve(&vec![1.0; n]);
    let s: f64 = u.iter().sum();
    if !(s > 0.0) {
        return Err(SbrError::Numerical(format!("1ᵀ(I+G)⁻¹1 = {s:e} is not positive")));
    }
    let c = core.w_lambda.iter().sum::<f64>() / s;
    let w: Vec<f64> = core.w_lambda.iter().zip(&u).map(|(w, u)| w - c * u).collect();
    let q = crate::matrix::dot(y, &w).max(0.0);
    Ok(InterceptAdjusted {
        w,
        q,
        logdet: core.logdet + s.ln(),
        u,
        s,
    })
}

/// Leave-one-out RSS of the model with an unpenalized intercept.
pub fn cv_objective_intercept(core: &CoreSolve, y: &[f64]) -> Result<f64> {
    let adj = intercept_adjusted(core, y)?;
    let diag = core.chol.inverse_diag();
    let mut rss = 0.0;
    for ((w, d), u) in adj.w.iter().zip(&diag).zip(&adj.u) {
        let d = d - u * u / adj.s;
        if !(d >= 1e-300) {
            return Err(SbrError::Numerical(format!(
                "adjusted inverse diagonal entry {d:e} too small for LOO residual"
            )));
        }
        rss += (w / d).powi(2);
    }
    Ok(rss)
}

/// Restricted log marginal likelihood with the intercept integrated out:
/// `−½ log|I + G_λ| − ½ log s − ((n − 1)/2) log q'`.
pub fn ml_objective_intercept(core: &CoreSolve, y: &[f64]) -> Result<f64> {
    let adj = intercept_adjusted(core, y)?;
    if !(adj.q > 0.0) {
        return Err(SbrError::Domain("restricted likelihood undefined for q = 0".into()));
    }
    let n = core.n() as f64;
    Ok(-0.5 * adj.logdet - 0.5 * (n - 1.0) * adj.q.ln())
}

/// Log marginal likelihood (to be maximized).
pub fn ml_objective(core: &CoreSolve, n: usize) -> Result<f64> {
    log_marginal(core, n)
}

/// Log posterior of λ under independent exponential priors with means
/// `λ̂_CV` (to be maximized).
pub fn map_objective(
    core: &CoreSolve,
    n: usize,
    lambda: &ShrinkageVector,
    lambda_cv: &ShrinkageVector,
) -> Result<f64> {
    if lambda.len() != lambda_cv.len() {
        return Err(SbrError::mismatch("lambda_cv length", lambda.len(), lambda_cv.len()));
    }
    Ok(ml_objective(core, n)? + map_log_prior(lambda.values(), lambda_cv.values())?)
}

/// `−Σ_k λ_k / λ̂_{k,CV}`.
pub fn map_log_prior(lambda: &[f64], lambda_cv: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (l, c) in lambda.iter().zip(lambda_cv) {
        if !(*c > 0.0) {
            return Err(SbrError::Domain(format!("prior mean lambda_cv must be > 0, got {c}")));
        }
        s -= l / c;
    }
    Ok(s)
}

/// Objective in minimization form for one estimator.
struct Objective<'a> {
    cache: &'a GramCache,
    y: &'a [f64],
    estimator: Estimator,
    lambda_cv: Option<Vec<f64>>,
    intercept: bool,
}

impl Objective<'_> {
    fn eval_lambda(&self, lambda: &[f64]) -> f64 {
        let run = || -> Result<f64> {
            let core = core_solve(&self.cache.assemble_raw(lambda)?, self.y)?;
            let n = self.y.len();
            let ml = |core: &CoreSolve| {
                if self.intercept {
                    ml_objective_intercept(core, self.y)
                } else {
                    ml_objective(core, n)
                }
            };
            match self.estimator {
                Estimator::Cv if self.intercept => cv_objective_intercept(&core, self.y),
                Estimator::Cv => cv_objective_core(&core),
                Estimator::Ml => Ok(-ml(&core)?),
                Estimator::Map => {
                    let cv = self.lambda_cv.as_deref().expect("MAP needs lambda_cv");
                    Ok(-(ml(&core)? + map_log_prior(lambda, cv)?))
                }
                Estimator::User => unreachable!("validated"),
            }
        };
        run().unwrap_or(f64::INFINITY)
    }
}

/// Tunes λ for the configured estimator. MAP first runs a CV tune to obtain
/// the prior means.
pub fn tune(cache: &GramCache, y: &[f64], cfg: &TuneConfig) -> Result<TuneResult> {
    cfg.validate()?;
    let k = cache.k();
    if k == 0 || k > MAX_SOURCES {
        return Err(SbrError::Config(format!("tuning supports 1..={MAX_SOURCES} sources, got {k}")));
    }
    if y.len() != cache.n() {
        return Err(SbrError::mismatch("response length", cache.n(), y.len()));
    }
    if cfg.estimator == Estimator::Map {
        let cv = tune_single(cache, y, cfg, Estimator::Cv, None)?;
        let lambda_cv = cv.lambda_hat.clone();
        let mut map = tune_single(cache, y, cfg, Estimator::Map, Some(lambda_cv.values().to_vec()))?;
        map.evals_used += cv.evals_used;
        map.converged &= cv.converged;
        if let (Some(mut t_cv), Some(t_map)) = (cv.trace, map.trace.take()) {
            t_cv.extend(t_map);
            map.trace = Some(t_cv);
        }
        map.lambda_cv = Some(lambda_cv);
        return Ok(map);
    }
    tune_single(cache, y, cfg, cfg.estimator, None)
}

fn restart_points(k: usize, cfg: &TuneConfig) -> Vec<Vec<f64>> {
    let (lo, hi) = cfg.log_lambda_bounds;
    let mut starts = vec![vec![0.0f64.clamp(lo, hi); k]];
    let m = cfg.restarts - 1;
    if m == 0 {
        return starts;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Latin hypercube: one point per stratum in every coordinate.
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut rng);
        columns.push(
            strata
                .into_iter()
                .map(|s| {
                    let u: f64 = rng.random();
                    lo + (hi - lo) * (s as f64 + u) / m as f64
                })
                .collect(),
        );
    }
    for r in 0..m {
        starts.push(columns.iter().map(|c| c[r]).collect());
    }
    starts
}

fn tune_single(
    cache: &GramCache,
    y: &[f64],
    cfg: &TuneConfig,
    estimator: Estimator,
    lambda_cv: Option<Vec<f64>>,
) -> Result<TuneResult> {
    let k = cache.k();
    let objective = Objective {
        cache,
        y,
        estimator,
        lambda_cv,
        intercept: cfg.intercept,
    };
    let (lo, hi) = cfg.log_lambda_bounds;
    let opts = NelderMeadOptions {
        ftol: cfg.tolerance,
        max_evals: cfg.max_evals,
        ..NelderMeadOptions::new(vec![lo; k], vec![hi; k])
    };
    let mut trace = cfg.record_trace.then(Vec::new);
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut evals_used = 0;
    let mut start_values = Vec::with_capacity(cfg.restarts);
    for start in restart_points(k, cfg) {
        let f_log = |x: &[f64]| {
            let lambda: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            let v = objective.eval_lambda(&lambda);
            if let Some(t) = trace.as_mut() {
                t.push(TracePoint {
                    stage: estimator,
                    lambda,
                    objective: v,
                });
            }
            v
        };
        start_values.push(objective.eval_lambda(&start.iter().map(|v| v.exp()).collect::<Vec<_>>()));
        let r = nelder_mead::minimize(f_log, &start, &opts);
        evals_used += r.evals;
        let better = match &best {
            None => true,
            Some((bx, bf, _)) => r.f < *bf || (r.f == *bf && lexicographic_less(&r.x, bx)),
        };
        if better {
            best = Some((r.x, r.f, r.converged));
        }
    }
    let (x, f, converged) = best.expect("at least one restart");
    if !f.is_finite() {
        return Err(SbrError::Numerical(format!(
            "{estimator} objective was non-finite at every evaluated lambda"
        )));
    }
    if !converged {
        log::warn!("{estimator} tuning hit the evaluation budget before converging");
    }
    Ok(TuneResult {
        lambda_hat: ShrinkageVector::from_log(&x, estimator)?,
        objective_value: f,
        evals_used,
        converged,
        lambda_cv: None,
        trace,
        start_values,
    })
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// `true` when any λ̂_k sits on the configured box edge.
pub fn on_bound(lambda: &ShrinkageVector, cfg: &TuneConfig) -> Vec<usize> {
    let (lo, hi) = cfg.log_lambda_bounds;
    lambda
        .values()
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            let ll = l.ln();
            (ll - hi).abs() < 1e-6 || (ll - lo).abs() < 1e-6
        })
        .map(|(k, _)| k)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn cache_from(grams: Vec<Matrix>) -> GramCache {
        let dims = vec![1; grams.len()];
        GramCache::from_grams(grams, dims).unwrap()
    }

    #[test]
    fn cv_with_zero_gram_is_sum_of_squares() {
        let cache = cache_from(vec![Matrix::zeros(3, 3)]);
        let y = [1.0, -2.0, 0.5];
        let v = cv_objective(&cache, &y, &ShrinkageVector::user(vec![1.0]).unwrap()).unwrap();
        assert!((v - 5.25).abs() < 1e-14);
    }

    #[test]
    fn cv_is_quadratic_in_y() {
        let x = Matrix::from_fn(5, 3, |i, j| ((i + 2 * j) % 4) as f64 - 1.5);
        let cache = cache_from(vec![crate::gram::compute_gram(&x)]);
        let l = ShrinkageVector::user(vec![0.8]).unwrap();
        let y = [0.3, -1.0, 2.0, 0.1, -0.7];
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let a = cv_objective(&cache, &y, &l).unwrap();
        let b = cv_objective(&cache, &y2, &l).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn map_penalty_at_cv_is_minus_k() {
        let cv = [0.3, 7.0, 2.0];
        assert!((map_log_prior(&cv, &cv).unwrap() + 3.0).abs() < 1e-15);
        assert!(map_log_prior(&[1e-300], &[1.0]).unwrap().abs() < 1e-299);
        assert!(map_log_prior(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn restart_points_are_latin_hypercube() {
        let cfg = TuneConfig {
            restarts: 6,
            seed: 9,
            ..TuneConfig::default()
        };
        let pts = restart_points(2, &cfg);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![0.0, 0.0]);
        for d in 0..2 {
            let mut strata: Vec<usize> = pts[1..]
                .iter()
                .map(|p| (((p[d] + 12.0) / 24.0) * 5.0).floor() as usize)
                .collect();
            strata.sort();
            assert_eq!(strata, vec![0, 1, 2, 3, 4]);
        }
        assert_eq!(pts, restart_points(2, &cfg));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TuneConfig::default();
        cfg.log_lambda_bounds = (1.0, 1.0);
        assert!(cfg.validate().is_err());
        cfg = TuneConfig {
            restarts: 0,
            ..TuneConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
