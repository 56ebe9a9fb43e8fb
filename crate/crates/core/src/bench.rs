//! Simulation benchmark: generate, fit SBR, sparsify, and score against a
//! single-λ ridge baseline. One CSV row per (scenario, seed).

use std::io::Write;
use std::time::Instant;

use crate::dataset::{Estimator, MultiSourceDataset, ShrinkageVector};
use crate::error::{Result, SbrError};
use crate::fit::posterior_mode;
use crate::kv::fmt_f64;
use crate::pipeline::{fit_prepared, prepare, FitOptions};
use crate::sim::{generate_scenario, metric_auc, metric_correlation, SimConfig, SimTruth};
use crate::ssbr::{adaptive_penalties, solve_relaxed, Control, KlContext, Penalty};
use crate::tuning::{tune, TuneConfig};

pub const CSV_HEADER: &str = "scenario,correlation,seed,n_train,p,estimator,lambda,ridge_lambda,\
corr_ridge,corr_sbr,corr_ssbr,corr_cssbr,sparsity_ssbr,sparsity_cssbr,auc_sbr,auc_ssbr,auc_cssbr,\
time_fit_s,time_sparsify_s";

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub scenario: String,
    pub correlation: String,
    pub seed: u64,
    pub n_train: usize,
    pub p: usize,
    pub estimator: Estimator,
    pub lambda: Vec<f64>,
    pub ridge_lambda: f64,
    pub corr_ridge: f64,
    pub corr_sbr: f64,
    pub corr_ssbr: f64,
    pub corr_cssbr: f64,
    pub sparsity_ssbr: f64,
    pub sparsity_cssbr: f64,
    pub auc_sbr: f64,
    pub auc_ssbr: f64,
    pub auc_cssbr: f64,
    pub time_fit_s: f64,
    pub time_sparsify_s: f64,
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        let lam = self.lambda.iter().map(|l| fmt_f64(*l)).collect::<Vec<_>>().join(";");
        let f = [
            self.ridge_lambda,
            self.corr_ridge,
            self.corr_sbr,
            self.corr_ssbr,
            self.corr_cssbr,
            self.sparsity_ssbr,
            self.sparsity_cssbr,
            self.auc_sbr,
            self.auc_ssbr,
            self.auc_cssbr,
            self.time_fit_s,
            self.time_sparsify_s,
        ]
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(",");
        format!(
            "{},{},{},{},{},{},{},{}",
            self.scenario, self.correlation, self.seed, self.n_train, self.p, self.estimator, lam, f
        )
    }
}

/// Re-inserts zeros for columns dropped before fitting so coefficients line
/// up with the truth.
fn expand_dropped(coef: &[f64], dims_fit: &[usize], dropped: &[(usize, usize)]) -> Vec<f64> {
    if dropped.is_empty() {
        return coef.to_vec();
    }
    let mut out = Vec::with_capacity(coef.len() + dropped.len());
    let mut off = 0;
    for (k, &pk) in dims_fit.iter().enumerate() {
        let mut gone: Vec<usize> = dropped.iter().filter(|(s, _)| *s == k).map(|(_, j)| *j).collect();
        gone.sort_unstable();
        let full = pk + gone.len();
        let mut it = coef[off..off + pk].iter();
        for j in 0..full {
            if gone.binary_search(&j).is_ok() {
                out.push(0.0);
            } else {
                out.push(*it.next().expect("kept column"));
            }
        }
        off += pk;
    }
    out
}

fn abs(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.abs()).collect()
}

/// Runs one replicate on an already generated scenario.
pub fn run_replicate(
    cfg: &SimConfig,
    label: (&str, &str),
    train: MultiSourceDataset,
    test: &MultiSourceDataset,
    truth: &SimTruth,
    estimator: Estimator,
) -> Result<BenchRow> {
    let t_fit = Instant::now();
    let (data, removed) = prepare(train, true)?;
    let opts = FitOptions {
        tune: TuneConfig {
            seed: cfg.seed,
            ..TuneConfig::with_estimator(estimator)
        },
        ..FitOptions::default()
    };
    let out = fit_prepared(data, removed, &opts)?;
    let time_fit_s = t_fit.elapsed().as_secs_f64();
    let fit = &out.fit;

    let pooled = out.cache.pooled();
    let ridge_tune = tune(
        &pooled,
        out.data.y(),
        &TuneConfig {
            seed: cfg.seed,
            ..TuneConfig::with_estimator(Estimator::Cv)
        },
    )?;
    let lr = ridge_tune.lambda_hat.get(0);
    let ridge_lambda = ShrinkageVector::new(vec![lr; out.data.k()], Estimator::Cv)?;
    let ridge = posterior_mode(&out.cache, &out.data, &ridge_lambda)?;

    let t_sp = Instant::now();
    let ctx = KlContext::from_fit(fit, Default::default())?;
    let alpha = Penalty::PerCoefficient(adaptive_penalties(fit, &fit.lambda)?);
    let ssbr = solve_relaxed(&ctx, &alpha, Control::None)?;
    let cssbr = solve_relaxed(&ctx, &alpha, Control::LogN)?;
    let time_sparsify_s = t_sp.elapsed().as_secs_f64();

    let blocks = test.blocks();
    let y = test.y();
    let corr = |coef: &[f64], f: &crate::fit::SbrFit| -> Result<f64> {
        let pred = f.predict_raw_with(coef, &blocks)?;
        // A fully sparsified model predicts a constant.
        Ok(metric_correlation(&pred, y).unwrap_or(0.0))
    };
    let dims = fit.source_dims.clone();
    let auc = |coef: &[f64]| metric_auc(&abs(&expand_dropped(coef, &dims, &fit.dropped_columns)), &truth.support);

    let mut ridge_fit = ridge;
    ridge_fit.dropped_columns = fit.dropped_columns.clone();
    Ok(BenchRow {
        scenario: label.0.to_string(),
        correlation: label.1.to_string(),
        seed: cfg.seed,
        n_train: cfg.n_train,
        p: cfg.p(),
        estimator,
        lambda: fit.lambda.values().to_vec(),
        ridge_lambda: lr,
        corr_ridge: corr(&ridge_fit.beta_hat, &ridge_fit)?,
        corr_sbr: corr(&fit.beta_hat, fit)?,
        corr_ssbr: corr(&ssbr.gamma_hat, fit)?,
        corr_cssbr: corr(&cssbr.gamma_hat, fit)?,
        sparsity_ssbr: ssbr.sparsity,
        sparsity_cssbr: cssbr.sparsity,
        auc_sbr: auc(&fit.beta_hat)?,
        auc_ssbr: auc(&ssbr.gamma_hat)?,
        auc_cssbr: auc(&cssbr.gamma_hat)?,
        time_fit_s,
        time_sparsify_s,
    })
}

/// Generates and scores one configuration.
pub fn run_config(cfg: &SimConfig, label: (&str, &str), estimator: Estimator) -> Result<BenchRow> {
    let (train, test, truth) = generate_scenario(cfg)?;
    run_replicate(cfg, label, train, &test, &truth, estimator)
}

/// Runs every config in turn, writing the header and one line per row.
pub fn run_grid<W: Write>(
    configs: &[(SimConfig, String, String)],
    estimator: Estimator,
    out: &mut W,
) -> Result<Vec<BenchRow>> {
    let io = |e: std::io::Error| SbrError::Io {
        path: "<bench output>".into(),
        source: e,
    };
    writeln!(out, "{CSV_HEADER}").map_err(io)?;
    let mut rows = Vec::with_capacity(configs.len());
    for (cfg, scen, corr) in configs {
        let row = run_config(cfg, (scen, corr), estimator)?;
        log::info!(
            "bench {scen}/{corr} seed={} corr_sbr={:.3} corr_ridge={:.3} sparsity_ssbr={:.4}",
            cfg.seed,
            row.corr_sbr,
            row.corr_ridge,
            row.sparsity_ssbr
        );
        writeln!(out, "{}", row.csv_line()).map_err(io)?;
        out.flush().map_err(io)?;
        rows.push(row);
    }
    Ok(rows)
}
