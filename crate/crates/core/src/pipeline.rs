//! End-to-end fitting from a raw dataset: constant-column handling,
//! standardization, Gram computation, tuning, posterior mode and variances.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::dataset::{Estimator, MultiSourceDataset, ShrinkageVector};
use crate::error::{Result, SbrError};
use crate::fit::{posterior_mode, posterior_variances, SbrFit};
use crate::gram::GramCache;
use crate::tuning::{tune, TuneConfig, TuneResult};

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub tune: TuneConfig,
    /// Fixed shrinkage vector; skips tuning when set.
    pub lambda: Option<Vec<f64>>,
    pub block_size: Option<usize>,
    pub drop_constant: bool,
    pub gram_cache_dir: Option<PathBuf>,
    pub variances: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tune: TuneConfig::default(),
            lambda: None,
            block_size: None,
            drop_constant: false,
            gram_cache_dir: None,
            variances: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageTimes {
    pub gram: Duration,
    pub tune: Duration,
    pub mode: Duration,
    pub variances: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.gram + self.tune + self.mode + self.variances
    }
}

pub struct FitOutcome {
    pub fit: SbrFit,
    pub tune: Option<TuneResult>,
    /// Standardized training data the fit was computed on.
    pub data: MultiSourceDataset,
    pub cache: GramCache,
    pub times: StageTimes,
}

/// Standardizes `raw` (dropping constant columns first when asked) and
/// returns the result with the removed `(source, column)` pairs.
pub fn prepare(raw: MultiSourceDataset, drop_constant: bool) -> Result<(MultiSourceDataset, Vec<(usize, usize)>)> {
    let (ds, removed) = if drop_constant {
        raw.drop_constant_columns()?
    } else {
        (raw, Vec::new())
    };
    if !removed.is_empty() {
        log::warn!("dropped {} constant columns", removed.len());
    }
    Ok((ds.standardize()?, removed))
}

pub fn fit_dataset(raw: MultiSourceDataset, opts: &FitOptions) -> Result<FitOutcome> {
    let (data, removed) = prepare(raw, opts.drop_constant)?;
    fit_prepared(data, removed, opts)
}

/// Fits an already standardized dataset.
pub fn fit_prepared(data: MultiSourceDataset, removed: Vec<(usize, usize)>, opts: &FitOptions) -> Result<FitOutcome> {
    if !data.is_standardized() {
        return Err(SbrError::Config("fit_prepared needs a standardized dataset".into()));
    }
    let mut times = StageTimes::default();
    let t = Instant::now();
    let cache = match &opts.gram_cache_dir {
        Some(dir) => GramCache::build_with_disk_cache(&data, dir)?,
        None => GramCache::build(&data),
    };
    times.gram = t.elapsed();

    let t = Instant::now();
    let (lambda, tune_result) = match &opts.lambda {
        Some(l) => {
            if l.len() != data.k() {
                return Err(SbrError::mismatch("lambda length", data.k(), l.len()));
            }
            (ShrinkageVector::new(l.clone(), Estimator::User)?, None)
        }
        None => {
            let r = tune(&cache, data.y(), &opts.tune)?;
            (r.lambda_hat.clone(), Some(r))
        }
    };
    times.tune = t.elapsed();

    let t = Instant::now();
    let mut fit = posterior_mode(&cache, &data, &lambda)?;
    fit.dropped_columns = removed;
    times.mode = t.elapsed();

    if opts.variances {
        let t = Instant::now();
        fit.var_diag = Some(posterior_variances(&cache, &data, &lambda, opts.block_size)?);
        times.variances = t.elapsed();
    }
    Ok(FitOutcome {
        fit,
        tune: tune_result,
        data,
        cache,
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn dropped_columns_are_skipped_at_prediction() {
        let x = Matrix::from_rows(&[
            vec![1.0, 5.0, 2.0],
            vec![2.0, 5.0, 1.0],
            vec![4.0, 5.0, 0.0],
            vec![3.0, 5.0, 3.0],
        ])
        .unwrap();
        let raw = MultiSourceDataset::from_blocks(vec![1.0, 2.0, 4.0, 2.5], vec![x.clone()]).unwrap();
        assert!(fit_dataset(raw.clone(), &FitOptions::default()).is_err());
        let opts = FitOptions {
            drop_constant: true,
            lambda: Some(vec![0.5]),
            ..FitOptions::default()
        };
        let out = fit_dataset(raw, &opts).unwrap();
        assert_eq!(out.fit.dropped_columns, vec![(0, 1)]);
        assert_eq!(out.fit.p(), 2);
        let full = out.fit.predict_raw(&[&x]).unwrap();
        let reduced = Matrix::from_fn(4, 2, |i, j| x.get(i, [0, 2][j]));
        let short = out.fit.predict_raw(&[&reduced]).unwrap();
        assert_eq!(full, short);
        assert!(out.fit.predict_raw(&[&Matrix::zeros(4, 4)]).is_err());
    }

    #[test]
    fn raw_prediction_matches_standardized_path() {
        let x = Matrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let y = vec![1.0, 0.0, 2.0, 3.0, -1.0, 0.5];
        let raw = MultiSourceDataset::from_blocks(y, vec![x.clone()]).unwrap();
        let opts = FitOptions {
            lambda: Some(vec![2.0]),
            ..FitOptions::default()
        };
        let out = fit_dataset(raw, &opts).unwrap();
        let z = out.data.source(0).x.clone();
        let std_pred = out.fit.predict(&[&z]).unwrap();
        let raw_pred = out.fit.predict_raw(&[&x]).unwrap();
        for (a, b) in std_pred.iter().zip(&raw_pred) {
            assert!((a * out.fit.y_sd + out.fit.y_mean - b).abs() < 1e-10);
        }
    }
}
