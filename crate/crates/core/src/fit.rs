//! Dense SBR inference in `n × n` space: posterior mode, prediction,
//! posterior variance diagonal, σ² posterior and the log marginal likelihood.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{ColumnStats, Estimator, MultiSourceDataset, ShrinkageVector};
use crate::error::{Result, SbrError};
use crate::gram::{core_solve, CoreSolve, GramCache};
use crate::kv::{fmt_f64_list, KvBlock, KvMap, END_HEADER};
use crate::matrix::{dot, Matrix};

/// Dense posterior summary for a given shrinkage vector.
#[derive(Debug, Clone)]
pub struct SbrFit {
    /// Posterior mode, concatenated in source order.
    pub beta_hat: Vec<f64>,
    pub source_dims: Vec<usize>,
    pub source_names: Vec<String>,
    pub n: usize,
    /// Inverse-gamma shape of `σ² | y`.
    pub sigma2_shape: f64,
    /// Inverse-gamma scale of `σ² | y`.
    pub sigma2_scale: f64,
    pub q_lambda: f64,
    /// `None` when `q_λ = 0` (zero response).
    pub log_marginal: Option<f64>,
    pub lambda: ShrinkageVector,
    pub w_lambda: Vec<f64>,
    /// Diagonal of `Σ_β` (not scaled by σ²), when computed.
    pub var_diag: Option<Vec<f64>>,
    pub column_stats: Vec<ColumnStats>,
    pub y_mean: f64,
    pub y_sd: f64,
    /// `(source, original column)` pairs removed as constant before fitting.
    pub dropped_columns: Vec<(usize, usize)>,
}

impl SbrFit {
    pub fn p(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn k(&self) -> usize {
        self.source_dims.len()
    }

    /// Offsets of each source inside the concatenated coefficient vector.
    pub fn offsets(&self) -> Vec<usize> {
        source_offsets(&self.source_dims)
    }

    pub fn beta_block(&self, k: usize) -> &[f64] {
        let off = self.offsets();
        &self.beta_hat[off[k]..off[k] + self.source_dims[k]]
    }

    /// `Σ_k X_kᵖʳᵉᵈ β̂_k` on the standardized scale.
    pub fn predict(&self, x_pred: &[&Matrix]) -> Result<Vec<f64>> {
        check_pred_blocks(&self.source_dims, &self.source_names, x_pred)?;
        let m = x_pred.first().map_or(0, |x| x.rows());
        let mut out = vec![0.0; m];
        for (k, x) in x_pred.iter().enumerate() {
            let b = self.beta_block(k);
            for (i, o) in out.iter_mut().enumerate() {
                *o += dot(x.row(i), b);
            }
        }
        Ok(out)
    }

    /// Predicts from unstandardized blocks, applying the stored training
    /// column statistics and mapping the result back to the response scale.
    pub fn predict_raw(&self, x_raw: &[&Matrix]) -> Result<Vec<f64>> {
        self.predict_raw_with(&self.beta_hat, x_raw)
    }

    /// [`predict_raw`](Self::predict_raw) with another coefficient vector on
    /// the standardized scale (for example a sparsified one). The column
    /// transform is folded into the coefficients so no copy of the blocks is
    /// made.
    pub fn predict_raw_with(&self, coef: &[f64], x_raw: &[&Matrix]) -> Result<Vec<f64>> {
        if coef.len() != self.p() {
            return Err(SbrError::mismatch("coefficient length", self.p(), coef.len()));
        }
        // Blocks may come at their original width when columns were dropped.
        let kept = self.kept_columns(x_raw)?;
        let m = x_raw.first().map_or(0, |x| x.rows());
        let mut out = vec![0.0; m];
        let offsets = self.offsets();
        let mut shift = 0.0;
        for (k, x) in x_raw.iter().enumerate() {
            let st = &self.column_stats[k];
            let b: Vec<f64> = coef[offsets[k]..offsets[k] + self.source_dims[k]]
                .iter()
                .zip(&st.sd)
                .map(|(c, s)| c / s)
                .collect();
            shift += dot(&b, &st.mean);
            match &kept[k] {
                None => {
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += dot(x.row(i), &b);
                    }
                }
                Some(idx) => {
                    for (i, o) in out.iter_mut().enumerate() {
                        let row = x.row(i);
                        *o += idx.iter().zip(&b).map(|(&j, c)| row[j] * c).sum::<f64>();
                    }
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|v| (v - shift) * self.y_sd + self.y_mean)
            .collect())
    }

    /// Per source: `None` when the block already has the fitted width, or the
    /// original indices of the kept columns when it has the pre-drop width.
    fn kept_columns(&self, x_raw: &[&Matrix]) -> Result<Vec<Option<Vec<usize>>>> {
        if self.dropped_columns.is_empty() {
            check_pred_blocks(&self.source_dims, &self.source_names, x_raw)?;
            return Ok(vec![None; self.k()]);
        }
        if x_raw.len() != self.k() {
            return Err(SbrError::mismatch("number of prediction sources", self.k(), x_raw.len()));
        }
        let m = x_raw.first().map_or(0, |b| b.rows());
        let mut out = Vec::with_capacity(self.k());
        for (k, x) in x_raw.iter().enumerate() {
            let dropped: Vec<usize> = self
                .dropped_columns
                .iter()
                .filter(|(s, _)| *s == k)
                .map(|(_, j)| *j)
                .collect();
            let full = self.source_dims[k] + dropped.len();
            let name = &self.source_names[k];
            if x.rows() != m {
                return Err(SbrError::mismatch(format!("rows of prediction source '{name}'"), m, x.rows()));
            }
            if x.cols() == self.source_dims[k] {
                out.push(None);
            } else if x.cols() == full {
                out.push(Some((0..full).filter(|j| !dropped.contains(j)).collect()));
            } else {
                return Err(SbrError::mismatch(
                    format!("columns of prediction source '{name}'"),
                    self.source_dims[k],
                    x.cols(),
                ));
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| SbrError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| SbrError::io(path, e))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut h = KvBlock::new();
        h.push("format", "sbr-fit-1")
            .push("n", self.n)
            .push("p", self.p())
            .push("K", self.k())
            .push("sources", self.source_names.join(","))
            .push(
                "source_dims",
                self.source_dims
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            )
            .push("lambda", fmt_f64_list(self.lambda.values()))
            .push("estimator", self.lambda.estimator())
            .push_f64("a", self.sigma2_shape)
            .push_f64("b", self.sigma2_scale)
            .push_f64("q_lambda", self.q_lambda)
            .push(
                "log_marginal",
                self.log_marginal
                    .map_or_else(|| "none".to_string(), crate::kv::fmt_f64),
            )
            .push_f64("y_mean", self.y_mean)
            .push_f64("y_sd", self.y_sd)
            .push("has_var", self.var_diag.is_some())
            .push(
                "dropped_columns",
                self.dropped_columns
                    .iter()
                    .map(|(k, j)| format!("{k}:{j}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        w.write_all(h.render().as_bytes())?;
        writeln!(w, "{END_HEADER}")?;
        column(&self.beta_hat).write_sbrm(w)?;
        column(&self.w_lambda).write_sbrm(w)?;
        let p = self.p();
        let mut stats = Matrix::zeros(2, p);
        let mut j = 0;
        for st in &self.column_stats {
            for (m, s) in st.mean.iter().zip(&st.sd) {
                stats.set(0, j, *m);
                stats.set(1, j, *s);
                j += 1;
            }
        }
        stats.write_sbrm(w)?;
        if let Some(v) = &self.var_diag {
            column(v).write_sbrm(w)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SbrFit> {
        let file = File::open(path).map_err(|e| SbrError::io(path, e))?;
        let mut r = BufReader::new(file);
        let h = KvMap::read_header(&mut r)?;
        if h.require("format")? != "sbr-fit-1" {
            return Err(SbrError::Format("not an sbr fit file".into()));
        }
        let n: usize = h.parse_value("n")?;
        let p: usize = h.parse_value("p")?;
        let source_dims: Vec<usize> = h.parse_list("source_dims")?;
        let source_names: Vec<String> = h.parse_list("sources")?;
        let estimator: Estimator = h.require("estimator")?.parse()?;
        let lambda = ShrinkageVector::new(h.parse_list("lambda")?, estimator)?;
        if source_dims.iter().sum::<usize>() != p || source_dims.len() != lambda.len() {
            return Err(SbrError::Format("inconsistent fit header".into()));
        }
        let log_marginal = match h.require("log_marginal")? {
            "none" => None,
            v => Some(
                v.parse()
                    .map_err(|_| SbrError::Format("bad log_marginal".into()))?,
            ),
        };
        let beta_hat = Matrix::read_sbrm(&mut r)?.into_vec();
        let w_lambda = Matrix::read_sbrm(&mut r)?.into_vec();
        let stats = Matrix::read_sbrm(&mut r)?;
        if beta_hat.len() != p || w_lambda.len() != n || stats.shape() != (2, p) {
            return Err(SbrError::Format("fit payload does not match header".into()));
        }
        let var_diag = if h.parse_value::<bool>("has_var")? {
            Some(Matrix::read_sbrm(&mut r)?.into_vec())
        } else {
            None
        };
        let mut column_stats = Vec::with_capacity(source_dims.len());
        let mut off = 0;
        for &pk in &source_dims {
            column_stats.push(ColumnStats {
                mean: stats.row(0)[off..off + pk].to_vec(),
                sd: stats.row(1)[off..off + pk].to_vec(),
            });
            off += pk;
        }
        Ok(SbrFit {
            beta_hat,
            source_dims,
            source_names,
            n,
            sigma2_shape: h.parse_value("a")?,
            sigma2_scale: h.parse_value("b")?,
            q_lambda: h.parse_value("q_lambda")?,
            log_marginal,
            lambda,
            w_lambda,
            var_diag,
            column_stats,
            y_mean: h.parse_value("y_mean")?,
            y_sd: h.parse_value("y_sd")?,
            dropped_columns: parse_dropped(h.get("dropped_columns").unwrap_or(""))?,
        })
    }
}

fn parse_dropped(raw: &str) -> Result<Vec<(usize, usize)>> {
    raw.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let bad = || SbrError::Format(format!("bad dropped column entry '{t}'"));
            let (k, j) = t.trim().split_once(':').ok_or_else(bad)?;
            Ok((k.parse().map_err(|_| bad())?, j.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn column(v: &[f64]) -> Matrix {
    Matrix::from_vec(v.len(), 1, v.to_vec()).expect("finite values")
}

pub(crate) fn source_offsets(dims: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for &p in dims {
        off.push(acc);
        acc += p;
    }
    off
}

fn check_pred_blocks(dims: &[usize], names: &[String], x: &[&Matrix]) -> Result<()> {
    if x.len() != dims.len() {
        return Err(SbrError::mismatch("number of prediction sources", dims.len(), x.len()));
    }
    let m = x.first().map_or(0, |b| b.rows());
    for (k, b) in x.iter().enumerate() {
        let name = names.get(k).map_or_else(|| format!("#{k}"), Clone::clone);
        if b.cols() != dims[k] {
            return Err(SbrError::mismatch(
                format!("columns of prediction source '{name}'"),
                dims[k],
                b.cols(),
            ));
        }
        if b.rows() != m {
            return Err(SbrError::mismatch(format!("rows of prediction source '{name}'"), m, b.rows()));
        }
    }
    Ok(())
}

fn check_compatible(cache: &GramCache, ds: &MultiSourceDataset, lambda: &ShrinkageVector) -> Result<()> {
    if cache.n() != ds.n() {
        return Err(SbrError::mismatch("gram cache n", ds.n(), cache.n()));
    }
    if cache.source_dims() != ds.source_dims().as_slice() {
        return Err(SbrError::Domain("gram cache does not match dataset sources".into()));
    }
    if lambda.len() != ds.k() {
        return Err(SbrError::mismatch("lambda length", ds.k(), lambda.len()));
    }
    Ok(())
}

/// Factors `I + G_λ` for the dataset response.
pub fn solve_core(cache: &GramCache, y: &[f64], lambda: &ShrinkageVector) -> Result<CoreSolve> {
    let g = cache.assemble(lambda)?;
    core_solve(&g, y)
}

/// Posterior mode `β̂_k = λ_k⁻¹ X_kᵀ w_λ` plus the σ² posterior and marginal
/// likelihood. `var_diag` is left empty.
pub fn posterior_mode(
    cache: &GramCache,
    ds: &MultiSourceDataset,
    lambda: &ShrinkageVector,
) -> Result<SbrFit> {
    check_compatible(cache, ds, lambda)?;
    let core = solve_core(cache, ds.y(), lambda)?;
    let mut beta_hat = Vec::with_capacity(ds.p());
    for (s, &l) in ds.sources().iter().zip(lambda.values()) {
        let mut b = s.x.t_matvec(&core.w_lambda);
        b.iter_mut().for_each(|v| *v /= l);
        beta_hat.extend(b);
    }
    let n = ds.n();
    let (a, b) = sigma2_posterior(&core, n);
    let (y_mean, y_sd) = ds.y_stats();
    Ok(SbrFit {
        beta_hat,
        source_dims: ds.source_dims(),
        source_names: ds.sources().iter().map(|s| s.name.clone()).collect(),
        n,
        sigma2_shape: a,
        sigma2_scale: b,
        q_lambda: core.q_lambda,
        log_marginal: log_marginal(&core, n).ok(),
        lambda: lambda.clone(),
        w_lambda: core.w_lambda,
        var_diag: None,
        column_stats: ds.sources().iter().map(|s| s.stats.clone()).collect(),
        y_mean,
        y_sd,
        dropped_columns: Vec::new(),
    })
}

/// Prediction through training cross-products:
/// `ŷ = [Σ_k λ_k⁻¹ X_kᵖʳᵉᵈ X_kᵀ] w_λ`.
pub fn predict_from_training(
    ds: &MultiSourceDataset,
    w_lambda: &[f64],
    lambda: &ShrinkageVector,
    x_pred: &[&Matrix],
) -> Result<Vec<f64>> {
    let names: Vec<String> = ds.sources().iter().map(|s| s.name.clone()).collect();
    check_pred_blocks(&ds.source_dims(), &names, x_pred)?;
    if w_lambda.len() != ds.n() {
        return Err(SbrError::mismatch("w_lambda length", ds.n(), w_lambda.len()));
    }
    let m = x_pred.first().map_or(0, |x| x.rows());
    let mut out = vec![0.0; m];
    for (k, xp) in x_pred.iter().enumerate() {
        let xk = &ds.source(k).x;
        let inv = 1.0 / lambda.get(k);
        for (i, o) in out.iter_mut().enumerate() {
            let row = xp.row(i);
            let kernel_w: f64 = (0..ds.n()).map(|t| dot(row, xk.row(t)) * w_lambda[t]).sum();
            *o += inv * kernel_w;
        }
    }
    Ok(out)
}

/// Default block width: `⌈p_k / (4·workers)⌉`, capped so a block stays small.
pub fn default_block_size(p_k: usize) -> usize {
    let workers = rayon::current_num_threads().max(1);
    p_k.div_ceil(4 * workers).clamp(1, 4096)
}

/// Diagonal of `Σ_β` (unscaled by σ²), computed block by block:
/// `v_j = λ_k⁻¹ − λ_k⁻² ‖L⁻¹ x_j‖²` with `L Lᵀ = I + G_λ`.
///
/// `block_size = None` uses [`default_block_size`] per source.
pub fn posterior_variances(
    cache: &GramCache,
    ds: &MultiSourceDataset,
    lambda: &ShrinkageVector,
    block_size: Option<usize>,
) -> Result<Vec<f64>> {
    check_compatible(cache, ds, lambda)?;
    if block_size == Some(0) {
        return Err(SbrError::Config("block_size must be >= 1".into()));
    }
    let core = solve_core(cache, ds.y(), lambda)?;
    let mut out = Vec::with_capacity(ds.p());
    for (s, &l) in ds.sources().iter().zip(lambda.values()) {
        let p = s.p();
        let b = block_size.unwrap_or_else(|| default_block_size(p));
        let starts: Vec<usize> = (0..p).step_by(b).collect();
        let inv = 1.0 / l;
        let parts: Vec<Vec<f64>> = starts
            .par_iter()
            .map(|&c0| {
                let c1 = (c0 + b).min(p);
                let mut z = s.x.column_range(c0, c1);
                core.chol.forward_rows_in_place(&mut z);
                let width = c1 - c0;
                let mut norms = vec![0.0; width];
                for i in 0..z.rows() {
                    for (acc, v) in norms.iter_mut().zip(z.row(i)) {
                        *acc += v * v;
                    }
                }
                norms.into_iter().map(|ss| inv - inv * inv * ss).collect()
            })
            .collect();
        for part in parts {
            out.extend(part);
        }
    }
    Ok(out)
}

/// `−½ log|I + G_λ| − (n/2) log q_λ`, the λ-dependent part of the log
/// marginal likelihood.
pub fn log_marginal(core: &CoreSolve, n: usize) -> Result<f64> {
    if !(core.q_lambda > 0.0) {
        return Err(SbrError::Domain("log marginal undefined for q_lambda = 0".into()));
    }
    Ok(-0.5 * core.logdet - 0.5 * n as f64 * core.q_lambda.ln())
}

/// Shape and scale of the inverse-gamma posterior of σ².
pub fn sigma2_posterior(core: &CoreSolve, n: usize) -> (f64, f64) {
    (n as f64 / 2.0, core.q_lambda / 2.0)
}

/// Runs [`posterior_mode`] and attaches [`posterior_variances`].
pub fn fit_with_variances(
    cache: &GramCache,
    ds: &MultiSourceDataset,
    lambda: &ShrinkageVector,
    block_size: Option<usize>,
) -> Result<SbrFit> {
    let mut fit = posterior_mode(cache, ds, lambda)?;
    fit.var_diag = Some(posterior_variances(cache, ds, lambda, block_size)?);
    Ok(fit)
}
