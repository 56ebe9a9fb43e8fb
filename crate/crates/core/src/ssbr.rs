//! Sparsification of a dense SBR fit by minimizing the expected KL loss
//! between the posterior predictive at `β̂` and at a sparse `γ`, plus an
//! ℓ₁ penalty.
//!
//! Two solvers:
//!
//! * general: the full quadratic `(c/2)(β̂ − γ)ᵀ Σ_β⁻¹ (β̂ − γ)` with
//!   `Σ_β⁻¹ = Λ + Λ^{1/2} V₁ D̃ V₁ᵀ Λ^{1/2}`, solved by coordinate descent;
//! * relaxed: only the diagonal of `Σ_β` is kept, giving a per-coefficient
//!   soft threshold.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::dataset::{MultiSourceDataset, ShrinkageVector};
use crate::error::{Result, SbrError};
use crate::fit::SbrFit;
use crate::gram::GramCache;
use crate::kv::{fmt_f64, KvBlock, KvMap, END_HEADER};
use crate::lasso::{coordinate_descent, soft_threshold, CdOptions, DenseQuadratic, QuadraticModel};
use crate::matrix::{axpy, dot, Matrix};

/// Eigenvalues of `MMᵀ` above 1 by at most this much are treated as rounding.
const D2_SPILL: f64 = 1e-8;
const D2_CLAMP: f64 = 1.0 - 1e-12;

/// Which point estimate of σ² fixes the constant `c` in front of the KL loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CVariant {
    /// σ² integrated out: `c = n / q_λ`.
    #[default]
    Integrated,
    /// Posterior mean of σ²: `c = (n − 2) / q_λ`.
    PosteriorMean,
    /// Posterior mode of σ²: `c = (n + 2) / q_λ`.
    PosteriorMode,
}

impl CVariant {
    pub fn constant(self, n: usize, q_lambda: f64) -> Result<f64> {
        let num = match self {
            CVariant::Integrated => n as f64,
            CVariant::PosteriorMean => n as f64 - 2.0,
            CVariant::PosteriorMode => n as f64 + 2.0,
        };
        let c = num / q_lambda;
        if !(c > 0.0 && c.is_finite()) {
            return Err(SbrError::Domain(format!(
                "KL constant {num}/{q_lambda:e} is not positive and finite"
            )));
        }
        Ok(c)
    }
}

impl fmt::Display for CVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CVariant::Integrated => "integrated",
            CVariant::PosteriorMean => "mean",
            CVariant::PosteriorMode => "mode",
        })
    }
}

impl FromStr for CVariant {
    type Err = SbrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrated" | "n" => Ok(CVariant::Integrated),
            "mean" => Ok(CVariant::PosteriorMean),
            "mode" => Ok(CVariant::PosteriorMode),
            other => Err(SbrError::Config(format!("unknown c variant '{other}'"))),
        }
    }
}

/// Sample-size control factor `f_n` multiplying the relaxed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Control {
    None,
    SqrtN,
    #[default]
    LogN,
    SqrtLogN,
}

impl Control {
    pub fn factor(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Control::None => 1.0,
            Control::SqrtN => n.sqrt(),
            Control::LogN => n.ln(),
            Control::SqrtLogN => n.ln().sqrt(),
        }
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Control::None => "none",
            Control::SqrtN => "sqrtn",
            Control::LogN => "logn",
            Control::SqrtLogN => "sqrtlogn",
        })
    }
}

impl FromStr for Control {
    type Err = SbrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Control::None),
            "sqrtn" => Ok(Control::SqrtN),
            "logn" => Ok(Control::LogN),
            "sqrtlogn" => Ok(Control::SqrtLogN),
            other => Err(SbrError::Config(format!("unknown control '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    General,
    SvdEquivalent,
    Relaxed,
    RelaxedControlled,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::General => "general",
            Method::SvdEquivalent => "svd_equivalent",
            Method::Relaxed => "relaxed",
            Method::RelaxedControlled => "relaxed_controlled",
        })
    }
}

impl FromStr for Method {
    type Err = SbrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Method::General),
            "svd_equivalent" => Ok(Method::SvdEquivalent),
            "relaxed" => Ok(Method::Relaxed),
            "relaxed_controlled" => Ok(Method::RelaxedControlled),
            other => Err(SbrError::Format(format!("unknown method '{other}'"))),
        }
    }
}

/// ℓ₁ weights: one shared value or one per coefficient.
#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    Scalar(f64),
    PerCoefficient(Vec<f64>),
}

impl Penalty {
    pub fn expand(&self, p: usize) -> Result<Vec<f64>> {
        let v = match self {
            Penalty::Scalar(a) => vec![*a; p],
            Penalty::PerCoefficient(v) => {
                if v.len() != p {
                    return Err(SbrError::mismatch("penalty length", p, v.len()));
                }
                v.clone()
            }
        };
        if let Some(j) = v.iter().position(|a| a.is_nan() || *a < 0.0) {
            return Err(SbrError::Domain(format!("penalty[{j}] = {} must be >= 0", v[j])));
        }
        Ok(v)
    }

    pub fn scaled(&self, s: f64) -> Penalty {
        match self {
            Penalty::Scalar(a) => Penalty::Scalar(a * s),
            Penalty::PerCoefficient(v) => Penalty::PerCoefficient(v.iter().map(|a| a * s).collect()),
        }
    }
}

/// `V₁` and the spectrum needed to apply `Σ_β⁻¹` without forming it.
#[derive(Debug, Clone)]
pub struct SvdContext {
    /// Singular values `d_i` of `M = (I + G_λ)^{-1/2} X Λ^{-1/2}`.
    pub d: Vec<f64>,
    /// `d̃_i = d_i² / (1 − d_i²)`
    pub d_tilde: Vec<f64>,
    /// `p × n`; columns for zero singular values are zero.
    pub v1: Matrix,
}

#[derive(Debug, Clone)]
pub struct KlContext {
    pub beta_hat: Vec<f64>,
    pub n: usize,
    pub c_n_lambda: f64,
    pub variant: CVariant,
    pub q_lambda: f64,
    pub lambda: ShrinkageVector,
    pub source_dims: Vec<usize>,
    /// `λ` expanded to one entry per coefficient.
    pub lambda_coef: Vec<f64>,
    pub var_diag: Option<Vec<f64>>,
    pub svd: Option<SvdContext>,
}

impl KlContext {
    /// Context without the SVD part; enough for the relaxed solver.
    pub fn from_fit(fit: &SbrFit, variant: CVariant) -> Result<Self> {
        let c = variant.constant(fit.n, fit.q_lambda)?;
        Ok(KlContext {
            beta_hat: fit.beta_hat.clone(),
            n: fit.n,
            c_n_lambda: c,
            variant,
            q_lambda: fit.q_lambda,
            lambda: fit.lambda.clone(),
            source_dims: fit.source_dims.clone(),
            lambda_coef: fit.lambda.per_coefficient(&fit.source_dims),
            var_diag: fit.var_diag.clone(),
            svd: None,
        })
    }

    pub fn p(&self) -> usize {
        self.beta_hat.len()
    }

    fn require_svd(&self) -> Result<&SvdContext> {
        self.svd
            .as_ref()
            .ok_or_else(|| SbrError::Config("SVD context has not been built".into()))
    }

    /// `Σ_β⁻¹ v` through the low-rank identity.
    pub fn precision_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let svd = self.require_svd()?;
        if v.len() != self.p() {
            return Err(SbrError::mismatch("vector length", self.p(), v.len()));
        }
        let sv: Vec<f64> = v.iter().zip(&self.lambda_coef).map(|(x, l)| x * l.sqrt()).collect();
        let mut u = svd.v1.t_matvec(&sv);
        for (ui, dt) in u.iter_mut().zip(&svd.d_tilde) {
            *ui *= dt;
        }
        let low = svd.v1.matvec(&u);
        Ok(v.iter()
            .zip(&self.lambda_coef)
            .zip(&low)
            .map(|((x, l), r)| l * x + l.sqrt() * r)
            .collect())
    }

    /// Smallest scalar α for which the general solution is all zero:
    /// `max_j |c (Σ_β⁻¹ β̂)_j|`.
    pub fn alpha_max(&self) -> Result<f64> {
        let g = self.precision_apply(&self.beta_hat)?;
        Ok(g.iter().fold(0.0f64, |m, v| m.max((self.c_n_lambda * v).abs())))
    }
}

/// Builds `U`, `D` and `V₁` for `M = (I + G_λ)^{-1/2} X Λ^{-1/2}`.
///
/// `MMᵀ` shares eigenvectors with `G_λ`: if `G_λ = Q Ω Qᵀ` then
/// `d_i² = ω_i/(1 + ω_i)`, `d̃_i = ω_i` and `V₁ e_i = Λ^{-1/2} Xᵀ q_i / √ω_i`.
/// Working from `G_λ` avoids the inverse square root of `I + G_λ`.
pub fn build_svd_context(
    cache: &GramCache,
    ds: &MultiSourceDataset,
    lambda: &ShrinkageVector,
    fit: &SbrFit,
    variant: CVariant,
) -> Result<KlContext> {
    if ds.p() != fit.p() {
        return Err(SbrError::mismatch("fit coefficient count", ds.p(), fit.p()));
    }
    let mut ctx = KlContext::from_fit(fit, variant)?;
    let n = ds.n();
    let p = ds.p();
    let g = cache.assemble(lambda)?;
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, g.as_slice()));
    let omega_max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rank_tol = omega_max * n as f64 * f64::EPSILON * 16.0;

    let mut d = vec![0.0; n];
    let mut d_tilde = vec![0.0; n];
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let w = eig.eigenvalues[i];
        if w < -rank_tol.max(1e-300) - 1e-10 * omega_max {
            return Err(SbrError::Numerical(format!(
                "G_lambda has negative eigenvalue {w:e}"
            )));
        }
        if w <= rank_tol {
            continue;
        }
        let d2 = clamp_d2(w / (1.0 + w))?;
        d[i] = d2.sqrt();
        d_tilde[i] = if d2 == D2_CLAMP { d2 / (1.0 - d2) } else { w };
        scale[i] = 1.0 / w.sqrt();
    }

    // V₁ᵀ (n × p) built row by row: row i = Σ_t Q[t,i] X[t,:] scaled per column.
    let q = &eig.eigenvectors;
    let lambda_coef = &ctx.lambda_coef;
    let offsets = crate::fit::source_offsets(&ds.source_dims());
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; p];
            if scale[i] == 0.0 {
                return row;
            }
            for (s, &off) in ds.sources().iter().zip(&offsets) {
                let seg = &mut row[off..off + s.p()];
                for t in 0..n {
                    axpy(q[(t, i)], s.x.row(t), seg);
                }
            }
            for (v, l) in row.iter_mut().zip(lambda_coef) {
                *v *= scale[i] / l.sqrt();
            }
            row
        })
        .collect();
    let mut v1 = Matrix::zeros(p, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            v1.set(j, i, *v);
        }
    }
    ctx.svd = Some(SvdContext { d, d_tilde, v1 });
    Ok(ctx)
}

fn clamp_d2(d2: f64) -> Result<f64> {
    if d2 < 1.0 {
        Ok(d2)
    } else if d2 <= 1.0 + D2_SPILL {
        Ok(D2_CLAMP)
    } else {
        Err(SbrError::Numerical(format!("squared singular value {d2} exceeds 1")))
    }
}

/// `(c/2)(β̂ − γ)ᵀ Σ_β⁻¹ (β̂ − γ)`
pub fn expected_kl(ctx: &KlContext, gamma: &[f64]) -> Result<f64> {
    if gamma.len() != ctx.p() {
        return Err(SbrError::mismatch("gamma length", ctx.p(), gamma.len()));
    }
    let e: Vec<f64> = ctx.beta_hat.iter().zip(gamma).map(|(b, g)| b - g).collect();
    let pe = ctx.precision_apply(&e)?;
    Ok(0.5 * ctx.c_n_lambda * dot(&e, &pe))
}

/// Dense `XᵀX + Λ` for small problems.
pub fn dense_precision(ds: &MultiSourceDataset, lambda: &ShrinkageVector) -> Result<Matrix> {
    if lambda.len() != ds.k() {
        return Err(SbrError::mismatch("lambda length", ds.k(), lambda.len()));
    }
    let x = ds.design();
    let mut a = x.transpose().matmul(&x);
    for (j, l) in lambda.per_coefficient(&ds.source_dims()).iter().enumerate() {
        let v = a.get(j, j) + l;
        a.set(j, j, v);
    }
    Ok(a)
}

#[derive(Debug, Clone)]
pub struct SparseSolution {
    pub gamma_hat: Vec<f64>,
    pub nonzero_count: usize,
    /// `nonzero_count / p`
    pub sparsity: f64,
    pub method: Method,
    pub penalties: Penalty,
    pub f_n: f64,
    pub converged: bool,
    pub sweeps: usize,
}

impl SparseSolution {
    fn new(gamma_hat: Vec<f64>, method: Method, penalties: Penalty, f_n: f64) -> Self {
        let nonzero_count = gamma_hat.iter().filter(|v| **v != 0.0).count();
        let p = gamma_hat.len().max(1);
        SparseSolution {
            sparsity: nonzero_count as f64 / p as f64,
            gamma_hat,
            nonzero_count,
            method,
            penalties,
            f_n,
            converged: true,
            sweeps: 0,
        }
    }

    pub fn p(&self) -> usize {
        self.gamma_hat.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| SbrError::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| SbrError::io(path, e))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut h = KvBlock::new();
        h.push("format", "sbr-sparse-1")
            .push("p", self.p())
            .push("nonzero_count", self.nonzero_count)
            .push_f64("sparsity", self.sparsity)
            .push("method", self.method)
            .push_f64("f_n", self.f_n)
            .push("converged", self.converged)
            .push("sweeps", self.sweeps);
        match &self.penalties {
            Penalty::Scalar(a) => h.push("penalty", "scalar").push_f64("alpha", *a),
            Penalty::PerCoefficient(_) => h.push("penalty", "per_coefficient"),
        };
        w.write_all(h.render().as_bytes())?;
        writeln!(w, "{END_HEADER}")?;
        Matrix::from_vec(self.p(), 1, self.gamma_hat.clone())
            .expect("finite coefficients")
            .write_sbrm(w)?;
        if let Penalty::PerCoefficient(v) = &self.penalties {
            // Infinite weights are legal here; store them as-is.
            let m = Matrix::from_vec_unchecked(v.len(), 1, v.clone());
            m.write_sbrm(w)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| SbrError::io(path, e))?;
        let mut r = BufReader::new(f);
        let h = KvMap::read_header(&mut r)?;
        if h.get("format") != Some("sbr-sparse-1") {
            return Err(SbrError::Format(format!("{} is not a sparse solution file", path.display())));
        }
        let p: usize = h.parse_value("p")?;
        let gamma = Matrix::read_sbrm(&mut r)?;
        if gamma.rows() != p || gamma.cols() != 1 {
            return Err(SbrError::mismatch("stored gamma length", p, gamma.rows()));
        }
        let penalties = match h.require("penalty")? {
            "scalar" => Penalty::Scalar(h.parse_value("alpha")?),
            "per_coefficient" => Penalty::PerCoefficient(Matrix::read_sbrm_unchecked(&mut r)?.into_vec()),
            other => return Err(SbrError::Format(format!("unknown penalty kind '{other}'"))),
        };
        let mut s = SparseSolution::new(gamma.into_vec(), h.parse_value("method")?, penalties, h.parse_value("f_n")?);
        s.converged = h.parse_value("converged")?;
        s.sweeps = h.parse_value("sweeps")?;
        Ok(s)
    }
}

/// `Q = c Σ_β⁻¹` through the low-rank form. Tracks `u = V₁ᵀ Λ^{1/2} e` with
/// `e = γ − β̂`.
struct SvdQuadratic<'a> {
    ctx: &'a KlContext,
    svd: &'a SvdContext,
    e: Vec<f64>,
    u: Vec<f64>,
}

impl QuadraticModel for SvdQuadratic<'_> {
    fn dim(&self) -> usize {
        self.e.len()
    }

    fn curvature(&self, j: usize) -> f64 {
        let l = self.ctx.lambda_coef[j];
        let row = self.svd.v1.row(j);
        let low: f64 = row.iter().zip(&self.svd.d_tilde).map(|(v, d)| v * v * d).sum();
        self.ctx.c_n_lambda * l * (1.0 + low)
    }

    fn gradient(&self, j: usize) -> f64 {
        let l = self.ctx.lambda_coef[j];
        let row = self.svd.v1.row(j);
        let low: f64 = row
            .iter()
            .zip(&self.svd.d_tilde)
            .zip(&self.u)
            .map(|((v, d), u)| v * d * u)
            .sum();
        self.ctx.c_n_lambda * (l * self.e[j] + l.sqrt() * low)
    }

    fn update(&mut self, j: usize, delta: f64) {
        self.e[j] += delta;
        let s = delta * self.ctx.lambda_coef[j].sqrt();
        axpy(s, self.svd.v1.row(j), &mut self.u);
    }
}

/// General ℓ₁ solution through the low-rank augmented system.
pub fn solve_general(ctx: &KlContext, alpha: &Penalty, opts: Option<CdOptions>) -> Result<SparseSolution> {
    let svd = ctx.require_svd()?;
    let p = ctx.p();
    let a = alpha.expand(p)?;
    let mut model = SvdQuadratic {
        ctx,
        svd,
        e: vec![0.0; p],
        u: vec![0.0; ctx.n],
    };
    let r = coordinate_descent(&mut model, &ctx.beta_hat, &a, cd_options(ctx, opts));
    finish_cd(r, Method::SvdEquivalent, alpha.clone())
}

/// General ℓ₁ solution with an explicit `Σ_β⁻¹` (`p × p`, small `p` only).
pub fn solve_general_dense(
    ctx: &KlContext,
    precision: &Matrix,
    alpha: &Penalty,
    opts: Option<CdOptions>,
) -> Result<SparseSolution> {
    let p = ctx.p();
    if precision.rows() != p || precision.cols() != p {
        return Err(SbrError::mismatch("precision dimension", p, precision.rows()));
    }
    let a = alpha.expand(p)?;
    let mut q = precision.clone();
    q.scale(ctx.c_n_lambda);
    let mut model = DenseQuadratic::new(q.as_slice(), p);
    let r = coordinate_descent(&mut model, &ctx.beta_hat, &a, cd_options(ctx, opts));
    finish_cd(r, Method::General, alpha.clone())
}

fn cd_options(ctx: &KlContext, opts: Option<CdOptions>) -> CdOptions {
    opts.unwrap_or_else(|| {
        let scale = ctx.beta_hat.iter().fold(1.0f64, |m, b| m.max(b.abs()));
        CdOptions {
            tol: 1e-7 * scale,
            ..CdOptions::default()
        }
    })
}

fn finish_cd(r: crate::lasso::CdResult, method: Method, penalty: Penalty) -> Result<SparseSolution> {
    if !r.converged {
        log::warn!("coordinate descent stopped after {} sweeps without converging", r.sweeps);
    }
    let mut s = SparseSolution::new(r.gamma, method, penalty, 1.0);
    s.converged = r.converged;
    s.sweeps = r.sweeps;
    Ok(s)
}

/// Relaxed threshold `t_j = v_j α_j f_n / c` (equal to `(q_λ/n) v_j α_j f_n`
/// for the integrated constant).
pub fn relaxed_thresholds(ctx: &KlContext, alpha: &[f64], f_n: f64) -> Result<Vec<f64>> {
    let v = ctx
        .var_diag
        .as_ref()
        .ok_or_else(|| SbrError::Config("relaxed sparsification needs posterior variances".into()))?;
    if alpha.len() != ctx.p() {
        return Err(SbrError::mismatch("penalty length", ctx.p(), alpha.len()));
    }
    let c = ctx.c_n_lambda;
    Ok(v.iter()
        .zip(alpha)
        .map(|(v, a)| if a.is_infinite() { f64::INFINITY } else { v * a * f_n / c })
        .collect())
}

/// Closed-form soft threshold of each `β̂_j`.
pub fn solve_relaxed(ctx: &KlContext, alpha: &Penalty, control: Control) -> Result<SparseSolution> {
    let a = alpha.expand(ctx.p())?;
    let f_n = control.factor(ctx.n);
    let t = relaxed_thresholds(ctx, &a, f_n)?;
    let gamma: Vec<f64> = ctx
        .beta_hat
        .par_iter()
        .zip(t.par_iter())
        .map(|(b, t)| soft_threshold(*b, *t))
        .collect();
    let method = if control == Control::None {
        Method::Relaxed
    } else {
        Method::RelaxedControlled
    };
    Ok(SparseSolution::new(gamma, method, alpha.clone(), f_n))
}

/// `α_jk = |β̂_jk|^{-w_k}` with `w_k = λ_k / Σ_l λ_l`. Zero coefficients get
/// an infinite weight.
pub fn adaptive_penalties(fit: &SbrFit, lambda: &ShrinkageVector) -> Result<Vec<f64>> {
    if lambda.len() != fit.k() {
        return Err(SbrError::mismatch("lambda length", fit.k(), lambda.len()));
    }
    if fit.beta_hat.iter().all(|b| *b == 0.0) {
        return Err(SbrError::Domain("all posterior mode coefficients are zero".into()));
    }
    let total: f64 = lambda.values().iter().sum();
    let mut out = Vec::with_capacity(fit.p());
    for (k, &l) in lambda.values().iter().enumerate() {
        let w = l / total;
        out.extend(fit.beta_block(k).iter().map(|b| {
            if *b == 0.0 {
                f64::INFINITY
            } else {
                b.abs().powf(-w)
            }
        }));
    }
    Ok(out)
}

/// Scalar α reproducing the penalized-credible-region solution:
/// `α = (c/2) ‖β̂‖₁⁻² ξ`.
pub fn pcr_penalty(xi: f64, ctx: &KlContext) -> Result<f64> {
    if !(xi >= 0.0 && xi.is_finite()) {
        return Err(SbrError::Domain(format!("xi = {xi} must be finite and >= 0")));
    }
    let l1: f64 = ctx.beta_hat.iter().map(|b| b.abs()).sum();
    if l1 == 0.0 {
        return Err(SbrError::Domain("pCR penalty undefined for zero posterior mode".into()));
    }
    Ok(0.5 * ctx.c_n_lambda * xi / (l1 * l1))
}

impl fmt::Display for SparseSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "method={} nonzero={} p={} sparsity={} f_n={}",
            self.method,
            self.nonzero_count,
            self.p(),
            fmt_f64(self.sparsity),
            fmt_f64(self.f_n)
        )
    }
}
