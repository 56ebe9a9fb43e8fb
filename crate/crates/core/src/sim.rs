//! Synthetic three-source data (clinical, expression, SNP) with sparse
//! generalized-normal effects, plus the evaluation metrics used on it.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{MultiSourceDataset, Source};
use crate::error::{Result, SbrError};
use crate::kv::{KvBlock, KvMap, END_HEADER};
use crate::matrix::Matrix;

/// Standard deviation applied to the clinical features. Chosen so that the
/// CL-only OLS oracle reaches an average test correlation of about 0.6 with
/// the default coefficient scale; see [`calibrate_cl_scale`].
pub const DEFAULT_CL_SCALE: f64 = 2.84;

const SOURCE_NAMES: [&str; 3] = ["cl", "rna", "snp"];
const COEF_STREAM: u64 = u32::MAX as u64;
const NOISE_SOURCE: u64 = 3;
const PIVOT_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Sparse,
    Medium,
    Dense,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Sparse, Scenario::Medium, Scenario::Dense];

    pub fn snp_fraction(self) -> f64 {
        match self {
            Scenario::Sparse => 0.01,
            Scenario::Medium => 0.10,
            Scenario::Dense => 0.50,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Sparse => "sparse",
            Scenario::Medium => "medium",
            Scenario::Dense => "dense",
        })
    }
}

impl FromStr for Scenario {
    type Err = SbrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Scenario::Sparse),
            "medium" => Ok(Scenario::Medium),
            "dense" => Ok(Scenario::Dense),
            other => Err(SbrError::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correlation {
    Low,
    High,
}

impl Correlation {
    /// SNP covariance block width.
    pub fn block_size(self) -> usize {
        match self {
            Correlation::Low => 100,
            Correlation::High => 1000,
        }
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correlation::Low => "low",
            Correlation::High => "high",
        })
    }
}

impl FromStr for Correlation {
    type Err = SbrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Correlation::Low),
            "high" => Ok(Correlation::High),
            other => Err(SbrError::Config(format!("unknown correlation level '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub p_cl: usize,
    pub p_rna: usize,
    pub p_snp: usize,
    /// Width of each SNP covariance block; the last block may be narrower.
    pub snp_block: usize,
    /// Width of each expression covariance block.
    pub rna_block: usize,
    pub s_cl: f64,
    pub s_rna: f64,
    pub s_snp: f64,
    pub gnd_shape: f64,
    pub gnd_scale: f64,
    pub snp_scale_factor: f64,
    pub cl_scale: f64,
    /// Optional user covariances replacing the synthetic CL / RNA ones.
    pub cl_covariance: Option<Matrix>,
    pub rna_covariance: Option<Matrix>,
    pub seed: u64,
}

impl SimConfig {
    /// Full-size layout: 26 / 2000 / 100 000 features.
    pub fn full(scenario: Scenario, correlation: Correlation, n_train: usize, seed: u64) -> Self {
        SimConfig {
            n_train,
            n_test: 5000,
            p_cl: 26,
            p_rna: 2000,
            p_snp: 100_000,
            snp_block: correlation.block_size(),
            rna_block: 100,
            s_cl: 0.5,
            s_rna: 0.05,
            s_snp: scenario.snp_fraction(),
            gnd_shape: 1.5,
            gnd_scale: 0.1,
            snp_scale_factor: 2.0 / 3.0,
            cl_scale: DEFAULT_CL_SCALE,
            cl_covariance: None,
            rna_covariance: None,
            seed,
        }
    }

    /// Reduced layout: 26 / 500 / 10 000 features.
    pub fn desk(scenario: Scenario, correlation: Correlation, n_train: usize, seed: u64) -> Self {
        SimConfig {
            p_rna: 500,
            p_snp: 10_000,
            ..SimConfig::full(scenario, correlation, n_train, seed)
        }
    }

    /// Multiplies the RNA and SNP widths by `factor` (at least one column each).
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(SbrError::Config(format!("scale factor {factor} must be > 0")));
        }
        self.p_rna = ((self.p_rna as f64 * factor).round() as usize).max(1);
        self.p_snp = ((self.p_snp as f64 * factor).round() as usize).max(1);
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.p_cl + self.p_rna + self.p_snp
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SbrError::Config(m));
        if self.n_train < 2 || self.n_test < 2 {
            return bad("n_train and n_test must be >= 2".into());
        }
        if self.p_cl == 0 || self.p_rna == 0 || self.p_snp == 0 {
            return bad("every source needs at least one feature".into());
        }
        if self.snp_block == 0 || self.rna_block == 0 || self.p_snp < self.snp_block {
            return bad(format!(
                "SNP block width {} must be in 1..=p_snp ({})",
                self.snp_block, self.p_snp
            ));
        }
        for (name, s) in [("s_cl", self.s_cl), ("s_rna", self.s_rna), ("s_snp", self.s_snp)] {
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("{name} = {s} must lie in [0, 1]"));
            }
        }
        if !(self.gnd_shape > 0.0 && self.gnd_scale > 0.0 && self.snp_scale_factor > 0.0 && self.cl_scale > 0.0) {
            return bad("GND shape and all scales must be > 0".into());
        }
        for (name, cov, p) in [
            ("cl", &self.cl_covariance, self.p_cl),
            ("rna", &self.rna_covariance, self.p_rna),
        ] {
            if let Some(c) = cov {
                if c.rows() != p || c.cols() != p {
                    return Err(SbrError::mismatch(format!("{name} covariance dimension"), p, c.rows()));
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvBlock {
        let mut h = KvBlock::new();
        h.push("n_train", self.n_train)
            .push("n_test", self.n_test)
            .push("p_cl", self.p_cl)
            .push("p_rna", self.p_rna)
            .push("p_snp", self.p_snp)
            .push("snp_block", self.snp_block)
            .push("rna_block", self.rna_block)
            .push_f64("s_cl", self.s_cl)
            .push_f64("s_rna", self.s_rna)
            .push_f64("s_snp", self.s_snp)
            .push_f64("gnd_shape", self.gnd_shape)
            .push_f64("gnd_scale", self.gnd_scale)
            .push_f64("snp_scale_factor", self.snp_scale_factor)
            .push_f64("cl_scale", self.cl_scale)
            .push("cl_covariance", if self.cl_covariance.is_some() { "user" } else { "synthetic" })
            .push("rna_covariance", if self.rna_covariance.is_some() { "user" } else { "synthetic" })
            .push("seed", self.seed);
        h
    }
}

/// True coefficients of a generated scenario.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub beta_true: Vec<f64>,
    pub support: Vec<bool>,
    pub source_dims: Vec<usize>,
    pub sigma_eps: f64,
}

impl SimTruth {
    pub fn nonzero_count(&self) -> usize {
        self.support.iter().filter(|s| **s).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| SbrError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut h = KvBlock::new();
        h.push("format", "sbr-truth-1")
            .push("p", self.beta_true.len())
            .push("source_dims", self.source_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","))
            .push_f64("sigma_eps", self.sigma_eps)
            .push("nonzero_count", self.nonzero_count());
        let res = w
            .write_all(h.render().as_bytes())
            .and_then(|_| writeln!(w, "{END_HEADER}"))
            .and_then(|_| Matrix::from_vec(self.beta_true.len(), 1, self.beta_true.clone()).expect("finite").write_sbrm(&mut w))
            .and_then(|_| w.flush());
        res.map_err(|e| SbrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| SbrError::io(path, e))?;
        let mut r = BufReader::new(f);
        let h = KvMap::read_header(&mut r)?;
        if h.get("format") != Some("sbr-truth-1") {
            return Err(SbrError::Format(format!("{} is not a truth file", path.display())));
        }
        let beta = Matrix::read_sbrm(&mut r)?.into_vec();
        Ok(SimTruth {
            support: beta.iter().map(|b| *b != 0.0).collect(),
            beta_true: beta,
            source_dims: h.parse_list("source_dims")?,
            sigma_eps: h.parse_value("sigma_eps")?,
        })
    }
}

/// Independent random stream for `(source, block)`.
fn stream(seed: u64, source: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((source << 32) | block);
    rng
}

/// Draws from the generalized normal `GND(μ, σ, u)` with density
/// `exp(−|x − μ|ᵘ / (u σᵘ)) / (2 u^{1/u} σ Γ(1 + 1/u))`.
pub fn sample_gnd<R: Rng + ?Sized>(mu: f64, sigma: f64, u: f64, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && u > 0.0 && mu.is_finite() && sigma.is_finite() && u.is_finite()) {
        return Err(SbrError::Domain(format!("invalid GND parameters mu={mu} sigma={sigma} u={u}")));
    }
    let gamma = Gamma::new(1.0 / u, 1.0).map_err(|e| SbrError::Domain(e.to_string()))?;
    let su = u * sigma.powf(u);
    Ok((0..count)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let mag = (su * g).powf(1.0 / u);
            if rng.random::<bool>() {
                mu + mag
            } else {
                mu - mag
            }
        })
        .collect())
}

/// Lower-triangular Bartlett factor `A` with `A Aᵀ ~ Wishart(df, I_dim)`.
pub fn bartlett_factor<R: Rng + ?Sized>(dim: usize, df: f64, rng: &mut R) -> Result<Matrix> {
    if !(df > dim as f64 - 1.0) {
        return Err(SbrError::Domain(format!("Wishart needs df > dim - 1 (df={df}, dim={dim})")));
    }
    let mut a = Matrix::zeros(dim, dim);
    for i in 0..dim {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| SbrError::Domain(e.to_string()))?;
        let c: f64 = chi.sample(rng);
        a.set(i, i, c.sqrt().max(PIVOT_JITTER));
        for j in 0..i {
            a.set(i, j, rng.sample(StandardNormal));
        }
    }
    Ok(a)
}

/// Inverse of a lower-triangular matrix.
fn lower_inverse(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut inv = Matrix::zeros(n, n);
    for c in 0..n {
        inv.set(c, c, 1.0 / a.get(c, c));
        for i in c + 1..n {
            let mut s = 0.0;
            for k in c..i {
                s += a.get(i, k) * inv.get(k, c);
            }
            inv.set(i, c, -s / a.get(i, i));
        }
    }
    inv
}

/// `B` covariance blocks drawn from `IW(S, I_S)`.
pub fn gen_block_covariance<R: Rng + ?Sized>(s: usize, b: usize, rng: &mut R) -> Result<Vec<Matrix>> {
    if s < 2 {
        return Err(SbrError::Domain("block size must be >= 2".into()));
    }
    (0..b)
        .map(|_| {
            let linv = lower_inverse(&bartlett_factor(s, s as f64, rng)?);
            Ok(linv.transpose().matmul(&linv))
        })
        .collect()
}

/// Maps `z ~ N(0, I)` to a draw with a prescribed covariance: `x = T z` with
/// `T` upper triangular.
struct BlockTransform {
    t: Matrix,
}

impl BlockTransform {
    /// Correlation matrix of an `IW(df, I)` draw, scaled by `scale²`.
    fn inverse_wishart<R: Rng + ?Sized>(dim: usize, df: f64, scale: f64, rng: &mut R) -> Result<Self> {
        let linv = lower_inverse(&bartlett_factor(dim, df, rng)?);
        // x = A⁻ᵀ z has covariance (A Aᵀ)⁻¹; rows of A⁻ᵀ are columns of A⁻¹.
        let mut t = linv.transpose();
        for i in 0..dim {
            let row = t.row_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v *= scale / norm);
        }
        Ok(BlockTransform { t })
    }

    /// From a user covariance `Σ = L Lᵀ`: `x = L z`. Stored transposed so the
    /// same sampling loop applies.
    fn from_covariance(cov: &Matrix, scale: f64) -> Result<Self> {
        let c = nalgebra::Cholesky::new(cov.to_nalgebra())
            .ok_or_else(|| SbrError::Numerical("user covariance is not positive definite".into()))?;
        let l = Matrix::from_nalgebra(&c.l());
        let mut t = l;
        t.scale(scale);
        Ok(BlockTransform { t })
    }

    fn dim(&self) -> usize {
        self.t.rows()
    }

    /// `rows × dim` sample matrix.
    fn sample<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Matrix {
        let d = self.dim();
        let mut out = Matrix::zeros(rows, d);
        let mut z = vec![0.0; d];
        for r in 0..rows {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let row = out.row_mut(r);
            for (i, o) in row.iter_mut().enumerate() {
                *o = crate::matrix::dot(self.t.row(i), &z);
            }
        }
        out
    }
}

/// `0` if `|x| < 1.5`, `1` if `1.5 ≤ |x| < 2.5`, `2` otherwise.
pub fn discretize_value(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.5 {
        0.0
    } else if a < 2.5 {
        1.0
    } else {
        2.0
    }
}

pub fn discretize_snp(x: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| discretize_value(x.get(i, j)))
}

fn block_ranges(p: usize, width: usize) -> Vec<(usize, usize)> {
    (0..p).step_by(width).map(|s| (s, (s + width).min(p))).collect()
}

/// Samples one source block by block in parallel; every block has its own
/// stream so the result does not depend on thread count. SNP blocks are
/// discretized as they are drawn.
fn sample_blocks(
    cfg: &SimConfig,
    source: usize,
    p: usize,
    width: usize,
    scale: f64,
    user_cov: Option<&Matrix>,
    rows: usize,
) -> Result<Vec<Matrix>> {
    let discretize = source == 2;
    let finish = |mut m: Matrix| {
        if discretize {
            m.as_mut_slice().iter_mut().for_each(|v| *v = discretize_value(*v));
        }
        m
    };
    if let Some(cov) = user_cov {
        let t = BlockTransform::from_covariance(cov, scale)?;
        let mut rng = stream(cfg.seed, source as u64, 0);
        return Ok(vec![finish(t.sample(rows, &mut rng))]);
    }
    block_ranges(p, width)
        .par_iter()
        .enumerate()
        .map(|(b, &(c0, c1))| {
            let mut rng = stream(cfg.seed, source as u64, b as u64);
            let dim = c1 - c0;
            // SNP blocks use S degrees of freedom; CL / RNA use dim + 2.
            let df = if source == 2 { dim as f64 } else { dim as f64 + 2.0 };
            let t = BlockTransform::inverse_wishart(dim, df, scale, &mut rng)?;
            Ok(finish(t.sample(rows, &mut rng)))
        })
        .collect()
}

fn sample_source(
    cfg: &SimConfig,
    source: usize,
    p: usize,
    width: usize,
    scale: f64,
    user_cov: Option<&Matrix>,
    rows: usize,
) -> Result<Matrix> {
    let blocks = sample_blocks(cfg, source, p, width, scale, user_cov, rows)?;
    let refs: Vec<&Matrix> = blocks.iter().collect();
    Matrix::hstack(&refs)
}

/// Copies rows `r0..r1` of the column blocks into one matrix.
fn stack_rows(blocks: &[Matrix], r0: usize, r1: usize) -> Matrix {
    let p: usize = blocks.iter().map(Matrix::cols).sum();
    let mut out = Matrix::zeros(r1 - r0, p);
    for i in r0..r1 {
        let row = out.row_mut(i - r0);
        let mut c = 0;
        for b in blocks {
            row[c..c + b.cols()].copy_from_slice(b.row(i));
            c += b.cols();
        }
    }
    out
}

fn sample_coefficients(cfg: &SimConfig, source: usize, p: usize, frac: f64, sigma: f64) -> Result<Vec<f64>> {
    let mut rng = stream(cfg.seed, source as u64, COEF_STREAM);
    let m = (frac * p as f64).round() as usize;
    let idx = sample(&mut rng, p, m.min(p));
    let vals = sample_gnd(0.0, sigma, cfg.gnd_shape, idx.len(), &mut rng)?;
    let mut beta = vec![0.0; p];
    for (j, v) in idx.iter().zip(vals) {
        beta[j] = v;
    }
    Ok(beta)
}

/// CL features and coefficients only, for the OLS calibration oracle.
fn clinical_only(cfg: &SimConfig, rows: usize) -> Result<(Matrix, Vec<f64>)> {
    let x = sample_source(cfg, 0, cfg.p_cl, cfg.p_cl, cfg.cl_scale, cfg.cl_covariance.as_ref(), rows)?;
    let beta = sample_coefficients(cfg, 0, cfg.p_cl, cfg.s_cl, cfg.gnd_scale)?;
    Ok((x, beta))
}

fn noise(cfg: &SimConfig, rows: usize) -> Vec<f64> {
    let mut rng = stream(cfg.seed, NOISE_SOURCE, 0);
    (0..rows).map(|_| rng.sample(StandardNormal)).collect()
}

fn split_rows(x: &Matrix, n_train: usize) -> (Matrix, Matrix) {
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..x.rows()).collect();
    (x.select_rows(&train), x.select_rows(&test))
}

/// Generates raw (unstandardized) training and test datasets with sources
/// `cl`, `rna`, `snp` and the true coefficients.
pub fn generate_scenario(cfg: &SimConfig) -> Result<(MultiSourceDataset, MultiSourceDataset, SimTruth)> {
    cfg.validate()?;
    let rows = cfg.n_train + cfg.n_test;
    let x_cl = sample_blocks(cfg, 0, cfg.p_cl, cfg.p_cl, cfg.cl_scale, cfg.cl_covariance.as_ref(), rows)?;
    let x_rna = sample_blocks(cfg, 1, cfg.p_rna, cfg.rna_block, 1.0, cfg.rna_covariance.as_ref(), rows)?;
    let x_snp = sample_blocks(cfg, 2, cfg.p_snp, cfg.snp_block, 1.0, None, rows)?;

    let b_cl = sample_coefficients(cfg, 0, cfg.p_cl, cfg.s_cl, cfg.gnd_scale)?;
    let b_rna = sample_coefficients(cfg, 1, cfg.p_rna, cfg.s_rna, cfg.gnd_scale)?;
    let b_snp = sample_coefficients(cfg, 2, cfg.p_snp, cfg.s_snp, cfg.gnd_scale * cfg.snp_scale_factor)?;

    let eps = noise(cfg, rows);
    let mut y = eps;
    for (blocks, b) in [(&x_cl, &b_cl), (&x_rna, &b_rna), (&x_snp, &b_snp)] {
        let mut c = 0;
        for x in blocks.iter() {
            for (yi, v) in y.iter_mut().zip(x.matvec(&b[c..c + x.cols()])) {
                *yi += v;
            }
            c += x.cols();
        }
    }

    let mut train_sources = Vec::with_capacity(3);
    let mut test_sources = Vec::with_capacity(3);
    for (name, x) in SOURCE_NAMES.iter().zip([x_cl, x_rna, x_snp]) {
        train_sources.push(Source::new(*name, stack_rows(&x, 0, cfg.n_train)));
        test_sources.push(Source::new(*name, stack_rows(&x, cfg.n_train, rows)));
        drop(x);
    }
    let train = MultiSourceDataset::new(y[..cfg.n_train].to_vec(), train_sources)?;
    let test = MultiSourceDataset::new(y[cfg.n_train..].to_vec(), test_sources)?;

    let mut beta_true = b_cl;
    beta_true.extend(b_rna);
    beta_true.extend(b_snp);
    let truth = SimTruth {
        support: beta_true.iter().map(|b| *b != 0.0).collect(),
        beta_true,
        source_dims: vec![cfg.p_cl, cfg.p_rna, cfg.p_snp],
        sigma_eps: 1.0,
    };
    Ok((train, test, truth))
}

/// Pearson correlation.
pub fn metric_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SbrError::mismatch("correlation inputs", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(SbrError::Domain("correlation needs at least two points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(SbrError::Domain("correlation undefined for constant input".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Mann–Whitney AUC of `scores` for separating `truth` positives from
/// negatives; ties count one half.
pub fn metric_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(SbrError::mismatch("AUC inputs", scores.len(), truth.len()));
    }
    let n_pos = truth.iter().filter(|t| **t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(SbrError::Domain("AUC needs both classes".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(SbrError::NonFinite {
            what: "AUC scores".into(),
            row: i,
            col: 0,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks (1-based) over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if truth[k] {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Test correlation of OLS fitted on the clinical block alone, with the
/// response generated from the clinical signal plus unit noise.
pub fn ols_oracle_correlation(cfg: &SimConfig) -> Result<f64> {
    let rows = cfg.n_train + cfg.n_test;
    let (x, beta) = clinical_only(cfg, rows)?;
    let mut y = noise(cfg, rows);
    for (yi, v) in y.iter_mut().zip(x.matvec(&beta)) {
        *yi += v;
    }
    let (xtr, xte) = split_rows(&x, cfg.n_train);
    let a = xtr.to_nalgebra();
    let b = nalgebra::DVector::from_column_slice(&y[..cfg.n_train]);
    let beta_hat = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| SbrError::Numerical(e.to_string()))?;
    let pred = xte.matvec(beta_hat.as_slice());
    metric_correlation(&pred, &y[cfg.n_train..])
}

/// Mean oracle correlation over `seeds` with the given CL scale.
pub fn mean_oracle_correlation(base: &SimConfig, cl_scale: f64, seeds: std::ops::Range<u64>) -> Result<f64> {
    let vals: Vec<f64> = seeds
        .into_par_iter()
        .map(|s| {
            let cfg = SimConfig {
                cl_scale,
                seed: s,
                ..base.clone()
            };
            ols_oracle_correlation(&cfg)
        })
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Bisection on the CL feature scale so the mean oracle correlation hits
/// `target`. Used to derive [`DEFAULT_CL_SCALE`].
pub fn calibrate_cl_scale(base: &SimConfig, target: f64, seeds: std::ops::Range<u64>) -> Result<f64> {
    let (mut lo, mut hi) = (0.1f64, 20.0f64);
    for _ in 0..30 {
        let mid = (lo * hi).sqrt();
        if mean_oracle_correlation(base, mid, seeds.clone())? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Dense `p × p` covariance check helper: smallest eigenvalue.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    let e = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice()).symmetric_eigenvalues();
    e.iter().fold(f64::INFINITY, |a, b| a.min(*b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> SimConfig {
        SimConfig {
            n_train: 20,
            n_test: 15,
            p_cl: 6,
            p_rna: 30,
            p_snp: 120,
            snp_block: 40,
            rna_block: 10,
            ..SimConfig::full(Scenario::Medium, Correlation::Low, 20, seed)
        }
    }

    #[test]
    fn discretization_thresholds() {
        assert_eq!(discretize_value(1.0), 0.0);
        assert_eq!(discretize_value(2.0), 1.0);
        assert_eq!(discretize_value(3.0), 2.0);
        assert_eq!(discretize_value(-1.5), 1.0);
        assert_eq!(discretize_value(-2.5), 2.0);
        assert_eq!(discretize_value(1.4999), 0.0);
    }

    #[test]
    fn degenerate_gnd_collapses_to_location() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = sample_gnd(7.0, 1e-12, 1.5, 1000, &mut rng).unwrap();
        assert!(v.iter().all(|x| (x - 7.0).abs() < 1e-9));
        assert!(sample_gnd(0.0, 0.0, 1.5, 1, &mut rng).is_err());
        assert!(sample_gnd(0.0, 1.0, -1.0, 1, &mut rng).is_err());
    }

    #[test]
    fn covariance_blocks_are_spd_and_reproducible() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = gen_block_covariance(8, 4, &mut r1).unwrap();
        let b = gen_block_covariance(8, 4, &mut r2).unwrap();
        assert_eq!(a, b);
        for m in &a {
            assert!(min_eigenvalue(m) > 0.0);
            assert!(m.max_abs_diff(&m.transpose()) < 1e-9 * m.max_abs());
        }
    }

    #[test]
    fn lower_inverse_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = bartlett_factor(6, 9.0, &mut rng).unwrap();
        let prod = a.matmul(&lower_inverse(&a));
        assert!(prod.max_abs_diff(&Matrix::identity(6)) < 1e-10);
    }

    #[test]
    fn scenario_shapes_and_determinism() {
        let cfg = tiny(5);
        let (tr, te, truth) = generate_scenario(&cfg).unwrap();
        assert_eq!(tr.n(), 20);
        assert_eq!(te.n(), 15);
        assert_eq!(tr.source_dims(), vec![6, 30, 120]);
        assert_eq!(truth.beta_true.len(), 156);
        assert_eq!(truth.nonzero_count(), 3 + 2 + 12);
        assert!(tr.source(2).x.as_slice().iter().all(|v| [0.0, 1.0, 2.0].contains(v)));
        let (tr2, te2, truth2) = generate_scenario(&cfg).unwrap();
        assert_eq!(tr.y(), tr2.y());
        assert_eq!(te.source(1).x, te2.source(1).x);
        assert_eq!(truth.beta_true, truth2.beta_true);
    }

    #[test]
    fn zero_snp_fraction_gives_zero_snp_effects() {
        let cfg = SimConfig { s_snp: 0.0, ..tiny(6) };
        let (_, _, truth) = generate_scenario(&cfg).unwrap();
        assert!(truth.beta_true[36..].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn independent_of_thread_count() {
        let cfg = tiny(7);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (a, _, _) = pool.install(|| generate_scenario(&cfg)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (b, _, _) = pool.install(|| generate_scenario(&cfg)).unwrap();
        assert_eq!(a.source(2).x, b.source(2).x);
        assert_eq!(a.y(), b.y());
    }

    #[test]
    fn full_sparse_support_count() {
        let cfg = SimConfig::full(Scenario::Sparse, Correlation::Low, 100, 0);
        let count = (cfg.s_cl * cfg.p_cl as f64).round()
            + (cfg.s_rna * cfg.p_rna as f64).round()
            + (cfg.s_snp * cfg.p_snp as f64).round();
        assert_eq!(count, 1113.0);
        assert!((count / cfg.p() as f64 - 0.0109).abs() < 1e-3);
    }

    #[test]
    fn correlation_cases() {
        let y = [1.0, 3.0, 2.0, 5.0];
        assert!((metric_correlation(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((metric_correlation(&neg, &y).unwrap() + 1.0).abs() < 1e-15);
        let aff: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((metric_correlation(&aff, &y).unwrap() - 1.0).abs() < 1e-15);
        assert!(metric_correlation(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn auc_cases() {
        let t = [true, false, true, false];
        assert_eq!(metric_auc(&[0.9, 0.1, 0.8, 0.2], &t).unwrap(), 1.0);
        assert_eq!(metric_auc(&[0.5; 4], &t).unwrap(), 0.5);
        assert_eq!(metric_auc(&[0.1, 0.9, 0.2, 0.8], &t).unwrap(), 0.0);
        assert!(metric_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn truth_round_trip() {
        let (_, _, truth) = generate_scenario(&tiny(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth");
        truth.save(&p).unwrap();
        let back = SimTruth::load(&p).unwrap();
        assert_eq!(back.beta_true, truth.beta_true);
        assert_eq!(back.source_dims, truth.source_dims);
    }
}
