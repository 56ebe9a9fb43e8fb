//! Per-source Gram matrices and the shared `n × n` Cholesky kernel.
//!
//! Everything downstream of the data touches `X` only through
//! `G_k = X_k X_kᵀ` (computed once per source) and the factorization of
//! `I + G_λ`, where `G_λ = Σ_k λ_k⁻¹ G_k`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{MultiSourceDataset, ShrinkageVector};
use crate::error::{Result, SbrError};
use crate::matrix::{axpy, dot, Matrix};

/// Column block width used for Gram accumulation. Fixed so that results do
/// not depend on the worker count.
pub const DEFAULT_GRAM_BLOCK: usize = 512;

/// Number of column blocks whose partial products are held at once.
const WAVE: usize = 8;

/// Computes `X Xᵀ` with the default block width.
pub fn compute_gram(x: &Matrix) -> Matrix {
    compute_gram_blocked(x, DEFAULT_GRAM_BLOCK)
}

/// Computes `X Xᵀ` by accumulating over column blocks of width `block`.
///
/// Blocks are processed in waves of fixed size; partial products inside a
/// wave are reduced pairwise in index order and then added to the running
/// total, so the output is bit-identical for any thread count. Working memory
/// is `O(n² + n·block)` per wave slot.
pub fn compute_gram_blocked(x: &Matrix, block: usize) -> Matrix {
    let (n, p) = x.shape();
    let block = block.max(1);
    let mut total = Matrix::zeros(n, n);
    if p == 0 || n == 0 {
        return total;
    }
    let starts: Vec<usize> = (0..p).step_by(block).collect();
    for wave in starts.chunks(WAVE) {
        let partials: Vec<Vec<f64>> = wave
            .par_iter()
            .map(|&c0| block_lower_gram(x, c0, (c0 + block).min(p)))
            .collect();
        let wave_sum = pairwise_sum(partials);
        for (t, w) in total.as_mut_slice().iter_mut().zip(&wave_sum) {
            *t += w;
        }
    }
    // Mirror the lower triangle.
    for i in 0..n {
        for j in 0..i {
            let v = total.get(i, j);
            total.set(j, i, v);
        }
    }
    total
}

fn block_lower_gram(x: &Matrix, c0: usize, c1: usize) -> Vec<f64> {
    let n = x.rows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let xi = &x.row(i)[c0..c1];
        for j in 0..=i {
            out[i * n + j] = dot(xi, &x.row(j)[c0..c1]);
        }
    }
    out
}

fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (ai, bi) in a.iter_mut().zip(&b) {
                    *ai += bi;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// The per-source Gram matrices of a dataset.
#[derive(Debug, Clone)]
pub struct GramCache {
    grams: Vec<Matrix>,
    n: usize,
    source_dims: Vec<usize>,
}

impl GramCache {
    pub fn from_grams(grams: Vec<Matrix>, source_dims: Vec<usize>) -> Result<Self> {
        let n = grams.first().map_or(0, Matrix::rows);
        if grams.len() != source_dims.len() {
            return Err(SbrError::mismatch("gram count", source_dims.len(), grams.len()));
        }
        for g in &grams {
            if g.shape() != (n, n) {
                return Err(SbrError::mismatch("gram size", n, g.rows()));
            }
        }
        Ok(GramCache {
            grams,
            n,
            source_dims,
        })
    }

    pub fn build(ds: &MultiSourceDataset) -> Self {
        Self::build_blocked(ds, DEFAULT_GRAM_BLOCK)
    }

    pub fn build_blocked(ds: &MultiSourceDataset, block: usize) -> Self {
        let grams = ds
            .sources()
            .iter()
            .map(|s| compute_gram_blocked(&s.x, block))
            .collect();
        GramCache {
            grams,
            n: ds.n(),
            source_dims: ds.source_dims(),
        }
    }

    /// Like [`build`](Self::build) but reuses `<hash>.gram` files in `dir`,
    /// writing any that are missing.
    pub fn build_with_disk_cache(ds: &MultiSourceDataset, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| SbrError::io(dir, e))?;
        let mut grams = Vec::with_capacity(ds.k());
        for s in ds.sources() {
            let path = gram_cache_path(dir, &s.x);
            let cached = match Matrix::load_sbrm(&path) {
                Ok(g) if g.shape() == (ds.n(), ds.n()) => Some(g),
                Ok(_) => None,
                Err(SbrError::Io { .. }) => None,
                Err(e) => {
                    log::warn!("ignoring unreadable gram cache {}: {e}", path.display());
                    None
                }
            };
            let g = match cached {
                Some(g) => {
                    log::info!("gram cache hit for source '{}'", s.name);
                    g
                }
                None => {
                    let g = compute_gram(&s.x);
                    g.save_sbrm(&path)?;
                    g
                }
            };
            grams.push(g);
        }
        GramCache::from_grams(grams, ds.source_dims())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.grams.len()
    }

    pub fn source_dims(&self) -> &[usize] {
        &self.source_dims
    }

    pub fn grams(&self) -> &[Matrix] {
        &self.grams
    }

    pub fn gram(&self, k: usize) -> &Matrix {
        &self.grams[k]
    }

    /// Collapses all sources into one (`K = 1`), as used by single-penalty ridge.
    pub fn pooled(&self) -> GramCache {
        let mut g = Matrix::zeros(self.n, self.n);
        for gk in &self.grams {
            g.add_scaled(1.0, gk);
        }
        GramCache {
            grams: vec![g],
            n: self.n,
            source_dims: vec![self.source_dims.iter().sum()],
        }
    }

    /// Reorders sources.
    pub fn permuted(&self, order: &[usize]) -> GramCache {
        GramCache {
            grams: order.iter().map(|&k| self.grams[k].clone()).collect(),
            n: self.n,
            source_dims: order.iter().map(|&k| self.source_dims[k]).collect(),
        }
    }

    /// `G_λ = Σ_k λ_k⁻¹ G_k`.
    pub fn assemble(&self, lambda: &ShrinkageVector) -> Result<Matrix> {
        self.assemble_raw(lambda.values())
    }

    pub fn assemble_raw(&self, lambda: &[f64]) -> Result<Matrix> {
        if lambda.len() != self.k() {
            return Err(SbrError::mismatch("lambda length", self.k(), lambda.len()));
        }
        let mut g = Matrix::zeros(self.n, self.n);
        for (gk, &l) in self.grams.iter().zip(lambda) {
            if !(l > 0.0) {
                return Err(SbrError::Domain(format!("lambda must be > 0, got {l}")));
            }
            g.add_scaled(1.0 / l, gk);
        }
        Ok(g)
    }
}

/// Free-function form of [`GramCache::assemble`].
pub fn assemble_g(cache: &GramCache, lambda: &ShrinkageVector) -> Result<Matrix> {
    cache.assemble(lambda)
}

/// File name under which the Gram of `x` is cached: SHA-256 of its SBRM bytes.
pub fn gram_cache_path(dir: &Path, x: &Matrix) -> PathBuf {
    let mut hasher = Sha256::new();
    let mut bytes = Vec::with_capacity(24 + 8 * x.rows() * x.cols());
    x.write_sbrm(&mut bytes).expect("writing to a Vec cannot fail");
    hasher.update(&bytes);
    dir.join(format!("{}.gram", hex::encode(hasher.finalize())))
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(SbrError::mismatch("cholesky input columns", n, a.cols()));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let s = a.get(j, j) - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(s > 0.0) || !s.is_finite() {
                return Err(SbrError::Factorization { pivot: j, value: s });
            }
            let d = s.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let v = (a.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j])) / d;
                l.set(i, j, v);
            }
        }
        Ok(Cholesky { l })
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn n(&self) -> usize {
        self.l.rows()
    }

    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n()).map(|i| self.l.get(i, i).ln()).sum::<f64>()
    }

    /// Solves `L z = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut z = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l.row(i)[..i], &z[..i]);
            z[i] = (z[i] - s) / self.l.get(i, i);
        }
        z
    }

    /// Solves `Lᵀ x = z`.
    pub fn backward(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut x = z.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.l.get(i, i);
            let xi = x[i];
            axpy(-xi, &self.l.row(i)[..i], &mut x[..i]);
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// Solves `L Z = B` for a row-major `n × m` right-hand side, in place.
    pub fn forward_rows_in_place(&self, b: &mut Matrix) {
        let n = self.n();
        assert_eq!(b.rows(), n);
        let m = b.cols();
        let data = b.as_mut_slice();
        for i in 0..n {
            let (done, rest) = data.split_at_mut(i * m);
            let row = &mut rest[..m];
            for k in 0..i {
                let lik = self.l.get(i, k);
                if lik != 0.0 {
                    axpy(-lik, &done[k * m..(k + 1) * m], row);
                }
            }
            let d = 1.0 / self.l.get(i, i);
            row.iter_mut().for_each(|v| *v *= d);
        }
    }

    /// `L⁻¹` (lower triangular).
    pub fn inverse_factor(&self) -> Matrix {
        let mut inv = Matrix::identity(self.n());
        self.forward_rows_in_place(&mut inv);
        inv
    }

    /// Diagonal of `A⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse_diag(&self) -> Vec<f64> {
        let linv = self.inverse_factor();
        let n = self.n();
        let mut diag = vec![0.0; n];
        for k in 0..n {
            for (i, d) in diag.iter_mut().enumerate().take(k + 1) {
                let v = linv.get(k, i);
                *d += v * v;
            }
        }
        diag
    }

    /// Full `A⁻¹`.
    pub fn inverse(&self) -> Matrix {
        let linv = self.inverse_factor();
        linv.transpose().matmul(&linv)
    }
}

/// Result of factoring `I + G_λ` against a response.
#[derive(Debug, Clone)]
pub struct CoreSolve {
    /// `w_λ = (I + G_λ)⁻¹ y`
    pub w_lambda: Vec<f64>,
    /// `q_λ = yᵀ (I + G_λ)⁻¹ y`
    pub q_lambda: f64,
    /// `log |I + G_λ|`
    pub logdet: f64,
    pub chol: Cholesky,
}

impl CoreSolve {
    pub fn n(&self) -> usize {
        self.w_lambda.len()
    }
}

/// Factors `I + G_λ` once and derives `w_λ`, `q_λ` and the log-determinant.
pub fn core_solve(g_lambda: &Matrix, y: &[f64]) -> Result<CoreSolve> {
    let n = g_lambda.rows();
    if y.len() != n {
        return Err(SbrError::mismatch("response length", n, y.len()));
    }
    let mut a = g_lambda.clone();
    for i in 0..n {
        let v = a.get(i, i) + 1.0;
        a.set(i, i, v);
    }
    let chol = Cholesky::factor(&a)?;
    let w_lambda = chol.solve(y);
    let q_lambda = dot(y, &w_lambda).max(0.0);
    Ok(CoreSolve {
        w_lambda,
        q_lambda,
        logdet: chol.logdet(),
        chol,
    })
}
