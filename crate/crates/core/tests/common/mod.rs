#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sbr::{Matrix, MultiSourceDataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| randn(rng)).collect()
}

pub fn randn_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, randn_vec(rng, rows * cols)).unwrap()
}

/// Raw dataset with Gaussian sources and a response that mixes all of them.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dims: &[usize]) -> MultiSourceDataset {
    let blocks: Vec<Matrix> = dims.iter().map(|&p| randn_matrix(rng, n, p)).collect();
    let mut y: Vec<f64> = (0..n).map(|_| 0.5 * randn(rng) + 1.0).collect();
    for b in &blocks {
        let beta = randn_vec(rng, b.cols());
        for (yi, v) in y.iter_mut().zip(b.matvec(&beta)) {
            *yi += 0.3 * v;
        }
    }
    MultiSourceDataset::from_blocks(y, blocks).unwrap()
}

pub fn na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn nav(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Dense `I + Σ λ_k⁻¹ X_k X_kᵀ`.
pub fn dense_a(blocks: &[&Matrix], lambda: &[f64]) -> DMatrix<f64> {
    let n = blocks[0].rows();
    let mut a = DMatrix::<f64>::identity(n, n);
    for (x, l) in blocks.iter().zip(lambda) {
        let xn = na(x);
        a += (&xn * xn.transpose()) / *l;
    }
    a
}

/// Column-stacked design and per-coefficient ridge weights.
pub fn dense_design(blocks: &[&Matrix], lambda: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let n = blocks[0].rows();
    let p: usize = blocks.iter().map(|b| b.cols()).sum();
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut w = Vec::with_capacity(p);
    let mut c = 0;
    for (b, l) in blocks.iter().zip(lambda) {
        for j in 0..b.cols() {
            for i in 0..n {
                x[(i, c + j)] = b.get(i, j);
            }
            w.push(*l);
        }
        c += b.cols();
    }
    (x, w)
}

/// `(XᵀX + diag(w))⁻¹ Xᵀ y` by dense LU.
pub fn dense_ridge(x: &DMatrix<f64>, w: &[f64], y: &[f64]) -> DVector<f64> {
    let mut m = x.transpose() * x;
    for (j, wj) in w.iter().enumerate() {
        m[(j, j)] += wj;
    }
    m.lu().solve(&(x.transpose() * nav(y))).expect("nonsingular")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
