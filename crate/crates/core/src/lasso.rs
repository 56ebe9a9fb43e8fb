//! Cyclic coordinate descent for weighted-ℓ₁ penalized quadratics
//!
//! ```text
//! min_γ  ½ (γ − b)ᵀ Q (γ − b) + Σ_j α_j |γ_j|
//! ```
//!
//! `Q` is never formed by the solver; it is reached through a
//! [`QuadraticModel`] that keeps whatever running residual makes a single
//! coordinate gradient cheap.

/// Access to a positive definite `Q` around a centre `b`, tracking the
/// current iterate's offset `e = γ − b`.
pub trait QuadraticModel {
    fn dim(&self) -> usize;
    /// `Q_jj`
    fn curvature(&self, j: usize) -> f64;
    /// `(Q e)_j` at the current iterate.
    fn gradient(&self, j: usize) -> f64;
    /// Records that `γ_j` (and hence `e_j`) moved by `delta`.
    fn update(&mut self, j: usize, delta: f64);
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CdOptions {
    /// Stop when the largest coordinate move in a full sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions {
            tol: 1e-7,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CdResult {
    pub gamma: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// Runs coordinate descent from `γ = centre`. After each full pass the
/// solver iterates on the current support until it settles, then re-checks
/// with a full pass.
pub fn coordinate_descent<M: QuadraticModel>(
    model: &mut M,
    centre: &[f64],
    alpha: &[f64],
    opts: CdOptions,
) -> CdResult {
    let p = model.dim();
    assert_eq!(centre.len(), p);
    assert_eq!(alpha.len(), p);
    let mut gamma = centre.to_vec();
    let curv: Vec<f64> = (0..p).map(|j| model.curvature(j)).collect();

    let step = |j: usize, gamma: &mut [f64], model: &mut M| -> f64 {
        let q = curv[j];
        let z = gamma[j] - model.gradient(j) / q;
        let new = if alpha[j].is_infinite() {
            0.0
        } else {
            soft_threshold(z, alpha[j] / q)
        };
        let delta = new - gamma[j];
        if delta != 0.0 {
            gamma[j] = new;
            model.update(j, delta);
        }
        delta.abs()
    };

    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_move = 0.0f64;
        for j in 0..p {
            max_move = max_move.max(step(j, &mut gamma, model));
        }
        if max_move < opts.tol {
            return CdResult {
                gamma,
                sweeps,
                converged: true,
            };
        }
        let active: Vec<usize> = (0..p).filter(|&j| gamma[j] != 0.0).collect();
        while sweeps < opts.max_sweeps {
            sweeps += 1;
            let mut m = 0.0f64;
            for &j in &active {
                m = m.max(step(j, &mut gamma, model));
            }
            if m < opts.tol {
                break;
            }
        }
    }
    CdResult {
        gamma,
        sweeps,
        converged: false,
    }
}

/// Explicit dense `Q` (row-major `p × p`); for small problems and checks.
pub struct DenseQuadratic<'a> {
    q: &'a [f64],
    p: usize,
    qe: Vec<f64>,
}

impl<'a> DenseQuadratic<'a> {
    pub fn new(q: &'a [f64], p: usize) -> Self {
        assert_eq!(q.len(), p * p);
        DenseQuadratic {
            q,
            p,
            qe: vec![0.0; p],
        }
    }
}

impl QuadraticModel for DenseQuadratic<'_> {
    fn dim(&self) -> usize {
        self.p
    }

    fn curvature(&self, j: usize) -> f64 {
        self.q[j * self.p + j]
    }

    fn gradient(&self, j: usize) -> f64 {
        self.qe[j]
    }

    fn update(&mut self, j: usize, delta: f64) {
        // Q symmetric: column j equals row j.
        let row = &self.q[j * self.p..(j + 1) * self.p];
        crate::matrix::axpy(delta, row, &mut self.qe);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(1.0, 0.3), 0.7);
        assert_eq!(soft_threshold(-1.0, 0.3), -0.7);
        assert_eq!(soft_threshold(0.2, 0.3), 0.0);
        assert_eq!(soft_threshold(5.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn diagonal_problem_is_soft_threshold() {
        let q = [2.0, 0.0, 0.0, 4.0];
        let mut m = DenseQuadratic::new(&q, 2);
        let r = coordinate_descent(&mut m, &[1.0, -1.0], &[1.0, 1.0], CdOptions::default());
        assert!(r.converged);
        assert!((r.gamma[0] - 0.5).abs() < 1e-12);
        assert!((r.gamma[1] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_returns_centre() {
        let q = [2.0, 0.5, 0.5, 1.0];
        let mut m = DenseQuadratic::new(&q, 2);
        let r = coordinate_descent(&mut m, &[0.3, -0.2], &[0.0, 0.0], CdOptions::default());
        assert_eq!(r.gamma, vec![0.3, -0.2]);
        assert_eq!(r.sweeps, 1);
    }

    #[test]
    fn infinite_penalty_forces_zero() {
        let q = [2.0, 0.5, 0.5, 1.0];
        let mut m = DenseQuadratic::new(&q, 2);
        let r = coordinate_descent(&mut m, &[3.0, 1.0], &[f64::INFINITY, 0.0], CdOptions::default());
        assert_eq!(r.gamma[0], 0.0);
        // remaining coordinate minimizes 0.5*q11*(g1-1)^2 + q01*(0-3)*(g1-1)
        let expect = 1.0 + 0.5 * 3.0 / 1.0;
        assert!((r.gamma[1] - expect).abs() < 1e-9);
    }
}
