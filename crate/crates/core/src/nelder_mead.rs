//! Box-clamped Nelder–Mead simplex minimizer.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Converged when the spread of simplex values is below
    /// `ftol · (1 + |f_best|)` and its diameter below `xtol`.
    pub ftol: f64,
    pub xtol: f64,
    pub max_evals: usize,
}

impl NelderMeadOptions {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        NelderMeadOptions {
            lower,
            upper,
            initial_step: 1.0,
            ftol: 1e-6,
            xtol: 1e-5,
            max_evals: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` starting from `x0`. Every trial point is clamped into the
/// box; non-finite objective values are treated as `+∞`.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(opts.lower.len(), dim);
    assert_eq!(opts.upper.len(), dim);
    let clamp = |x: &mut Vec<f64>| {
        for ((v, lo), hi) in x.iter_mut().zip(&opts.lower).zip(&opts.upper) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    clamp(&mut start);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..dim {
        let mut v = start.clone();
        let step = opts.initial_step;
        v[i] = if v[i] + step <= opts.upper[i] {
            v[i] + step
        } else {
            v[i] - step
        };
        clamp(&mut v);
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = if worst.is_finite() {
            worst - best
        } else {
            f64::INFINITY
        };
        let diameter = simplex
            .iter()
            .skip(1)
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.ftol * (1.0 + best.abs()) && diameter <= opts.xtol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            clamp(&mut p);
            p
        };

        let xr = along(REFLECT);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[dim].1 {
            let xc = along(CONTRACT * REFLECT);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best_x
                .iter()
                .zip(&item.0)
                .map(|(b, v)| b + SHRINK * (v - b))
                .collect();
            clamp(&mut x);
            let fx = eval(&x, &mut evals);
            *item = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f,
        evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let opts = NelderMeadOptions {
            max_evals: 20_000,
            xtol: 1e-8,
            ftol: 1e-12,
            ..NelderMeadOptions::new(vec![-5.0; 2], vec![5.0; 2])
        };
        let r = minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &opts,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn respects_bounds() {
        let opts = NelderMeadOptions::new(vec![0.0], vec![2.0]);
        let r = minimize(|x| (x[0] - 10.0).powi(2), &[1.0], &opts);
        assert!((r.x[0] - 2.0).abs() < 1e-5);
        let r = minimize(|x| x[0], &[1.0], &opts);
        assert!(r.x[0].abs() < 1e-5);
    }

    #[test]
    fn never_worse_than_start() {
        let opts = NelderMeadOptions::new(vec![-3.0; 3], vec![3.0; 3]);
        let f = |x: &[f64]| (x[0] * 3.0).sin() + x[1].cos() * x[2];
        let x0 = [0.3, -1.0, 2.0];
        let r = minimize(f, &x0, &opts);
        assert!(r.f <= f(&x0));
    }

    #[test]
    fn stops_at_eval_budget() {
        let opts = NelderMeadOptions {
            max_evals: 10,
            ..NelderMeadOptions::new(vec![-5.0; 2], vec![5.0; 2])
        };
        let r = minimize(|x| x[0] * x[0] + x[1] * x[1], &[4.0, 4.0], &opts);
        assert!(!r.converged);
        assert!(r.evals >= 10);
    }

    #[test]
    fn nan_objective_is_avoided() {
        let opts = NelderMeadOptions::new(vec![-5.0], vec![5.0]);
        let r = minimize(|x| if x[0] > 1.0 { f64::NAN } else { (x[0] - 0.5).powi(2) }, &[0.0], &opts);
        assert!((r.x[0] - 0.5).abs() < 1e-4);
    }
}
