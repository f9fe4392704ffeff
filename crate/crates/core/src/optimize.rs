//! Box-constrained Nelder-Mead.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Spread of function values across the simplex.
    pub f_tol: f64,
    /// Largest coordinate distance from the best vertex.
    pub x_tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            f_tol: 1e-9,
            x_tol: 1e-9,
            max_iter: 500,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` over the box `[lower, upper]`.
///
/// Trial points are projected onto the box. Non-finite values count as `+inf`.
/// Convergence needs both tolerances to hold.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut evaluations = 0;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let project = |x: &mut [f64]| {
        for i in 0..x.len() {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut start = x0.to_vec();
    project(&mut start);
    if d == 0 {
        let v = eval(&start, &mut evaluations);
        return Minimum {
            x: start,
            f: v,
            iterations: 0,
            evaluations,
            converged: true,
        };
    }

    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..d {
        let mut v = start.clone();
        v[i] += opts.initial_step;
        if v[i] > upper[i] {
            v[i] = start[i] - opts.initial_step;
        }
        project(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evaluations)).collect();

    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let f_spread = values[d] - values[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread.abs() <= opts.f_tol && x_spread <= opts.x_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; d];
        for v in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / d as f64;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[d]).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p);
            p
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evaluations);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evaluations);
            if fe < fr {
                simplex[d] = xe;
                values[d] = fe;
            } else {
                simplex[d] = xr;
                values[d] = fr;
            }
            continue;
        }
        if fr < values[d - 1] {
            simplex[d] = xr;
            values[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[d] {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < values[d].min(fr) {
            simplex[d] = xc;
            values[d] = fc;
            continue;
        }
        for i in 1..=d {
            let mut p: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            project(&mut p);
            values[i] = eval(&p, &mut evaluations);
            simplex[i] = p;
        }
    }
    Minimum {
        x: simplex[0].clone(),
        f: values[0],
        iterations,
        evaluations,
        converged,
    }
}

/// Newton steps on central finite differences with spacing `h`.
///
/// Refines a point that a derivative-free search has already brought close to
/// an interior minimum, beyond the resolution of function-value comparisons.
/// A step is taken only when the Hessian estimate is positive definite, the
/// step is shorter than `max_step` and the value does not rise by more than
/// `f_tol`. Coordinates within `2h` of a bound leave the point unchanged.
pub fn newton_polish<F>(
    mut f: F,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    h: f64,
    max_step: f64,
    f_tol: f64,
) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x.len();
    let mut best = x.to_vec();
    let mut f_best = f(&best);
    for _ in 0..3 {
        if d == 0 || (0..d).any(|i| best[i] - 2.0 * h < lower[i] || best[i] + 2.0 * h > upper[i]) {
            break;
        }
        let mut at = |offsets: &[(usize, f64)]| {
            let mut p = best.clone();
            for &(i, s) in offsets {
                p[i] += s;
            }
            f(&p)
        };
        let mut g = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..d {
            let fp = at(&[(i, h)]);
            let fm = at(&[(i, -h)]);
            g[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * f_best + fm) / (h * h);
            for j in 0..i {
                let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                    + at(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        if !g.iter().chain(hess.iter()).all(|v| v.is_finite()) {
            break;
        }
        let Some(chol) = hess.cholesky() else { break };
        let step = -chol.solve(&g);
        let size = step.amax();
        if size > max_step {
            break;
        }
        let cand: Vec<f64> = (0..d).map(|i| (best[i] + step[i]).clamp(lower[i], upper[i])).collect();
        let f_cand = f(&cand);
        if !(f_cand <= f_best + f_tol) {
            break;
        }
        best = cand;
        f_best = f_cand;
        if size < 1e-13 {
            break;
        }
    }
    (best, f_best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let m = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2),
            &[0.0, 0.0],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            &NelderMeadOptions::default(),
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-8 && (m.x[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn minimum_on_the_bound() {
        let m = nelder_mead(|x| x[0], &[0.0], &[-3.0], &[3.0], &NelderMeadOptions::default());
        assert_eq!(m.x[0], -3.0);
    }

    #[test]
    fn rosenbrock_hits_the_cap_or_converges() {
        let opts = NelderMeadOptions {
            max_iter: 20,
            ..NelderMeadOptions::default()
        };
        let m = nelder_mead(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            &opts,
        );
        assert!(!m.converged);
        assert_eq!(m.iterations, 20);
    }

    #[test]
    fn polish_reaches_the_exact_minimum() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] - 0.1).powi(2) + 0.5 * (x[0] - 0.3) * (x[1] - 0.1);
        let (x, _) = newton_polish(f, &[0.3001, 0.0999], &[-1.0, -1.0], &[1.0, 1.0], 1e-4, 1e-2, 1e-12);
        assert!((x[0] - 0.3).abs() < 1e-10 && (x[1] - 0.1).abs() < 1e-10);
    }

    #[test]
    fn zero_dimensional() {
        let m = nelder_mead(|_| 4.0, &[], &[], &[], &NelderMeadOptions::default());
        assert!(m.converged);
        assert_eq!(m.f, 4.0);
    }
}
