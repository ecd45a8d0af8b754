//! Box-constrained Levenberg-Marquardt for small parameter vectors.
//!
//! Problems supply the Gauss-Newton normal equations directly, so residual
//! vectors of any length never need to be materialized.

use nalgebra::{DMatrix, DVector};

/// Cost `0.5 * |r|^2`, `J^T J` and `J^T r` at a parameter vector.
pub struct Normal {
    pub cost: f64,
    pub jtj: DMatrix<f64>,
    pub jtr: DVector<f64>,
}

pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn cost(&self, x: &[f64]) -> f64;
    fn normal(&self, x: &[f64]) -> Normal;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub ftol: f64,
    /// Stop when the step is this small relative to the parameters.
    pub xtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            ftol: 1e-10,
            xtol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

pub fn minimize<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> LmReport {
    let n = problem.n_params();
    assert_eq!(x0.len(), n);
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut nrm = problem.normal(&x);
    let mut history = vec![nrm.cost];
    let mut mu = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        if nrm.cost == 0.0 || nrm.jtr.amax() == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = nrm.jtj.clone();
            for i in 0..n {
                let d = nrm.jtj[(i, i)].max(1e-12);
                a[(i, i)] += mu * d;
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&nrm.jtr))) else {
                mu *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, lower, upper);
            let c = problem.cost(&trial);
            if c < nrm.cost {
                let moved = x
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs() / (a.abs() + opts.xtol))
                    .fold(0.0, f64::max);
                let rel = (nrm.cost - c) / nrm.cost;
                x = trial;
                nrm = problem.normal(&x);
                history.push(nrm.cost);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel < opts.ftol || moved < opts.xtol {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e16 {
                break;
            }
        }
        if !accepted {
            // No descent direction left inside the box.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LmReport {
        x,
        cost: nrm.cost,
        iterations,
        history,
        converged,
    }
}

/// Least squares over a residual closure with a forward-difference Jacobian.
pub struct ClosureProblem<F> {
    pub n: usize,
    pub residuals: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> ClosureProblem<F> {
    pub fn new(n: usize, residuals: F) -> Self {
        Self { n, residuals }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> LeastSquares for ClosureProblem<F> {
    fn n_params(&self) -> usize {
        self.n
    }

    fn cost(&self, x: &[f64]) -> f64 {
        0.5 * (self.residuals)(x).iter().map(|r| r * r).sum::<f64>()
    }

    fn normal(&self, x: &[f64]) -> Normal {
        let r0 = (self.residuals)(x);
        let m = r0.len();
        let mut jac = DMatrix::zeros(m, self.n);
        let mut xp = x.to_vec();
        for j in 0..self.n {
            let h = 1e-7 * x[j].abs().max(1e-3);
            xp[j] = x[j] + h;
            let r1 = (self.residuals)(&xp);
            for i in 0..m {
                jac[(i, j)] = (r1[i] - r0[i]) / h;
            }
            xp[j] = x[j];
        }
        let r = DVector::from_vec(r0);
        Normal {
            cost: 0.5 * r.norm_squared(),
            jtj: jac.transpose() * &jac,
            jtr: jac.transpose() * r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-1.3 * t).exp() + 0.4).collect();
        let p = ClosureProblem::new(3, |x: &[f64]| {
            ts.iter().zip(&ys).map(|(t, y)| x[0] * (-x[1] * t).exp() + x[2] - y).collect()
        });
        let r = minimize(&p, &[1.0, 0.5, 0.0], &[0.0; 3], &[10.0; 3], &LmOptions::default());
        assert!((r.x[0] - 2.5).abs() < 1e-5 && (r.x[1] - 1.3).abs() < 1e-5 && (r.x[2] - 0.4).abs() < 1e-5, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_bounds() {
        // Unconstrained optimum at x = -2; the box forces x = 0.
        let p = ClosureProblem::new(1, |x: &[f64]| vec![x[0] + 2.0]);
        let r = minimize(&p, &[1.0], &[0.0], &[5.0], &LmOptions::default());
        assert_eq!(r.x[0], 0.0);
        assert!(r.converged);
    }
}
