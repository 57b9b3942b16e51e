//! Bound-constrained Levenberg–Marquardt with finite-difference Jacobians,
//! and a multistart driver over it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the projected gradient of `½·mean(r²)`.
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-13,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `½·mean(r²)`.
    pub cost: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

fn half_mean_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

fn finite(r: &[f64]) -> bool {
    r.iter().all(|v| v.is_finite())
}

struct Problem<'a, F> {
    f: &'a F,
    lower: &'a [f64],
    upper: &'a [f64],
    opts: LmOptions,
}

impl<F> Problem<'_, F>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    fn eval(&self, x: &[f64]) -> Option<Vec<f64>> {
        (self.f)(x).filter(|r| !r.is_empty() && finite(r))
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn jacobian(&self, x: &[f64], r: &[f64]) -> Option<DMatrix<f64>> {
        let (m, n) = (r.len(), x.len());
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let h = self.opts.fd_step * x[j].abs().max(1.0);
            let can_up = x[j] + h <= self.upper[j];
            let can_down = x[j] - h >= self.lower[j];
            let mut xp = x.to_vec();
            let column: Vec<f64> = match (can_up, can_down) {
                (true, true) => {
                    xp[j] = x[j] + h;
                    let rp = self.eval(&xp)?;
                    xp[j] = x[j] - h;
                    let rm = self.eval(&xp)?;
                    rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
                }
                (true, false) => {
                    xp[j] = x[j] + h;
                    let rp = self.eval(&xp)?;
                    rp.iter().zip(r).map(|(a, b)| (a - b) / h).collect()
                }
                (false, true) => {
                    xp[j] = x[j] - h;
                    let rm = self.eval(&xp)?;
                    r.iter().zip(&rm).map(|(a, b)| (a - b) / h).collect()
                }
                (false, false) => vec![0.0; m],
            };
            for (i, v) in column.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        Some(jac)
    }

    fn projected_gradient_norm(&self, x: &[f64], g: &DVector<f64>) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let at_lo = xi <= self.lower[i] && g[i] > 0.0;
                let at_hi = xi >= self.upper[i] && g[i] < 0.0;
                if at_lo || at_hi {
                    0.0
                } else {
                    g[i].abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Minimizes `½·mean(f(x)²)` subject to `lower ≤ x ≤ upper`. Returns `None`
/// when the model cannot be evaluated at the (clamped) start.
pub(crate) fn levenberg_marquardt<F>(
    f: &F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: LmOptions,
) -> Option<LmOutcome>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let prob = Problem {
        f,
        lower,
        upper,
        opts,
    };
    let mut x = x0.to_vec();
    prob.clamp(&mut x);
    let mut r = prob.eval(&x)?;
    let m = r.len() as f64;
    let mut cost = half_mean_sq(&r);
    let mut mu: Option<f64> = None;
    let mut gnorm = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        let jac = prob.jacobian(&x, &r)?;
        let rv = DVector::from_column_slice(&r);
        let g = jac.tr_mul(&rv) / m;
        let a = jac.tr_mul(&jac) / m;
        gnorm = prob.projected_gradient_norm(&x, &g);
        if gnorm < opts.gradient_tolerance {
            break;
        }
        iterations += 1;
        let diag: Vec<f64> = (0..x.len()).map(|i| a[(i, i)].max(1e-12)).collect();
        let mut lambda = mu.unwrap_or(1e-3);

        let mut accepted = false;
        let mut stalled = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for (i, d) in diag.iter().enumerate() {
                damped[(i, i)] += lambda * d;
            }
            let step = match damped.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            prob.clamp(&mut trial);
            let moved = trial
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let size = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if moved <= opts.step_tolerance * (size + opts.step_tolerance) {
                stalled = true;
                break;
            }
            if let Some(rt) = prob.eval(&trial) {
                let ct = half_mean_sq(&rt);
                if ct < cost {
                    x = trial;
                    r = rt;
                    cost = ct;
                    accepted = true;
                    lambda = (lambda / 3.0).max(1e-12);
                    break;
                }
            }
            lambda *= 4.0;
        }
        mu = Some(lambda);
        if !accepted || stalled {
            break;
        }
    }

    if iterations == opts.max_iterations || gnorm.is_infinite() {
        let jac = prob.jacobian(&x, &r)?;
        let g = jac.tr_mul(&DVector::from_column_slice(&r)) / m;
        gnorm = prob.projected_gradient_norm(&x, &g);
    }
    Some(LmOutcome {
        params: x,
        cost,
        residuals: r,
        iterations,
        gradient_norm: gnorm,
        converged: gnorm < opts.gradient_tolerance,
    })
}

/// Runs [`levenberg_marquardt`] from every start and keeps the lowest cost.
/// Ties go to the earlier start, so the result does not depend on threads.
pub(crate) fn multistart<F>(
    f: &F,
    starts: &[Vec<f64>],
    lower: &[f64],
    upper: &[f64],
    opts: LmOptions,
) -> Option<LmOutcome>
where
    F: Fn(&[f64]) -> Option<Vec<f64>> + Sync,
{
    let outcomes: Vec<Option<LmOutcome>> = starts
        .par_iter()
        .map(|s| levenberg_marquardt(f, s, lower, upper, opts))
        .collect();
    outcomes
        .into_iter()
        .flatten()
        .filter(|o| o.cost.is_finite())
        .reduce(|best, o| {
            let better = o.cost < best.cost
                || (o.cost == best.cost && o.converged && !best.converged);
            if better {
                o
            } else {
                best
            }
        })
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
