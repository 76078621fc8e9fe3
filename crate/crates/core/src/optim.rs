//! Projected limited-memory BFGS for box-constrained minimization.
//!
//! Variables sitting on a bound whose gradient points outward are frozen for
//! the step; the two-loop recursion runs on the remaining free variables and
//! the trial point is projected back into the box before an Armijo
//! backtracking test. Stopping follows the usual L-BFGS-B pair of criteria:
//! the infinity norm of the projected gradient, or a relative decrease of
//! the objective below `ftol`.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Projected-gradient infinity-norm tolerance.
    pub grad_tol: f64,
    /// Relative objective decrease tolerance; `0` disables it.
    pub ftol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 200,
            grad_tol: 1e-6,
            // scipy's L-BFGS-B default (factr = 1e7 times machine epsilon)
            ftol: 1e7 * f64::EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Minimizes `objective` over the box `[lower, upper]` starting at `x0`.
///
/// `objective` returns `None` where the function cannot be evaluated; the
/// line search treats that as an infinitely bad point. Returns `None` if the
/// starting point itself cannot be evaluated.
pub fn minimize_bounded<F>(
    mut objective: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LbfgsOptions,
) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);

    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };

    let mut x = x0.to_vec();
    project(&mut x);
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        // free[i] is false when x_i sits on a bound and -g pushes it out
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let pg_norm = (0..n).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg_norm < opts.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }

        let mut dir = two_loop(&g, &free, &history);
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            dir = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
            slope = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        }

        let mut step = if history.is_empty() {
            (1.0 / dir.iter().map(|d| d * d).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial);
            let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| (t - xi) * gi).sum();
            if decrease >= 0.0 && trial == x {
                break;
            }
            evaluations += 1;
            if let Some((ft, gt)) = objective(&trial) {
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + 1e-4 * decrease {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;

        let Some((x_new, f_new, g_new)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > f64::EPSILON * yy {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let rel_decrease = (f - f_new) / f.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if opts.ftol > 0.0 && rel_decrease <= opts.ftol {
            termination = Termination::FunctionTolerance;
            break;
        }
    }

    Some(Minimum {
        x,
        value: f,
        iterations,
        evaluations,
        termination,
    })
}

// Two-loop recursion restricted to free coordinates; returns -H g.
fn two_loop(g: &[f64], free: &[bool], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, f)| if *f { *x } else { 0.0 }).collect() };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    let mut q = masked(g);
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let s = masked(s);
        let a = rho * dot(&s, &q);
        for (qi, yi) in q.iter_mut().zip(y.iter().zip(free)) {
            if *yi.1 {
                *qi -= a * yi.0;
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let y = masked(y);
        let b = rho * dot(&y, &q);
        for (qi, si) in q.iter_mut().zip(s.iter().zip(free)) {
            if *si.1 {
                *qi += (a - b) * si.0;
            }
        }
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let opts = LbfgsOptions {
            ftol: 0.0,
            ..Default::default()
        };
        let m = minimize_bounded(rosenbrock, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &opts).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5, "{m:?}");
        assert!((m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
        assert_eq!(m.termination, Termination::GradientTolerance);
    }

    #[test]
    fn active_upper_bound() {
        // minimum at (1, 1) lies outside the box; the constrained optimum is (0.5, 0.25)
        let opts = LbfgsOptions::default();
        let m = minimize_bounded(rosenbrock, &[-1.0, 0.0], &[-2.0, -2.0], &[0.5, 2.0], &opts).unwrap();
        assert_eq!(m.x[0], 0.5);
        assert!((m.x[1] - 0.25).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn quadratic_with_lower_bounds() {
        // f = sum (x_i - c_i)^2, c = (-1, 2, -3), box [0, 10]^3
        let c = [-1.0, 2.0, -3.0];
        let f = |x: &[f64]| {
            let v = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            let g = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
            Some((v, g))
        };
        let m = minimize_bounded(f, &[5.0, 5.0, 5.0], &[0.0; 3], &[10.0; 3], &LbfgsOptions::default()).unwrap();
        assert_eq!(m.x[0], 0.0);
        assert!((m.x[1] - 2.0).abs() < 1e-8);
        assert_eq!(m.x[2], 0.0);
    }

    #[test]
    fn unevaluable_start_returns_none() {
        let f = |_: &[f64]| None;
        assert!(minimize_bounded(f, &[0.0], &[-1.0], &[1.0], &LbfgsOptions::default()).is_none());
    }

    #[test]
    fn backtracks_around_unevaluable_region() {
        // f undefined for x > 0.5; minimum of (x - 2)^2 on the defined part is at the edge
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                None
            } else {
                Some(((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)]))
            }
        };
        let m = minimize_bounded(f, &[0.0], &[-1.0], &[1.0], &LbfgsOptions::default()).unwrap();
        assert!(m.x[0] <= 0.5 && m.x[0] > 0.4, "{m:?}");
    }
}
