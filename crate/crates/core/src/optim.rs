//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Projected L-BFGS with an Armijo backtracking line search. Variables that
//! sit on a bound with the gradient pushing outward are frozen for the step.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

const MEMORY: usize = 8;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_f_tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            rel_f_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `f` writes the gradient into its second argument and returns the value,
/// or `None` where the objective is undefined (treated as +inf).
pub(crate) fn minimize_box<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], settings: Settings) -> Option<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> Option<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g).filter(|v| v.is_finite())?;

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut g_new = vec![0.0; n];

    for _ in 0..settings.max_iter {
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let pg_norm = libm::sqrt((0..n).filter(|&i| free[i]).map(|i| g[i] * g[i]).sum::<f64>());
        if pg_norm < settings.grad_tol {
            break;
        }

        // two-loop recursion on the free subspace
        let mut q: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = (0..n).map(|i| if free[i] { -q[i] } else { 0.0 }).collect();
        if dot(&dir, &g) >= 0.0 {
            history.clear();
            dir = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        if history.is_empty() {
            // keep the first step inside a unit box in log-space
            let norm = libm::sqrt(dot(&dir, &dir));
            if norm > 1.0 {
                dir.iter_mut().for_each(|v| *v /= norm);
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, lower, upper);
            let decrease: f64 = g
                .iter()
                .zip(trial.iter().zip(&x))
                .map(|(gi, (t, xi))| gi * (t - xi))
                .sum();
            if let Some(ft) = f(&trial, &mut g_new).filter(|v| v.is_finite()) {
                if ft <= fx + ARMIJO * decrease {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_next, f_next)) = accepted else {
            break;
        };

        let s: Vec<f64> = x_next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let f_change = (fx - f_next).abs();
        x = x_next;
        fx = f_next;
        g.copy_from_slice(&g_new);
        if f_change <= settings.rel_f_tol * (1.0 + fx.abs()) {
            break;
        }
    }
    Some(Minimum { x, value: fx })
}
