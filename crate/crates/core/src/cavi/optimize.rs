//! Box-constrained truncated Newton (Newton–CG) minimizer for small problems,
//! with derivatives from central differences.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonCgOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's largest entry falls below this.
    pub grad_tol: f64,
    /// Relative finite-difference step.
    pub fd_rel_step: f64,
}

impl Default for NewtonCgOptions {
    fn default() -> Self {
        NewtonCgOptions {
            max_iter: 50,
            grad_tol: 1e-6,
            fd_rel_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub fun: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Some coordinate ended on its bound.
    pub at_bound: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) -> bool {
    let mut clamped = false;
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        if *v < *lo {
            *v = *lo;
            clamped = true;
        } else if *v > *hi {
            *v = *hi;
            clamped = true;
        }
    }
    clamped
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0` (clamped
/// into the box first).
///
/// Each iteration estimates the gradient and Hessian by central differences,
/// fixes coordinates pinned at a bound with the gradient pushing outward,
/// solves the Newton system on the rest by conjugate gradients (falling back
/// to the steepest-descent direction on non-positive curvature), and takes a
/// projected Armijo backtracking step.
pub fn minimize_bounded_newton_cg<F>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NewtonCgOptions,
) -> MinimizeResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n);
    let mut f = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    clamp_into(&mut x, lower, upper);
    let mut fx = f.call(&x);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let h: Vec<f64> = x
            .iter()
            .map(|v| opts.fd_rel_step * v.abs().max(1.0))
            .collect();
        let (grad, hess) = fd_derivatives(&mut f, &x, fx, &h, lower, upper);

        let free: Vec<bool> = (0..n)
            .map(|i| {
                let pinned_low = x[i] <= lower[i] && grad[i] > 0.0;
                let pinned_high = x[i] >= upper[i] && grad[i] < 0.0;
                !(pinned_low || pinned_high)
            })
            .collect();
        let pg_norm = (0..n)
            .filter(|&i| free[i])
            .map(|i| grad[i].abs())
            .fold(0.0, f64::max);
        if !pg_norm.is_finite() {
            break;
        }
        if pg_norm <= opts.grad_tol {
            converged = true;
            break;
        }

        let dir = truncated_cg(&hess, &grad, &free);
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        let dir = if slope < 0.0 {
            dir
        } else {
            (0..n)
                .map(|i| if free[i] { -grad[i] } else { 0.0 })
                .collect()
        };

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + alpha * d).collect();
            clamp_into(&mut trial, lower, upper);
            let decrease: f64 = trial
                .iter()
                .zip(&x)
                .zip(&grad)
                .map(|((t, v), g)| g * (t - v))
                .sum();
            let ft = f.call(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * decrease && ft <= fx {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, ft)) => {
                let step = trial
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let improvement = fx - ft;
                x = trial;
                fx = ft;
                if step <= 1e-14 * x.iter().map(|v| v.abs()).fold(1.0, f64::max)
                    || improvement <= 1e-15 * fx.abs().max(1.0)
                {
                    converged = true;
                    break;
                }
            }
            None => {
                // No descent along a direction of negative slope: the
                // finite-difference gradient is at the noise level.
                converged = true;
                break;
            }
        }
    }

    let at_bound = x
        .iter()
        .zip(lower.iter().zip(upper))
        .any(|(v, (lo, hi))| *v <= *lo || *v >= *hi);
    MinimizeResult {
        x,
        fun: fx,
        iterations,
        evaluations: f.evals,
        converged,
        at_bound,
    }
}

/// Central-difference gradient and Hessian; steps that would leave the box
/// are mirrored to the inside.
fn fd_derivatives<F: FnMut(&[f64]) -> f64>(
    f: &mut Counted<F>,
    x: &[f64],
    fx: f64,
    h: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = x.len();
    // Shift the stencil centre inside the box when a bound is within one step.
    let centre: Vec<f64> = (0..n)
        .map(|i| {
            x[i].clamp(lower[i] + h[i], upper[i] - h[i])
                .max(lower[i])
                .min(upper[i])
        })
        .collect();
    let shifted = centre != x;
    let f0 = if shifted { f.call(&centre) } else { fx };

    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut p = centre.clone();
    for i in 0..n {
        p[i] = centre[i] + h[i];
        plus[i] = f.call(&p);
        p[i] = centre[i] - h[i];
        minus[i] = f.call(&p);
        p[i] = centre[i];
    }
    let grad: Vec<f64> = (0..n)
        .map(|i| (plus[i] - minus[i]) / (2.0 * h[i]))
        .collect();
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        hess[i][i] = (plus[i] - 2.0 * f0 + minus[i]) / (h[i] * h[i]);
        for j in (i + 1)..n {
            let mut eval = |si: f64, sj: f64| {
                p[i] = centre[i] + si * h[i];
                p[j] = centre[j] + sj * h[j];
                let v = f.call(&p);
                p[i] = centre[i];
                p[j] = centre[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    (grad, hess)
}

/// Approximately solves `H p = -g` on the free coordinates by conjugate
/// gradients, stopping at the first direction of non-positive curvature.
fn truncated_cg(hess: &[Vec<f64>], grad: &[f64], free: &[bool]) -> Vec<f64> {
    let n = grad.len();
    let mask = |v: &mut Vec<f64>| {
        for i in 0..n {
            if !free[i] {
                v[i] = 0.0;
            }
        }
    };
    let hv = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                if free[i] {
                    (0..n).filter(|&j| free[j]).map(|j| hess[i][j] * v[j]).sum()
                } else {
                    0.0
                }
            })
            .collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut p = vec![0.0; n];
    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    mask(&mut r);
    let mut d = r.clone();
    let g_norm = dot(&r, &r).sqrt();
    let tol = (0.5f64).min(g_norm.sqrt()) * g_norm;
    for k in 0..(2 * n).max(1) {
        let hd = hv(&d);
        let curv = dot(&d, &hd);
        if curv <= 1e-14 * dot(&d, &d) {
            if k == 0 {
                return r;
            }
            break;
        }
        let rr = dot(&r, &r);
        let a = rr / curv;
        for i in 0..n {
            p[i] += a * d[i];
            r[i] -= a * hd[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol {
            break;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
    }
    p
}
