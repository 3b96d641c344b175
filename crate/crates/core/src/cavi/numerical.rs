use std::time::Instant;

use super::elbo::{elbo, expected_coordinate_term, expected_log_joint};
use super::factor::{Factor, MeanFieldPosterior, QuadratureSettings};
use super::optimize::{minimize_bounded_newton_cg, NewtonCgOptions};
use super::{relative_change, CaviTrace, OptimizerConfig};
use crate::error::{Error, Result};
use crate::models::LogJoint;

/// Optimizer coordinates for a factor: `(mean, ln variance)` for Gaussian
/// factors and `(ln shape, ln scale)` for shifted-Gamma factors.
fn to_search_space(f: &Factor) -> [f64; 2] {
    let p = f.params();
    match f {
        Factor::Gaussian(_) => [p[0], p[1].ln()],
        Factor::ShiftedGamma(_) => [p[0].ln(), p[1].ln()],
    }
}

fn from_search_space(template: &Factor, x: &[f64]) -> Result<Factor> {
    let p = match template {
        Factor::Gaussian(_) => [x[0], x[1].exp()],
        Factor::ShiftedGamma(_) => [x[0].exp(), x[1].exp()],
    };
    template.with_params(p)
}

fn search_bounds(template: &Factor, cfg: &OptimizerConfig) -> ([f64; 2], [f64; 2]) {
    let b = cfg.bounds.for_factor(template);
    match template {
        Factor::Gaussian(_) => ([b[0].0, b[1].0.ln()], [b[0].1, b[1].1.ln()]),
        Factor::ShiftedGamma(_) => ([b[0].0.ln(), b[1].0.ln()], [b[0].1.ln(), b[1].1.ln()]),
    }
}

/// ELBO as a function of factor `j` alone, up to terms that do not depend
/// on it.
fn factor_objective<M: LogJoint + ?Sized>(
    logjoint: &M,
    q: &MeanFieldPosterior,
    j: usize,
    candidate: &Factor,
    quad: &QuadratureSettings,
) -> Result<f64> {
    if logjoint.is_additive() {
        Ok(expected_coordinate_term(logjoint, j, candidate, quad) + candidate.entropy())
    } else {
        let mut trial = q.clone();
        trial.set_factor(j, *candidate);
        Ok(expected_log_joint(logjoint, &trial, quad)? + candidate.entropy())
    }
}

/// Block coordinate ascent on the quadrature ELBO. Each sweep visits the
/// factors in order and maximizes the ELBO over that factor's parameter
/// pair with a bounded Newton–CG search (central-difference derivatives on
/// log-transformed positive parameters). Returns the best `q` seen.
pub fn cavi_numerical<M: LogJoint + ?Sized>(
    logjoint: &M,
    init: &MeanFieldPosterior,
    quad: &QuadratureSettings,
    cfg: &OptimizerConfig,
) -> Result<(MeanFieldPosterior, CaviTrace)> {
    cfg.validate()?;
    quad.validate()?;
    if init.dim() != logjoint.dim() {
        return Err(Error::Dimension {
            expected: logjoint.dim(),
            actual: init.dim(),
        });
    }
    if let Some(bad) = init.factors().iter().position(|f| !cfg.bounds.contains(f)) {
        return Err(Error::InvalidInitialization(format!(
            "factor {bad} parameters {:?} lie outside the optimizer bounds",
            init.factor(bad).params()
        )));
    }
    let start = Instant::now();
    let initial = elbo(logjoint, init, quad)?;
    if !initial.is_finite() {
        return Err(Error::InvalidInitialization(format!(
            "ELBO at initialization is {initial}"
        )));
    }

    let opts = NewtonCgOptions {
        max_iter: cfg.inner_max_iter,
        grad_tol: cfg.inner_tol,
        fd_rel_step: cfg.fd_rel_step,
    };
    let mut q = init.clone();
    let mut best = (initial, q.clone());
    let mut elbos = vec![initial];
    let mut bound_hits = 0;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        for j in 0..q.dim() {
            let template = *q.factor(j);
            let (lower, upper) = search_bounds(&template, cfg);
            let x0 = to_search_space(&template);
            let objective = |x: &[f64]| -> f64 {
                match from_search_space(&template, x)
                    .and_then(|cand| factor_objective(logjoint, &q, j, &cand, quad))
                {
                    Ok(v) if v.is_finite() => -v,
                    _ => f64::INFINITY,
                }
            };
            let res = minimize_bounded_newton_cg(objective, &x0, &lower, &upper, &opts);
            if res.at_bound {
                bound_hits += 1;
            }
            let updated = from_search_space(&template, &res.x)?;
            q.set_factor(j, updated);
        }
        let value = elbo(logjoint, &q, quad)?;
        let prev = *elbos.last().expect("non-empty");
        elbos.push(value);
        if value > best.0 {
            best = (value, q.clone());
        }
        if relative_change(prev, value) < cfg.elbo_rel_tol {
            converged = true;
            break;
        }
    }
    Ok((
        best.1,
        CaviTrace {
            elbo_per_sweep: elbos,
            sweeps,
            converged,
            wall_time_s: start.elapsed().as_secs_f64(),
            bound_hits,
        },
    ))
}
