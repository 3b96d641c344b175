use std::time::Instant;

use super::factor::{Factor, MeanFieldPosterior};
use super::{relative_change, CaviTrace, OptimizerConfig};
use crate::error::{Error, Result};
use crate::models::GaussianMeanModel;

/// Exact ELBO of a Gaussian mean-field `q` under the conjugate model. The
/// log joint is quadratic with Hessian `−Λ`, so
/// `E_q[log p] = log p(m) − ½ Σ_j Λ_jj v_j`.
pub fn conjugate_gaussian_elbo(model: &GaussianMeanModel, q: &MeanFieldPosterior) -> Result<f64> {
    let (means, vars) = gaussian_params(model, q)?;
    let (lambda, _) = model.natural_parameters();
    let trace: f64 = (0..means.len()).map(|j| lambda[(j, j)] * vars[j]).sum();
    Ok(model.log_joint_at(&means)? - 0.5 * trace + q.entropy())
}

fn gaussian_params(
    model: &GaussianMeanModel,
    q: &MeanFieldPosterior,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if q.dim() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            actual: q.dim(),
        });
    }
    let mut means = Vec::with_capacity(q.dim());
    let mut vars = Vec::with_capacity(q.dim());
    for f in q.factors() {
        match f {
            Factor::Gaussian(g) => {
                means.push(g.mean);
                vars.push(g.variance);
            }
            Factor::ShiftedGamma(_) => {
                return Err(Error::Config(
                    "closed-form CAVI needs Gaussian factors".into(),
                ))
            }
        }
    }
    Ok((means, vars))
}

/// Coordinate ascent with the exact updates
/// `v_j = 1/Λ_jj` and `m_j = (b_j − Σ_{k≠j} Λ_jk m_k) / Λ_jj`,
/// where `Λ` and `b` are the model's posterior natural parameters.
pub fn cavi_closed_form(
    model: &GaussianMeanModel,
    init: &MeanFieldPosterior,
    cfg: &OptimizerConfig,
) -> Result<(MeanFieldPosterior, CaviTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let (mut means, mut vars) = gaussian_params(model, init)?;
    let (lambda, b) = model.natural_parameters();
    let d = means.len();

    let mut q = init.clone();
    let mut elbos = vec![conjugate_gaussian_elbo(model, &q)?];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_move: f64 = 0.0;
        for j in 0..d {
            let coupling: f64 = (0..d)
                .filter(|&k| k != j)
                .map(|k| lambda[(j, k)] * means[k])
                .sum();
            let m = (b[j] - coupling) / lambda[(j, j)];
            let v = 1.0 / lambda[(j, j)];
            max_move = max_move.max((m - means[j]).abs()).max((v - vars[j]).abs());
            means[j] = m;
            vars[j] = v;
            q.set_factor(j, Factor::gaussian(m, v)?);
        }
        let value = conjugate_gaussian_elbo(model, &q)?;
        let prev = *elbos.last().expect("non-empty");
        elbos.push(value);
        if relative_change(prev, value) < cfg.elbo_rel_tol && max_move < cfg.param_tol {
            converged = true;
            break;
        }
    }
    Ok((
        q,
        CaviTrace {
            elbo_per_sweep: elbos,
            sweeps,
            converged,
            wall_time_s: start.elapsed().as_secs_f64(),
            bound_hits: 0,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cavi::{elbo, QuadratureSettings};
    use crate::models::conjugate_posterior;
    use crate::stochastic::{mvn_sample, CovMatrix};
    use crate::RngSeed;
    use approx::assert_abs_diff_eq;

    fn study_model() -> GaussianMeanModel {
        let cov = CovMatrix::from_rows(&[vec![38.0, 0.8], vec![0.8, 4.0]]).unwrap();
        let data = mvn_sample(RngSeed(17), &[27.0, 13.0], &cov, 100).unwrap();
        GaussianMeanModel::new(&data, cov, 50.0).unwrap()
    }

    #[test]
    fn analytic_elbo_matches_quadrature() {
        let model = study_model();
        let q = MeanFieldPosterior::gaussian(&[(25.0, 1.0), (10.0, 1.0)]).unwrap();
        let exact = conjugate_gaussian_elbo(&model, &q).unwrap();
        let quad = elbo(&model, &q, &QuadratureSettings::default()).unwrap();
        assert_abs_diff_eq!(exact, quad, epsilon = 1e-8 * exact.abs());
    }

    #[test]
    fn fixed_point_equations_hold() {
        let model = study_model();
        let init = MeanFieldPosterior::gaussian(&[(10.0, 1.0), (10.0, 1.0)]).unwrap();
        let (q, trace) = cavi_closed_form(&model, &init, &OptimizerConfig::default()).unwrap();
        assert!(trace.converged);
        let (lambda, _) = model.natural_parameters();
        let post = conjugate_posterior(&model);
        let m = q.means();
        for j in 0..2 {
            let k = 1 - j;
            assert_abs_diff_eq!(q.variances()[j], 1.0 / lambda[(j, j)], epsilon = 1e-14);
            let rhs = post.mean[j] - lambda[(j, k)] / lambda[(j, j)] * (m[k] - post.mean[k]);
            assert_abs_diff_eq!(m[j], rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_gamma_factors() {
        let model = study_model();
        let init = MeanFieldPosterior::shifted_gamma(&[(1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert!(cavi_closed_form(&model, &init, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn one_more_sweep_is_idle() {
        let model = study_model();
        let init = MeanFieldPosterior::gaussian(&[(-40.0, 90.0), (45.0, 0.2)]).unwrap();
        let cfg = OptimizerConfig::default();
        let (q, _) = cavi_closed_form(&model, &init, &cfg).unwrap();
        let one = OptimizerConfig {
            max_sweeps: 1,
            ..cfg
        };
        let (q2, _) = cavi_closed_form(&model, &q, &one).unwrap();
        for (a, b) in q.params().iter().zip(q2.params()) {
            assert!((a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10);
        }
    }
}
