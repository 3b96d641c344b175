use std::time::Instant;

use serde_json::json;

use super::config::{ExperimentConfig, ExperimentKind, FactorInit, PointInit};
use super::report::{Report, Row};
use crate::cavi::{cavi_closed_form, cavi_numerical, CaviTrace, MeanFieldPosterior};
use crate::divergence::{
    kl_discrete, kl_gaussian, mean_field_as_gaussian, GridSpec, KlMethod, KlValue,
};
use crate::error::{Error, Result};
use crate::hybrid::{hybrid_cavi, FactorFamily, HybridConfig, HybridRun};
use crate::mcmc::{metropolis_hastings, Chain, MhConfig};
use crate::models::{
    conjugate_posterior, DensityScale, GaussianDensity, GaussianMeanModel, LatentPoint,
    LikelihoodMode, LogJoint, ObjectiveScale, TDegreesModel,
};
use crate::stochastic::{gaussian_copula_sample, mvn_sample, CovMatrix, Dataset};

pub const CLOSED_FORM: &str = "cavi-closed-form";
pub const NUMERICAL: &str = "cavi-numerical";
pub const MCMC: &str = "mcmc";
pub const HYBRID: &str = "hybrid-cavi";

/// Stream labels for seed derivation.
const DATA_STREAM: u64 = 0;
const MCMC_STREAM: u64 = 100;
const HYBRID_STREAM: u64 = 200;

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    match cfg.experiment {
        ExperimentKind::Conjugate => run_experiment_conjugate(cfg),
        ExperimentKind::Tdf => run_experiment_tdf(cfg),
    }
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "expected a {} experiment, got {}",
            kind.as_str(),
            cfg.experiment.as_str()
        )));
    }
    cfg.validate()
}

/// The conjugate Gaussian-mean study's simulated data.
pub fn conjugate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    mvn_sample(
        cfg.seed.derive(DATA_STREAM),
        &cfg.data.mean,
        &cfg.data.cov,
        cfg.data.n,
    )
}

/// The t-df study's copula data.
pub fn tdf_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    gaussian_copula_sample(
        cfg.seed.derive(DATA_STREAM),
        &cfg.data.corr,
        &cfg.data.dfs,
        cfg.data.n,
    )
}

pub fn conjugate_model(cfg: &ExperimentConfig) -> Result<GaussianMeanModel> {
    GaussianMeanModel::new(
        &conjugate_dataset(cfg)?,
        cfg.data.cov.clone(),
        cfg.data.prior_var,
    )
}

pub fn tdf_model(cfg: &ExperimentConfig) -> Result<TDegreesModel> {
    let corr = match cfg.data.likelihood_mode {
        LikelihoodMode::MarginalProduct => None,
        LikelihoodMode::FullCopula => Some(cfg.data.corr.clone()),
    };
    TDegreesModel::new(&tdf_dataset(cfg)?, cfg.data.likelihood_mode, corr)
}

fn mh_config(cfg: &ExperimentConfig, hybrid: bool, label: u64) -> MhConfig {
    let (budget, stream) = if hybrid {
        (cfg.budgets.hybrid, HYBRID_STREAM)
    } else {
        (cfg.budgets.mcmc, MCMC_STREAM)
    };
    MhConfig {
        total_steps: budget.total_steps,
        burn_in: budget.burn_in,
        step_sizes: cfg.budgets.step_sizes.clone(),
        seed: cfg.seed.derive(stream + label),
    }
}

fn hybrid_config(cfg: &ExperimentConfig, family: FactorFamily, label: u64) -> HybridConfig {
    HybridConfig {
        mcmc: mh_config(cfg, true, label),
        cavi: cfg.budgets.cavi,
        quad: cfg.budgets.quad,
        family,
        closed_form: false,
        objective: cfg.budgets.numerical_objective,
    }
}

fn numerical<M: LogJoint>(
    model: &M,
    init: &MeanFieldPosterior,
    cfg: &ExperimentConfig,
) -> Result<(MeanFieldPosterior, CaviTrace)> {
    match cfg.budgets.numerical_objective {
        ObjectiveScale::Log => cavi_numerical(model, init, &cfg.budgets.quad, &cfg.budgets.cavi),
        ObjectiveScale::Density => cavi_numerical(
            &DensityScale(model),
            init,
            &cfg.budgets.quad,
            &cfg.budgets.cavi,
        ),
    }
}

fn trace_notes(t: &CaviTrace) -> String {
    let mut s = format!("sweeps={} converged={}", t.sweeps, t.converged);
    if t.bound_hits > 0 {
        s.push_str(&format!(" bound_hits={}", t.bound_hits));
    }
    s
}

fn hybrid_notes(run: &HybridRun) -> String {
    let mut s = format!(
        "acceptance={:.4} {}",
        run.chain.acceptance_rate(),
        trace_notes(&run.trace)
    );
    for w in &run.warnings {
        s.push_str("; ");
        s.push_str(w);
    }
    s
}

fn infinite_note(kl: &KlValue) -> &'static str {
    if kl.is_infinite() {
        "; KL infinite: the fitted density has no representable mass where the reference does"
    } else {
        ""
    }
}

/// Mean and covariance of the post-burn-in samples.
fn chain_gaussian(chain: &Chain) -> Result<GaussianDensity> {
    let (mean, cov) = chain.post_burn_in_covariance();
    GaussianDensity::new(mean, CovMatrix::from_rows(&cov)?)
}

fn chain_params(chain: &Chain) -> serde_json::Value {
    let (mean, cov) = chain.post_burn_in_covariance();
    json!({ "mean": mean, "cov": cov })
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

fn fitted_row(
    algorithm: &str,
    init: &str,
    wall_time_s: f64,
    q: &MeanFieldPosterior,
    kl: Result<KlValue>,
    notes: String,
) -> Row {
    let params = serde_json::to_value(q).unwrap_or(serde_json::Value::Null);
    match kl {
        Ok(kl) => Row {
            algorithm: algorithm.into(),
            init: init.into(),
            wall_time_s,
            params,
            kl_nats: Some(kl.nats),
            kl_method: Some(kl.method),
            notes: format!("{notes}{}", infinite_note(&kl)),
        },
        Err(e) => Row {
            params,
            ..Row::failed(algorithm, init, wall_time_s, &e)
        },
    }
}

fn gaussian_init(init: &FactorInit) -> Result<MeanFieldPosterior> {
    MeanFieldPosterior::gaussian(&init.params)
}

fn point(init: &PointInit) -> Result<LatentPoint> {
    LatentPoint::new(init.point.clone())
}

/// Closed-form CAVI, numerical CAVI, MCMC and hybrid CAVI on the conjugate
/// Gaussian-mean model, each scored by closed-form KL against the analytic
/// posterior. Fits and chains are embedded as Gaussians.
pub fn run_experiment_conjugate(cfg: &ExperimentConfig) -> Result<Report> {
    expect_kind(cfg, ExperimentKind::Conjugate)?;
    let model = conjugate_model(cfg)?;
    let truth = conjugate_posterior(&model);
    let score = |q: &MeanFieldPosterior| kl_gaussian(&mean_field_as_gaussian(q)?, &truth);
    let mut rows = Vec::new();

    for init in &cfg.inits.cavi {
        let (out, t) = timed(|| cavi_closed_form(&model, &gaussian_init(init)?, &cfg.budgets.cavi));
        rows.push(match out {
            Ok((q, trace)) => fitted_row(
                CLOSED_FORM,
                &init.name,
                t,
                &q,
                score(&q),
                trace_notes(&trace),
            ),
            Err(e) => Row::failed(CLOSED_FORM, &init.name, t, &e),
        });
    }
    for init in &cfg.inits.cavi {
        let (out, t) = timed(|| numerical(&model, &gaussian_init(init)?, cfg));
        rows.push(match out {
            Ok((q, trace)) => {
                fitted_row(NUMERICAL, &init.name, t, &q, score(&q), trace_notes(&trace))
            }
            Err(e) => Row::failed(NUMERICAL, &init.name, t, &e),
        });
    }
    for (k, init) in cfg.inits.chain.iter().enumerate() {
        let (out, t) =
            timed(|| metropolis_hastings(&model, &point(init)?, &mh_config(cfg, false, k as u64)));
        rows.push(
            match out.map(|c| (chain_gaussian(&c).and_then(|g| kl_gaussian(&g, &truth)), c)) {
                Ok((Ok(kl), chain)) => Row {
                    algorithm: MCMC.into(),
                    init: init.name.clone(),
                    wall_time_s: t,
                    params: chain_params(&chain),
                    kl_nats: Some(kl.nats),
                    kl_method: Some(kl.method),
                    notes: format!("acceptance={:.4}", chain.acceptance_rate()),
                },
                Ok((Err(e), _)) | Err(e) => Row::failed(MCMC, &init.name, t, &e),
            },
        );
    }
    for (k, init) in cfg.inits.chain.iter().enumerate() {
        let hcfg = hybrid_config(cfg, FactorFamily::Gaussian, k as u64);
        let (out, t) = timed(|| hybrid_cavi(&model, &point(init)?, &hcfg));
        rows.push(match out {
            Ok(run) => fitted_row(
                HYBRID,
                &init.name,
                t,
                &run.posterior,
                score(&run.posterior),
                hybrid_notes(&run),
            ),
            Err(e) => Row::failed(HYBRID, &init.name, t, &e),
        });
    }
    Ok(Report { rows })
}

/// Name of the reference-chain row in the t-df report.
pub const REFERENCE_INIT: &str = "reference";

/// Reference MCMC, hybrid CAVI and cold CAVI on the t degrees-of-freedom
/// model with shifted-Gamma factors, each scored by discrete KL against the
/// reference chain's histogram on one shared grid.
pub fn run_experiment_tdf(cfg: &ExperimentConfig) -> Result<Report> {
    expect_kind(cfg, ExperimentKind::Tdf)?;
    let model = tdf_model(cfg)?;
    let mut rows = Vec::new();

    let (reference, t) = timed(|| {
        let chain = metropolis_hastings(
            &model,
            &LatentPoint::new(cfg.inits.reference.clone())?,
            &mh_config(cfg, false, 0),
        )?;
        let grid = GridSpec::from_chain(&chain, cfg.kl.bins, cfg.kl.widen)?;
        Ok((chain, grid))
    });
    let reference = match reference {
        Ok((chain, grid)) => {
            rows.push(Row {
                algorithm: MCMC.into(),
                init: REFERENCE_INIT.into(),
                wall_time_s: t,
                params: chain_params(&chain),
                kl_nats: Some(0.0),
                kl_method: Some(KlMethod::Discrete),
                notes: format!("reference chain; acceptance={:.4}", chain.acceptance_rate()),
            });
            Some((chain, grid))
        }
        Err(e) => {
            rows.push(Row::failed(MCMC, REFERENCE_INIT, t, &e));
            None
        }
    };
    let score = |q: &MeanFieldPosterior| match &reference {
        Some((chain, grid)) => kl_discrete(q, chain, grid, cfg.kl.direction),
        None => Err(Error::Config("no reference chain to score against".into())),
    };

    for (k, init) in cfg.inits.chain.iter().enumerate() {
        let hcfg = hybrid_config(cfg, FactorFamily::ShiftedGamma, k as u64);
        let (out, t) = timed(|| hybrid_cavi(&model, &point(init)?, &hcfg));
        rows.push(match out {
            Ok(run) => fitted_row(
                HYBRID,
                &init.name,
                t,
                &run.posterior,
                score(&run.posterior),
                hybrid_notes(&run),
            ),
            Err(e) => Row::failed(HYBRID, &init.name, t, &e),
        });
    }
    for init in &cfg.inits.cavi {
        let (out, t) = timed(|| {
            numerical(
                &model,
                &MeanFieldPosterior::shifted_gamma(&init.params)?,
                cfg,
            )
        });
        rows.push(match out {
            Ok((q, trace)) => {
                fitted_row(NUMERICAL, &init.name, t, &q, score(&q), trace_notes(&trace))
            }
            Err(e) => Row::failed(NUMERICAL, &init.name, t, &e),
        });
    }
    Ok(Report { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::StepBudget;

    fn small_conjugate() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Conjugate);
        cfg.budgets.mcmc = StepBudget {
            total_steps: 2_000,
            burn_in: 1_000,
        };
        cfg.budgets.quad.hermite_nodes = 12;
        cfg
    }

    fn small_tdf() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Tdf);
        cfg.budgets.mcmc = StepBudget {
            total_steps: 3_000,
            burn_in: 500,
        };
        cfg.budgets.quad.gamma_grid_nodes = 64;
        cfg
    }

    #[test]
    fn conjugate_matrix_shape() {
        let report = run_experiment_conjugate(&small_conjugate()).unwrap();
        assert_eq!(report.rows.len(), 12);
        for alg in [CLOSED_FORM, NUMERICAL, MCMC, HYBRID] {
            assert_eq!(report.by_algorithm(alg).count(), 3);
        }
        assert!(!report.has_errors(), "{report:#?}");
    }

    #[test]
    fn closed_form_rows_agree() {
        let report = run_experiment_conjugate(&small_conjugate()).unwrap();
        let kls: Vec<f64> = report
            .by_algorithm(CLOSED_FORM)
            .map(|r| r.kl_nats.unwrap())
            .collect();
        for k in &kls {
            assert!((k - kls[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn tdf_matrix_shape() {
        let report = run_experiment_tdf(&small_tdf()).unwrap();
        assert_eq!(report.rows.len(), 6);
        let reference = report.find(MCMC, REFERENCE_INIT).unwrap();
        assert_eq!(reference.kl_nats, Some(0.0));
        assert!(!report.has_errors(), "{report:#?}");
    }

    #[test]
    fn wrong_kind_rejected() {
        assert!(run_experiment_tdf(&small_conjugate()).is_err());
        assert!(run_experiment_conjugate(&small_tdf()).is_err());
    }

    #[test]
    fn row_failure_does_not_abort() {
        let mut cfg = small_conjugate();
        // Outside the optimizer's variance bounds: the numerical row fails,
        // the closed-form row for the same init still runs.
        cfg.inits.cavi[0].params = vec![(10.0, 1e-9), (10.0, 1.0)];
        let report = run_experiment_conjugate(&cfg).unwrap();
        assert_eq!(report.rows.len(), 12);
        assert!(report.find(NUMERICAL, "lambda1").unwrap().is_error());
        assert!(!report.find(NUMERICAL, "lambda2").unwrap().is_error());
        assert!(report.has_errors());
    }
}
