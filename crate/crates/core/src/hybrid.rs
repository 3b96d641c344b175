//! Hybrid CAVI: a short Metropolis–Hastings run whose post-burn-in moments
//! initialize the variational factors by method of moments, followed by
//! ordinary CAVI from that starting point.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cavi::{
    cavi_closed_form, cavi_numerical, CaviRecord, CaviTrace, Factor, GaussianFactor,
    MeanFieldPosterior, OptimizerConfig, QuadratureSettings, ShiftedGammaFactor,
    DEFAULT_GAMMA_SHIFT,
};
use crate::error::{Error, Result};
use crate::mcmc::{
    chain_moments, metropolis_hastings, Chain, ChainMoments, ChainSummary, MhConfig,
};
use crate::models::{DensityScale, LatentPoint, LogJoint, ObjectiveScale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorFamily {
    #[default]
    Gaussian,
    ShiftedGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub mcmc: MhConfig,
    #[serde(default)]
    pub cavi: OptimizerConfig,
    #[serde(default)]
    pub quad: QuadratureSettings,
    #[serde(default)]
    pub family: FactorFamily,
    /// Use the exact coordinate updates when the model is the conjugate
    /// Gaussian-mean model.
    #[serde(default)]
    pub closed_form: bool,
    /// Scale on which numerical CAVI evaluates the joint. MCMC always
    /// works with log densities.
    #[serde(default)]
    pub objective: ObjectiveScale,
}

impl HybridConfig {
    pub fn new(mcmc: MhConfig, family: FactorFamily) -> Self {
        HybridConfig {
            mcmc,
            cavi: OptimizerConfig::default(),
            quad: QuadratureSettings::default(),
            family,
            closed_form: false,
            objective: ObjectiveScale::Log,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.mcmc.validate(dim)?;
        if self.mcmc.total_steps - self.mcmc.burn_in < 2 {
            return Err(Error::Config(format!(
                "hybrid needs at least 2 post-burn-in samples, got {}",
                self.mcmc.total_steps - self.mcmc.burn_in
            )));
        }
        self.cavi.validate()?;
        self.quad.validate()
    }
}

fn nondegenerate(moments: &ChainMoments) -> Result<()> {
    let bad = moments.degenerate_coords();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::DegenerateMoments(bad))
    }
}

/// `N(m_i, s_i²)` per coordinate.
pub fn mom_gaussian(moments: &ChainMoments) -> Result<Vec<GaussianFactor>> {
    nondegenerate(moments)?;
    moments
        .means
        .iter()
        .zip(&moments.variances)
        .map(|(&m, &v)| GaussianFactor::new(m, v))
        .collect()
}

/// Shift-2 Gamma matching mean `m` and variance `s²`:
/// shape `(m − 2)²/s²`, scale `s²/(m − 2)`.
pub fn mom_shifted_gamma(moments: &ChainMoments) -> Result<Vec<ShiftedGammaFactor>> {
    nondegenerate(moments)?;
    moments
        .means
        .iter()
        .zip(&moments.variances)
        .enumerate()
        .map(|(i, (&m, &v))| shifted_gamma_moments(i, m, v))
        .collect()
}

fn shifted_gamma_moments(coord: usize, mean: f64, var: f64) -> Result<ShiftedGammaFactor> {
    let excess = mean - DEFAULT_GAMMA_SHIFT;
    if !(excess > 0.0) {
        return Err(Error::SupportViolation {
            coord,
            mean,
            shift: DEFAULT_GAMMA_SHIFT,
        });
    }
    ShiftedGammaFactor::new(excess * excess / var, var / excess)
}

/// Factors for `family` from chain moments. A shifted-Gamma coordinate whose
/// sample mean is at or below the shift gets shape 1 and scale
/// `max(s, 0.5)` instead of an error. Parameters outside `cfg.bounds` are
/// clamped onto them. Both cases are reported as warnings.
pub fn mom_initialization(
    moments: &ChainMoments,
    family: FactorFamily,
    cfg: &OptimizerConfig,
) -> Result<(MeanFieldPosterior, Vec<String>)> {
    nondegenerate(moments)?;
    let mut warnings = Vec::new();
    let mut factors = Vec::with_capacity(moments.means.len());
    for (i, (&m, &v)) in moments.means.iter().zip(&moments.variances).enumerate() {
        let f = match family {
            FactorFamily::Gaussian => Factor::Gaussian(GaussianFactor::new(m, v)?),
            FactorFamily::ShiftedGamma => match shifted_gamma_moments(i, m, v) {
                Ok(g) => Factor::ShiftedGamma(g),
                Err(Error::SupportViolation { .. }) => {
                    let scale = v.sqrt().max(0.5);
                    warnings.push(format!(
                        "coordinate {i}: sample mean {m} is not above the shift {DEFAULT_GAMMA_SHIFT}; \
                         using shape 1, scale {scale}"
                    ));
                    Factor::shifted_gamma(1.0, scale)?
                }
                Err(e) => return Err(e),
            },
        };
        let bounds = cfg.bounds.for_factor(&f);
        let p = f.params();
        let clamped = [
            p[0].clamp(bounds[0].0, bounds[0].1),
            p[1].clamp(bounds[1].0, bounds[1].1),
        ];
        if clamped != p {
            warnings.push(format!(
                "coordinate {i}: moment-matched parameters {p:?} clamped to {clamped:?}"
            ));
        }
        factors.push(f.with_params(clamped)?);
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok((MeanFieldPosterior::new(factors)?, warnings))
}

/// Wall-clock seconds spent in each phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub mcmc: f64,
    pub moments: f64,
    pub cavi: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct HybridRun {
    pub posterior: MeanFieldPosterior,
    pub trace: CaviTrace,
    pub chain: Chain,
    pub moments: ChainMoments,
    pub mom_init: MeanFieldPosterior,
    pub warnings: Vec<String>,
    pub wall_time_s: PhaseTimes,
}

pub fn hybrid_cavi<M: LogJoint + ?Sized>(
    model: &M,
    init: &LatentPoint,
    cfg: &HybridConfig,
) -> Result<HybridRun> {
    cfg.validate(model.dim())?;
    let t0 = Instant::now();
    let chain = metropolis_hastings(model, init, &cfg.mcmc)?;
    let t1 = Instant::now();
    let moments = chain_moments(&chain)?;
    let (mom_init, warnings) = mom_initialization(&moments, cfg.family, &cfg.cavi)?;
    let t2 = Instant::now();
    let conjugate = model.as_conjugate_gaussian().filter(|_| cfg.closed_form);
    let (posterior, trace) = match (conjugate, cfg.objective) {
        (Some(g), _) if cfg.family == FactorFamily::Gaussian => {
            cavi_closed_form(g, &mom_init, &cfg.cavi)?
        }
        (_, ObjectiveScale::Log) => cavi_numerical(model, &mom_init, &cfg.quad, &cfg.cavi)?,
        (_, ObjectiveScale::Density) => {
            cavi_numerical(&DensityScale(model), &mom_init, &cfg.quad, &cfg.cavi)?
        }
    };
    let t3 = Instant::now();
    Ok(HybridRun {
        posterior,
        trace,
        chain,
        moments,
        mom_init,
        warnings,
        wall_time_s: PhaseTimes {
            mcmc: (t1 - t0).as_secs_f64(),
            moments: (t2 - t1).as_secs_f64(),
            cavi: (t3 - t2).as_secs_f64(),
            total: (t3 - t0).as_secs_f64(),
        },
    })
}

/// Combined JSON record of one hybrid run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridReport {
    pub mcmc: ChainSummary,
    pub mom_init: MeanFieldPosterior,
    pub cavi: CaviRecord,
    pub fitted: MeanFieldPosterior,
    pub warnings: Vec<String>,
    pub wall_time_s: PhaseTimes,
}

impl HybridRun {
    pub fn report(&self) -> Result<HybridReport> {
        Ok(HybridReport {
            mcmc: self.chain.summary()?,
            mom_init: self.mom_init.clone(),
            cavi: CaviRecord::new(&self.trace, &self.posterior),
            fitted: self.posterior.clone(),
            warnings: self.warnings.clone(),
            wall_time_s: self.wall_time_s,
        })
    }
}

impl HybridReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cavi::elbo;
    use crate::models::{conjugate_posterior, GaussianMeanModel};
    use crate::stochastic::{mvn_sample, CovMatrix};
    use crate::RngSeed;
    use approx::assert_abs_diff_eq;

    fn moments(pairs: &[(f64, f64)]) -> ChainMoments {
        ChainMoments {
            means: pairs.iter().map(|p| p.0).collect(),
            variances: pairs.iter().map(|p| p.1).collect(),
        }
    }

    fn conjugate_model(seed: u64) -> GaussianMeanModel {
        let cov = CovMatrix::from_rows(&[vec![38.0, 0.8], vec![0.8, 4.0]]).unwrap();
        let data = mvn_sample(RngSeed(seed), &[27.0, 13.0], &cov, 100).unwrap();
        GaussianMeanModel::new(&data, cov, 50.0).unwrap()
    }

    #[test]
    fn gaussian_moments_are_parameters() {
        let f = mom_gaussian(&moments(&[(2.0, 2.0), (2.0, 2.0)])).unwrap();
        assert_eq!(f, vec![GaussianFactor::new(2.0, 2.0).unwrap(); 2]);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let err = mom_gaussian(&moments(&[(1.0, 1.0), (2.0, 0.0)])).unwrap_err();
        assert!(matches!(err, Error::DegenerateMoments(ref c) if c == &vec![1]));
        assert!(mom_shifted_gamma(&moments(&[(5.0, 0.0)])).is_err());
    }

    #[test]
    fn gamma_moment_examples() {
        let f = mom_shifted_gamma(&moments(&[(10.0, 4.0), (3.92, 1.152)])).unwrap();
        assert_eq!((f[0].shape, f[0].scale), (16.0, 0.5));
        assert_abs_diff_eq!(f[1].shape, 3.2, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1].scale, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn gamma_support_violation() {
        for m in [2.0, 1.5, -3.0] {
            assert!(matches!(
                mom_shifted_gamma(&moments(&[(m, 1.0)])),
                Err(Error::SupportViolation { coord: 0, .. })
            ));
        }
    }

    #[test]
    fn fallback_factor_with_warning() {
        let (q, warnings) = mom_initialization(
            &moments(&[(1.5, 0.09), (1.0, 4.0), (6.0, 2.0)]),
            FactorFamily::ShiftedGamma,
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(warnings.len(), 2);
        assert_eq!(q.factor(0).params(), [1.0, 0.5]);
        assert_eq!(q.factor(1).params(), [1.0, 2.0]);
        assert_abs_diff_eq!(q.factor(2).params()[0], 8.0, epsilon = 1e-12);
    }

    #[test]
    fn long_chain_moments_near_posterior() {
        let model = conjugate_model(7);
        let truth = conjugate_posterior(&model);
        let cfg = MhConfig {
            total_steps: 40_000,
            burn_in: 5_000,
            step_sizes: vec![1.0, 0.35],
            seed: RngSeed(3),
        };
        let chain =
            metropolis_hastings(&model, &LatentPoint::new(truth.mean.clone()).unwrap(), &cfg)
                .unwrap();
        let f = mom_gaussian(&chain_moments(&chain).unwrap()).unwrap();
        for (fi, m) in f.iter().zip(&truth.mean) {
            assert!((fi.mean - m).abs() < 0.1, "{} vs {m}", fi.mean);
        }
    }

    fn hybrid_cfg(steps: usize, burn: usize, seed: u64) -> HybridConfig {
        let mut cfg = HybridConfig::new(
            MhConfig {
                total_steps: steps,
                burn_in: burn,
                step_sizes: vec![1.0, 0.35],
                seed: RngSeed(seed),
            },
            FactorFamily::Gaussian,
        );
        cfg.quad.hermite_nodes = 16;
        cfg
    }

    #[test]
    fn budget_and_hand_off() {
        let model = conjugate_model(11);
        let cfg = hybrid_cfg(1000, 900, 5);
        let run = hybrid_cavi(&model, &LatentPoint::new(vec![10.0, 10.0]).unwrap(), &cfg).unwrap();
        assert_eq!(run.chain.len(), 1000);
        assert_eq!(run.chain.post_burn_in_len(), 100);
        assert_eq!(run.moments, chain_moments(&run.chain).unwrap());
        let start = elbo(&model, &run.mom_init, &cfg.quad).unwrap();
        assert_abs_diff_eq!(run.trace.elbo_per_sweep[0], start, epsilon = 1e-10);
    }

    #[test]
    fn recovers_conjugate_means_from_far_inits() {
        let model = conjugate_model(11);
        let truth = conjugate_posterior(&model);
        for (k, init) in [[10.0, 10.0], [25.0, 10.0], [10.0, 20.0]]
            .iter()
            .enumerate()
        {
            for objective in [ObjectiveScale::Log, ObjectiveScale::Density] {
                let mut cfg = hybrid_cfg(1000, 900, 20 + k as u64);
                cfg.objective = objective;
                let run =
                    hybrid_cavi(&model, &LatentPoint::new(init.to_vec()).unwrap(), &cfg).unwrap();
                for (m, t) in run.posterior.means().iter().zip(&truth.mean) {
                    assert!((m - t).abs() < 0.5, "{init:?} {objective:?}: {m} vs {t}");
                }
            }
        }
    }

    #[test]
    fn closed_form_flag_uses_exact_updates() {
        let model = conjugate_model(11);
        let mut cfg = hybrid_cfg(1000, 900, 5);
        cfg.closed_form = true;
        let run = hybrid_cavi(&model, &LatentPoint::new(vec![10.0, 10.0]).unwrap(), &cfg).unwrap();
        let (lambda, _) = model.natural_parameters();
        assert_abs_diff_eq!(
            run.posterior.variances()[0],
            1.0 / lambda[(0, 0)],
            epsilon = 1e-12
        );
    }

    #[test]
    fn short_budget_rejected() {
        let model = conjugate_model(11);
        let cfg = hybrid_cfg(10, 9, 5);
        assert!(matches!(
            hybrid_cavi(&model, &LatentPoint::new(vec![10.0, 10.0]).unwrap(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn report_round_trip() {
        let model = conjugate_model(11);
        let run = hybrid_cavi(
            &model,
            &LatentPoint::new(vec![25.0, 10.0]).unwrap(),
            &hybrid_cfg(300, 200, 1),
        )
        .unwrap();
        let report = run.report().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hybrid.json");
        report.write_json(&path).unwrap();
        let back: HybridReport =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, report);
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for key in ["mcmc", "mom_init", "cavi", "fitted", "wall_time_s"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
