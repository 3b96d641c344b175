use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cavi::{OptimizerConfig, QuadratureSettings};
use crate::divergence::{DiscreteDirection, DEFAULT_BINS, DEFAULT_WIDEN};
use crate::error::{Error, Result};
use crate::models::{LikelihoodMode, ObjectiveScale};
use crate::stochastic::CovMatrix;
use crate::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Conjugate,
    Tdf,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Conjugate => "conjugate",
            ExperimentKind::Tdf => "tdf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepBudget {
    pub total_steps: usize,
    pub burn_in: usize,
}

/// Simulated data. The conjugate study reads `mean`, `cov` and `prior_var`;
/// the t-df study reads `corr`, `dfs` and `likelihood_mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSettings {
    pub n: usize,
    pub mean: Vec<f64>,
    pub cov: CovMatrix,
    pub prior_var: f64,
    pub corr: CovMatrix,
    pub dfs: Vec<f64>,
    pub likelihood_mode: LikelihoodMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// Full MCMC baseline, or the reference chain in the t-df study.
    pub mcmc: StepBudget,
    pub hybrid: StepBudget,
    /// Random-walk proposal standard deviation per coordinate.
    pub step_sizes: Vec<f64>,
    pub cavi: OptimizerConfig,
    pub quad: QuadratureSettings,
    /// How numerical CAVI (cold and hybrid) evaluates the joint.
    pub numerical_objective: ObjectiveScale,
}

/// Initial variational parameters, one `(a, b)` pair per factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorInit {
    pub name: String,
    pub params: Vec<(f64, f64)>,
}

/// Starting state for a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointInit {
    pub name: String,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inits {
    /// Cold-start CAVI runs.
    pub cavi: Vec<FactorInit>,
    /// MCMC and hybrid runs.
    pub chain: Vec<PointInit>,
    /// Start of the t-df reference chain.
    pub reference: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlSettings {
    pub bins: usize,
    pub widen: f64,
    pub direction: DiscreteDirection,
}

impl Default for KlSettings {
    fn default() -> Self {
        KlSettings {
            bins: DEFAULT_BINS,
            widen: DEFAULT_WIDEN,
            direction: DiscreteDirection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: RngSeed,
    pub output_dir: PathBuf,
    pub data: DataSettings,
    pub budgets: Budgets,
    pub inits: Inits,
    pub kl: KlSettings,
}

fn factor_init(name: &str, params: &[(f64, f64)]) -> FactorInit {
    FactorInit {
        name: name.into(),
        params: params.to_vec(),
    }
}

fn point_init(name: &str, point: &[f64]) -> PointInit {
    PointInit {
        name: name.into(),
        point: point.to_vec(),
    }
}

impl ExperimentConfig {
    /// Default run matrix for the given study.
    pub fn default_for(kind: ExperimentKind) -> Self {
        let data = DataSettings {
            n: 100,
            mean: vec![27.0, 13.0],
            cov: CovMatrix::from_rows(&[vec![38.0, 0.8], vec![0.8, 4.0]])
                .expect("valid default covariance"),
            prior_var: 50.0,
            corr: CovMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]])
                .expect("valid default correlation"),
            dfs: vec![8.0, 50.0],
            likelihood_mode: LikelihoodMode::MarginalProduct,
        };
        match kind {
            ExperimentKind::Conjugate => ExperimentConfig {
                experiment: kind,
                seed: RngSeed(2024),
                output_dir: PathBuf::from("results"),
                data,
                budgets: Budgets {
                    mcmc: StepBudget {
                        total_steps: 20_000,
                        burn_in: 15_000,
                    },
                    hybrid: StepBudget {
                        total_steps: 1_000,
                        burn_in: 900,
                    },
                    step_sizes: vec![1.0, 0.35],
                    cavi: OptimizerConfig::default(),
                    quad: QuadratureSettings::default(),
                    numerical_objective: ObjectiveScale::Density,
                },
                inits: Inits {
                    cavi: vec![
                        factor_init("lambda1", &[(10.0, 1.0), (10.0, 1.0)]),
                        factor_init("lambda2", &[(25.0, 1.0), (10.0, 1.0)]),
                        factor_init("lambda3", &[(10.0, 1.0), (20.0, 1.0)]),
                    ],
                    chain: vec![
                        point_init("mu1", &[10.0, 10.0]),
                        point_init("mu2", &[25.0, 10.0]),
                        point_init("mu3", &[10.0, 20.0]),
                    ],
                    reference: vec![10.0, 10.0],
                },
                kl: KlSettings::default(),
            },
            ExperimentKind::Tdf => ExperimentConfig {
                experiment: kind,
                seed: RngSeed(2024),
                output_dir: PathBuf::from("results"),
                data,
                budgets: Budgets {
                    mcmc: StepBudget {
                        total_steps: 20_000,
                        burn_in: 2_000,
                    },
                    hybrid: StepBudget {
                        total_steps: 500,
                        burn_in: 400,
                    },
                    step_sizes: vec![1.0, 1.0],
                    cavi: OptimizerConfig::default(),
                    quad: QuadratureSettings::default(),
                    numerical_objective: ObjectiveScale::Log,
                },
                inits: Inits {
                    cavi: vec![
                        factor_init("lambda1", &[(10.0, 10.0), (10.0, 10.0)]),
                        factor_init("lambda2", &[(3.2, 0.6), (1.7, 6.9)]),
                        factor_init("lambda3", &[(1.7, 6.9), (3.2, 0.6)]),
                    ],
                    chain: vec![
                        point_init("nu1", &[4.0, 4.0]),
                        point_init("nu2", &[30.0, 30.0]),
                    ],
                    reference: vec![10.0, 10.0],
                },
                kl: KlSettings::default(),
            },
        }
    }

    /// Parses a TOML document. Only `experiment` is required; every other
    /// key overrides the defaults of that study.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse()?;
        let kind = match user.get("experiment") {
            Some(v) => v
                .clone()
                .try_into::<ExperimentKind>()
                .map_err(|e| Error::Config(format!("experiment: {e}")))?,
            None => return Err(Error::Config("missing key `experiment`".into())),
        };
        let mut merged = match toml::Value::try_from(Self::default_for(kind)) {
            Ok(toml::Value::Table(t)) => t,
            other => return Err(Error::Config(format!("serializing defaults: {other:?}"))),
        };
        merge(&mut merged, user);
        let cfg: ExperimentConfig = toml::Value::Table(merged).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let d = match self.experiment {
            ExperimentKind::Conjugate => self.data.mean.len(),
            ExperimentKind::Tdf => self.data.dfs.len(),
        };
        if self.data.n == 0 {
            return Err(Error::Config("data.n must be positive".into()));
        }
        if self.inits.cavi.is_empty() || self.inits.chain.is_empty() {
            return Err(Error::Config("named inits must be nonempty".into()));
        }
        for b in [self.budgets.mcmc, self.budgets.hybrid] {
            if b.total_steps == 0 || b.burn_in >= b.total_steps {
                return Err(Error::Config(format!("invalid step budget {b:?}")));
            }
        }
        if self.budgets.step_sizes.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: self.budgets.step_sizes.len(),
            });
        }
        for init in &self.inits.cavi {
            if init.params.len() != d {
                return Err(Error::Config(format!(
                    "init `{}` needs {d} factors",
                    init.name
                )));
            }
        }
        for init in &self.inits.chain {
            if init.point.len() != d {
                return Err(Error::Config(format!(
                    "init `{}` needs {d} coordinates",
                    init.name
                )));
            }
        }
        if self.kl.bins < 2 || !(self.kl.widen >= 0.0) {
            return Err(Error::Config(format!(
                "invalid KL grid settings {:?}",
                self.kl
            )));
        }
        self.budgets.cavi.validate()?;
        self.budgets.quad.validate()
    }
}

/// Recursive table merge; arrays and scalars in `over` replace `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
