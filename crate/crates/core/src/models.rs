//! Target models exposing a log-joint evaluator.
//!
//! Two models are provided: the known-covariance Gaussian-mean model with a
//! conjugate isotropic normal prior (which has an analytic posterior), and the
//! degrees-of-freedom model for Student-t marginals with an inverse-uniform
//! prior `1/ν ~ Uniform(0, ½)`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::distributions::{std_normal_quantile, StudentT};
use crate::stochastic::{CovMatrix, Dataset, GaussianCopulaDensity};

/// Unnormalized log posterior `log p(z, x)` over a latent space of fixed
/// dimension. Points outside the support evaluate to `f64::NEG_INFINITY`,
/// which samplers treat as certain rejection.
pub trait LogJoint: Sync {
    fn dim(&self) -> usize;

    fn log_joint(&self, z: &[f64]) -> f64;

    /// True when `log_joint(z) = Σ_i coordinate_term(i, z_i)`.
    fn is_additive(&self) -> bool {
        false
    }

    /// Per-coordinate term of an additive log joint; `None` otherwise.
    fn coordinate_term(&self, _coord: usize, _value: f64) -> Option<f64> {
        None
    }

    /// The conjugate Gaussian-mean model behind this evaluator, if any.
    fn as_conjugate_gaussian(&self) -> Option<&GaussianMeanModel> {
        None
    }
}

impl<T: LogJoint + ?Sized> LogJoint for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_joint(&self, z: &[f64]) -> f64 {
        (**self).log_joint(z)
    }
    fn is_additive(&self) -> bool {
        (**self).is_additive()
    }
    fn coordinate_term(&self, coord: usize, value: f64) -> Option<f64> {
        (**self).coordinate_term(coord, value)
    }
    fn as_conjugate_gaussian(&self) -> Option<&GaussianMeanModel> {
        (**self).as_conjugate_gaussian()
    }
}

/// Evaluates the wrapped model's joint as a density and then takes its
/// logarithm, i.e. `ln(exp(log p))`. Wherever the joint density underflows
/// double precision this yields `-∞`, which is how an integrator that works
/// with `p(z, x)` itself rather than its logarithm sees the model.
#[derive(Debug, Clone)]
pub struct DensityScale<M>(pub M);

impl<M: LogJoint> LogJoint for DensityScale<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_joint(&self, z: &[f64]) -> f64 {
        self.0.log_joint(z).exp().ln()
    }
}

/// How a numerical integrator evaluates the model's joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveScale {
    /// Work with `log p(z, x)` directly.
    #[default]
    Log,
    /// Go through [`DensityScale`], so underflowed regions read as `-∞`.
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint(Vec<f64>);

impl LatentPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain(format!(
                "latent point needs finite coordinates, got {coords:?}"
            )));
        }
        Ok(LatentPoint(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl AsRef<[f64]> for LatentPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity {
    pub mean: Vec<f64>,
    pub cov: CovMatrix,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, cov: CovMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::Dimension {
                expected: cov.dim(),
                actual: mean.len(),
            });
        }
        Ok(GaussianDensity { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(self.dim(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        -0.5 * (self.dim() as f64 * (2.0 * PI).ln()
            + self.cov.ln_det()
            + self.cov.mahalanobis_sq(&diff))
    }
}

/// `x_k ~ N_d(μ, Σ)` with `Σ` known and prior `μ ~ N_d(prior_mean, τ² I)`.
#[derive(Debug, Clone)]
pub struct GaussianMeanModel {
    data_cov: CovMatrix,
    precision: DMatrix<f64>,
    prior_mean: Vec<f64>,
    prior_var: f64,
    n: usize,
    data_mean: DVector<f64>,
    /// `Σ_k (x_k − x̄)ᵀ Σ⁻¹ (x_k − x̄)`
    scatter: f64,
}

impl GaussianMeanModel {
    /// Model with zero prior mean.
    pub fn new(data: &Dataset, data_cov: CovMatrix, prior_var: f64) -> Result<Self> {
        let d = data_cov.dim();
        Self::with_prior_mean(data, data_cov, vec![0.0; d], prior_var)
    }

    pub fn with_prior_mean(
        data: &Dataset,
        data_cov: CovMatrix,
        prior_mean: Vec<f64>,
        prior_var: f64,
    ) -> Result<Self> {
        if data.d() != data_cov.dim() {
            return Err(Error::Dimension {
                expected: data_cov.dim(),
                actual: data.d(),
            });
        }
        let mut model = Self::without_data(data_cov, prior_mean, prior_var)?;
        let d = data.d();
        let xbar = DVector::from_vec(data.column_means());
        let scatter = data
            .rows()
            .map(|row| {
                let diff = DVector::from_column_slice(row) - &xbar;
                model.data_cov.mahalanobis_sq(&diff)
            })
            .sum();
        debug_assert_eq!(xbar.len(), d);
        model.n = data.n();
        model.data_mean = xbar;
        model.scatter = scatter;
        Ok(model)
    }

    /// The model before any observation; its posterior is the prior.
    pub fn without_data(data_cov: CovMatrix, prior_mean: Vec<f64>, prior_var: f64) -> Result<Self> {
        let d = data_cov.dim();
        if prior_mean.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: prior_mean.len(),
            });
        }
        if !(prior_var > 0.0) || !prior_var.is_finite() {
            return Err(Error::Config(format!(
                "prior variance must be positive, got {prior_var}"
            )));
        }
        Ok(GaussianMeanModel {
            precision: data_cov.inverse(),
            data_cov,
            prior_mean,
            prior_var,
            n: 0,
            data_mean: DVector::zeros(d),
            scatter: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.data_cov.dim()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data_cov(&self) -> &CovMatrix {
        &self.data_cov
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn data_mean(&self) -> &[f64] {
        self.data_mean.as_slice()
    }

    /// Posterior precision `Λ = n Σ⁻¹ + τ⁻² I` and linear term
    /// `b = n Σ⁻¹ x̄ + τ⁻² m₀`, so that `log p(μ, x) = const − ½ μᵀΛμ + bᵀμ`.
    pub fn natural_parameters(&self) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.dim();
        let n = self.n as f64;
        let inv_tau2 = 1.0 / self.prior_var;
        let lambda = &self.precision * n + DMatrix::identity(d, d) * inv_tau2;
        let b = &self.precision * &self.data_mean * n
            + DVector::from_column_slice(&self.prior_mean) * inv_tau2;
        (lambda, b)
    }

    /// `Σ_k log N(x_k; μ, Σ) + log N(μ; m₀, τ² I)`.
    pub fn log_joint_at(&self, mu: &[f64]) -> Result<f64> {
        if mu.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: mu.len(),
            });
        }
        Ok(self.eval(mu))
    }

    fn eval(&self, mu: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let n = self.n as f64;
        let mu_v = DVector::from_column_slice(mu);
        let shift = &mu_v - &self.data_mean;
        let data_quad = self.scatter + n * shift.dot(&(&self.precision * &shift));
        let data_term = -0.5 * (n * (d * (2.0 * PI).ln() + self.data_cov.ln_det()) + data_quad);
        let prior_sq: f64 = mu
            .iter()
            .zip(&self.prior_mean)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let prior_term = -0.5 * (d * (2.0 * PI * self.prior_var).ln() + prior_sq / self.prior_var);
        data_term + prior_term
    }
}

impl LogJoint for GaussianMeanModel {
    fn dim(&self) -> usize {
        self.data_cov.dim()
    }

    fn log_joint(&self, z: &[f64]) -> f64 {
        self.eval(z)
    }

    fn as_conjugate_gaussian(&self) -> Option<&GaussianMeanModel> {
        Some(self)
    }
}

/// Exact posterior `N(Λ⁻¹ b, Λ⁻¹)` of the Gaussian-mean model.
pub fn conjugate_posterior(model: &GaussianMeanModel) -> GaussianDensity {
    let (lambda, b) = model.natural_parameters();
    let cov = lambda
        .cholesky()
        .expect("posterior precision is positive definite")
        .inverse();
    let cov = (&cov + cov.transpose()) * 0.5;
    let mean = &cov * b;
    GaussianDensity {
        mean: mean.iter().copied().collect(),
        cov: CovMatrix::new(cov).expect("posterior covariance is positive definite"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMode {
    /// Product of the Student-t marginal densities.
    #[default]
    MarginalProduct,
    /// Marginal product times the Gaussian-copula density at a fixed correlation.
    FullCopula,
}

/// Lower edge of the prior support: `1/ν ~ Uniform(0, ½)` means `ν > 2`.
pub const TDF_SUPPORT_LOWER: f64 = 2.0;

/// Log prior density of `ν` under `1/ν ~ Uniform(0, ½)`: `ln(2/ν²)` on `ν > 2`.
pub fn inverse_uniform_log_prior(nu: f64) -> f64 {
    if nu > TDF_SUPPORT_LOWER && nu.is_finite() {
        std::f64::consts::LN_2 - 2.0 * nu.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Degrees of freedom `ν_i` of each data column's Student-t marginal.
#[derive(Debug, Clone)]
pub struct TDegreesModel {
    columns: Vec<Vec<f64>>,
    mode: LikelihoodMode,
    copula_corr: Option<CovMatrix>,
    copula: Option<GaussianCopulaDensity>,
}

impl TDegreesModel {
    pub fn new(
        data: &Dataset,
        mode: LikelihoodMode,
        copula_corr: Option<CovMatrix>,
    ) -> Result<Self> {
        let copula = match (mode, &copula_corr) {
            (LikelihoodMode::FullCopula, None) => {
                return Err(Error::Config(
                    "full-copula likelihood needs a copula correlation matrix".into(),
                ))
            }
            (LikelihoodMode::FullCopula, Some(c)) => {
                if c.dim() != data.d() {
                    return Err(Error::Dimension {
                        expected: data.d(),
                        actual: c.dim(),
                    });
                }
                Some(GaussianCopulaDensity::new(c)?)
            }
            (LikelihoodMode::MarginalProduct, _) => None,
        };
        Ok(TDegreesModel {
            columns: (0..data.d()).map(|j| data.column(j)).collect(),
            mode,
            copula_corr,
            copula,
        })
    }

    pub fn marginal_product(data: &Dataset) -> Self {
        Self::new(data, LikelihoodMode::MarginalProduct, None).expect("no copula needed")
    }

    pub fn mode(&self) -> LikelihoodMode {
        self.mode
    }

    pub fn copula_corr(&self) -> Option<&CovMatrix> {
        self.copula_corr.as_ref()
    }

    fn marginal_term(&self, coord: usize, nu: f64) -> f64 {
        let prior = inverse_uniform_log_prior(nu);
        if prior == f64::NEG_INFINITY {
            return prior;
        }
        let t = StudentT::new(nu).expect("ν > 2");
        prior + t.ln_pdf_sum(&self.columns[coord])
    }

    fn copula_term(&self, copula: &GaussianCopulaDensity, nu: &[f64]) -> f64 {
        let marginals: Vec<StudentT> = nu
            .iter()
            .map(|&v| StudentT::new(v).expect("ν > 2"))
            .collect();
        let n = self.columns[0].len();
        let d = self.columns.len();
        let mut scores = DVector::zeros(d);
        (0..n)
            .map(|k| {
                for (j, t) in marginals.iter().enumerate() {
                    scores[j] = std_normal_quantile(t.cdf(self.columns[j][k]));
                }
                copula.ln_density_scores(&scores)
            })
            .sum()
    }
}

impl LogJoint for TDegreesModel {
    fn dim(&self) -> usize {
        self.columns.len()
    }

    fn log_joint(&self, nu: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, &v) in nu.iter().enumerate() {
            let term = self.marginal_term(i, v);
            if term == f64::NEG_INFINITY {
                return term;
            }
            total += term;
        }
        if let Some(copula) = &self.copula {
            total += self.copula_term(copula, nu);
        }
        total
    }

    fn is_additive(&self) -> bool {
        self.copula.is_none()
    }

    fn coordinate_term(&self, coord: usize, value: f64) -> Option<f64> {
        self.copula
            .is_none()
            .then(|| self.marginal_term(coord, value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    GaussianMean,
    TDegrees,
}

/// Structured model configuration, normally read from TOML:
///
/// ```toml
/// model = "gaussian-mean"
/// data_file = "data.csv"
/// data_cov = [[38.0, 0.8], [0.8, 4.0]]
/// prior_var = 50.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub data_file: PathBuf,
    #[serde(default)]
    pub data_cov: Option<CovMatrix>,
    #[serde(default)]
    pub prior_var: Option<f64>,
    #[serde(default)]
    pub likelihood_mode: LikelihoodMode,
    #[serde(default)]
    pub copula_corr: Option<CovMatrix>,
}

/// A model built from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub enum Model {
    GaussianMean(GaussianMeanModel),
    TDegrees(TDegreesModel),
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Builds the model; a relative `data_file` is resolved against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Model> {
        let data_path = if self.data_file.is_absolute() {
            self.data_file.clone()
        } else {
            base_dir.join(&self.data_file)
        };
        let data = Dataset::read_csv(&data_path)?;
        self.build_with_data(&data)
    }

    pub fn build_with_data(&self, data: &Dataset) -> Result<Model> {
        match self.model {
            ModelKind::GaussianMean => {
                let cov = self
                    .data_cov
                    .clone()
                    .ok_or_else(|| Error::Config("gaussian-mean model needs `data_cov`".into()))?;
                let prior_var = self
                    .prior_var
                    .ok_or_else(|| Error::Config("gaussian-mean model needs `prior_var`".into()))?;
                Ok(Model::GaussianMean(GaussianMeanModel::new(
                    data, cov, prior_var,
                )?))
            }
            ModelKind::TDegrees => Ok(Model::TDegrees(TDegreesModel::new(
                data,
                self.likelihood_mode,
                self.copula_corr.clone(),
            )?)),
        }
    }
}

impl LogJoint for Model {
    fn dim(&self) -> usize {
        match self {
            Model::GaussianMean(m) => LogJoint::dim(m),
            Model::TDegrees(m) => m.dim(),
        }
    }

    fn log_joint(&self, z: &[f64]) -> f64 {
        match self {
            Model::GaussianMean(m) => m.log_joint(z),
            Model::TDegrees(m) => m.log_joint(z),
        }
    }

    fn is_additive(&self) -> bool {
        match self {
            Model::GaussianMean(m) => m.is_additive(),
            Model::TDegrees(m) => m.is_additive(),
        }
    }

    fn coordinate_term(&self, coord: usize, value: f64) -> Option<f64> {
        match self {
            Model::GaussianMean(m) => m.coordinate_term(coord, value),
            Model::TDegrees(m) => m.coordinate_term(coord, value),
        }
    }

    fn as_conjugate_gaussian(&self) -> Option<&GaussianMeanModel> {
        match self {
            Model::GaussianMean(m) => Some(m),
            Model::TDegrees(_) => None,
        }
    }
}
