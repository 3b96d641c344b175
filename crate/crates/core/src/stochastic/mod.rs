//! Seeded sampling, density kernels and quadrature rules.

mod copula;
mod cov;
mod dataset;
pub mod distributions;
mod mvn;
mod quadrature;

pub use copula::{gaussian_copula_sample, latent_to_marginal, GaussianCopulaDensity};
pub use cov::CovMatrix;
pub use dataset::Dataset;
pub use distributions::{t_cdf, t_logpdf, t_quantile, StudentT};
pub use mvn::{mvn_logpdf, mvn_sample};
pub use quadrature::{gauss_hermite, quadrature_rule, QuadratureKind, QuadratureRule};
