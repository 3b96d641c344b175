use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::distributions::{std_normal_cdf, std_normal_quantile, StudentT};
use super::{CovMatrix, Dataset};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

const UNIT_DIAGONAL_TOL: f64 = 1e-12;

/// Draws `n` observations whose dependence is a Gaussian copula with the
/// given correlation and whose `i`-th marginal is Student-t with
/// `marginal_dfs[i]` degrees of freedom.
///
/// Each latent `z ~ N(0, corr)` is pushed through `Φ` and then the t
/// quantile. Both tails are carried through `Φ(z)` and `Φ(-z)` so extreme
/// latent values do not round to a probability of exactly 0 or 1.
pub fn gaussian_copula_sample(
    seed: RngSeed,
    corr: &CovMatrix,
    marginal_dfs: &[f64],
    n: usize,
) -> Result<Dataset> {
    let d = corr.dim();
    if marginal_dfs.len() != d {
        return Err(Error::Dimension {
            expected: d,
            actual: marginal_dfs.len(),
        });
    }
    if !corr.has_unit_diagonal(UNIT_DIAGONAL_TOL) {
        return Err(Error::InvalidCorrelation(
            "copula matrix must have unit diagonal".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let marginals = marginal_dfs
        .iter()
        .map(|&df| StudentT::new(df))
        .collect::<Result<Vec<_>>>()?;
    let l = corr.cholesky_factor();
    let mut rng = seed.rng();
    let mut values = Vec::with_capacity(n * d);
    let mut eps = DVector::zeros(d);
    for _ in 0..n {
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        let z = &l * &eps;
        values.extend(
            z.iter()
                .zip(&marginals)
                .map(|(&zi, t)| latent_to_marginal(zi, t)),
        );
    }
    Dataset::from_flat(n, d, values)
}

/// Maps a standard-normal latent coordinate to the t marginal.
pub fn latent_to_marginal(z: f64, marginal: &StudentT) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    marginal.quantile_from_tails(std_normal_cdf(z), std_normal_cdf(-z))
}

/// Log density of the Gaussian copula at normal scores `z`:
/// `-½ ln det R - ½ zᵀ(R⁻¹ - I)z`.
#[derive(Debug, Clone)]
pub struct GaussianCopulaDensity {
    precision_minus_identity: DMatrix<f64>,
    half_ln_det: f64,
}

impl GaussianCopulaDensity {
    pub fn new(corr: &CovMatrix) -> Result<Self> {
        if !corr.has_unit_diagonal(UNIT_DIAGONAL_TOL) {
            return Err(Error::InvalidCorrelation(
                "copula matrix must have unit diagonal".into(),
            ));
        }
        let d = corr.dim();
        Ok(GaussianCopulaDensity {
            precision_minus_identity: corr.inverse() - DMatrix::identity(d, d),
            half_ln_det: 0.5 * corr.ln_det(),
        })
    }

    pub fn ln_density_scores(&self, scores: &DVector<f64>) -> f64 {
        -self.half_ln_det - 0.5 * scores.dot(&(&self.precision_minus_identity * scores))
    }

    /// Log copula density at uniform coordinates `u`.
    pub fn ln_density(&self, u: &[f64]) -> f64 {
        let scores = DVector::from_iterator(u.len(), u.iter().map(|&ui| std_normal_quantile(ui)));
        self.ln_density_scores(&scores)
    }
}
