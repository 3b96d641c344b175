use std::f64::consts::PI;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use super::{CovMatrix, Dataset};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// `n` i.i.d. draws from `N_d(mean, cov)`, computed as `mean + L ε`.
pub fn mvn_sample(seed: RngSeed, mean: &[f64], cov: &CovMatrix, n: usize) -> Result<Dataset> {
    let d = cov.dim();
    if mean.len() != d {
        return Err(Error::Dimension {
            expected: d,
            actual: mean.len(),
        });
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let l = cov.cholesky_factor();
    let mut rng = seed.rng();
    let mut values = Vec::with_capacity(n * d);
    let mut eps = DVector::zeros(d);
    for _ in 0..n {
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        let x = &l * &eps;
        values.extend(mean.iter().zip(x.iter()).map(|(m, v)| m + v));
    }
    Dataset::from_flat(n, d, values)
}

pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &CovMatrix) -> Result<f64> {
    let d = cov.dim();
    for len in [x.len(), mean.len()] {
        if len != d {
            return Err(Error::Dimension {
                expected: d,
                actual: len,
            });
        }
    }
    let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    Ok(-0.5 * (d as f64 * (2.0 * PI).ln() + cov.ln_det() + cov.mahalanobis_sq(&diff)))
}
