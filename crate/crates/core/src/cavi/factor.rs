use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::stochastic::distributions::{gamma, normal_ln_pdf, std_normal_cdf};
use crate::stochastic::gauss_hermite;

/// Shift of the Gamma factors used for degrees of freedom, matching the
/// `ν > 2` prior support.
pub const DEFAULT_GAMMA_SHIFT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianFactor {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::Domain(format!(
                "Gaussian factor needs finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(GaussianFactor { mean, variance })
    }
}

/// `z − shift ~ Gamma(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGammaFactor {
    pub shape: f64,
    pub scale: f64,
    pub shift: f64,
}

impl ShiftedGammaFactor {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        Self::with_shift(shape, scale, DEFAULT_GAMMA_SHIFT)
    }

    pub fn with_shift(shape: f64, scale: f64, shift: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(shape) || !ok(scale) || !shift.is_finite() {
            return Err(Error::Domain(format!(
                "shifted Gamma factor needs positive shape and scale, got ({shape}, {scale})"
            )));
        }
        Ok(ShiftedGammaFactor {
            shape,
            scale,
            shift,
        })
    }
}

/// One coordinate's variational density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Factor {
    Gaussian(GaussianFactor),
    ShiftedGamma(ShiftedGammaFactor),
}

impl From<GaussianFactor> for Factor {
    fn from(f: GaussianFactor) -> Self {
        Factor::Gaussian(f)
    }
}

impl From<ShiftedGammaFactor> for Factor {
    fn from(f: ShiftedGammaFactor) -> Self {
        Factor::ShiftedGamma(f)
    }
}

/// Quadrature settings for expectations under the factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSettings {
    /// Gauss–Hermite nodes per Gaussian factor.
    pub hermite_nodes: usize,
    /// Midpoint-grid nodes per shifted-Gamma factor.
    pub gamma_grid_nodes: usize,
    /// The Gamma grid spans the `tail` and `1 − tail` quantiles.
    pub gamma_tail: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            hermite_nodes: 32,
            gamma_grid_nodes: 256,
            gamma_tail: 1e-6,
        }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if self.hermite_nodes == 0 || self.gamma_grid_nodes == 0 {
            return Err(Error::Domain(
                "quadrature node counts must be at least 1".into(),
            ));
        }
        if !(self.gamma_tail > 0.0 && self.gamma_tail < 0.5) {
            return Err(Error::Domain(format!(
                "gamma tail must lie in (0, 0.5), got {}",
                self.gamma_tail
            )));
        }
        Ok(())
    }
}

impl Factor {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        GaussianFactor::new(mean, variance).map(Factor::Gaussian)
    }

    pub fn shifted_gamma(shape: f64, scale: f64) -> Result<Self> {
        ShiftedGammaFactor::new(shape, scale).map(Factor::ShiftedGamma)
    }

    /// The two variational parameters: `(mean, variance)` or `(shape, scale)`.
    pub fn params(&self) -> [f64; 2] {
        match self {
            Factor::Gaussian(g) => [g.mean, g.variance],
            Factor::ShiftedGamma(g) => [g.shape, g.scale],
        }
    }

    /// Same family (and shift) with new parameters.
    pub fn with_params(&self, p: [f64; 2]) -> Result<Self> {
        match self {
            Factor::Gaussian(_) => Factor::gaussian(p[0], p[1]),
            Factor::ShiftedGamma(g) => {
                ShiftedGammaFactor::with_shift(p[0], p[1], g.shift).map(Factor::ShiftedGamma)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Factor::Gaussian(g) => g.mean,
            Factor::ShiftedGamma(g) => g.shift + g.shape * g.scale,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Factor::Gaussian(g) => g.variance,
            Factor::ShiftedGamma(g) => g.shape * g.scale * g.scale,
        }
    }

    /// Differential entropy. The Gamma entropy is shift invariant.
    pub fn entropy(&self) -> f64 {
        match self {
            Factor::Gaussian(g) => 0.5 * (2.0 * PI * std::f64::consts::E * g.variance).ln(),
            Factor::ShiftedGamma(g) => {
                g.shape + g.scale.ln() + ln_gamma(g.shape) + (1.0 - g.shape) * digamma(g.shape)
            }
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            Factor::Gaussian(g) => normal_ln_pdf(x, g.mean, g.variance),
            Factor::ShiftedGamma(g) => gamma::ln_pdf(x - g.shift, g.shape, g.scale),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Factor::Gaussian(g) => std_normal_cdf((x - g.mean) / g.variance.sqrt()),
            Factor::ShiftedGamma(g) => gamma::cdf(x - g.shift, g.shape, g.scale),
        }
    }

    /// Probability of `(lo, hi]`, taking the difference on whichever tail
    /// keeps precision.
    pub fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mass = match self {
            Factor::Gaussian(g) => {
                let sd = g.variance.sqrt();
                let (a, b) = ((lo - g.mean) / sd, (hi - g.mean) / sd);
                if a > 0.0 {
                    std_normal_cdf(-a) - std_normal_cdf(-b)
                } else {
                    std_normal_cdf(b) - std_normal_cdf(a)
                }
            }
            Factor::ShiftedGamma(g) => {
                let (a, b) = (lo - g.shift, hi - g.shift);
                let median = gamma::quantile(0.5, g.shape, g.scale);
                if a > median {
                    gamma::sf(a, g.shape, g.scale) - gamma::sf(b, g.shape, g.scale)
                } else {
                    gamma::cdf(b, g.shape, g.scale) - gamma::cdf(a, g.shape, g.scale)
                }
            }
        };
        mass.max(0.0)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            Factor::Gaussian(g) => {
                g.mean
                    + g.variance.sqrt() * crate::stochastic::distributions::std_normal_quantile(p)
            }
            Factor::ShiftedGamma(g) => g.shift + gamma::quantile(p, g.shape, g.scale),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Factor::Gaussian(g) => Normal::new(g.mean, g.variance.sqrt())
                .expect("validated factor")
                .sample(rng),
            Factor::ShiftedGamma(g) => {
                g.shift
                    + Gamma::new(g.shape, g.scale)
                        .expect("validated factor")
                        .sample(rng)
            }
        }
    }

    /// Nodes and probability weights (summing to one) for `E_q[f]`.
    ///
    /// Gaussian factors use Gauss–Hermite nodes `mean + √(2 var) t_k` with
    /// weights `w_k/√π`. Shifted-Gamma factors use a uniform midpoint grid
    /// between the `tail` and `1 − tail` quantiles with density weights,
    /// renormalized over the grid.
    pub fn expectation_nodes(&self, quad: &QuadratureSettings) -> Vec<(f64, f64)> {
        match self {
            Factor::Gaussian(g) => {
                let (t, w) = gauss_hermite(quad.hermite_nodes);
                let s = (2.0 * g.variance).sqrt();
                let norm = PI.sqrt();
                t.iter()
                    .zip(&w)
                    .map(|(t, w)| (g.mean + s * t, w / norm))
                    .collect()
            }
            Factor::ShiftedGamma(g) => {
                let lo = gamma::quantile(quad.gamma_tail, g.shape, g.scale);
                let hi = gamma::quantile(1.0 - quad.gamma_tail, g.shape, g.scale);
                let n = quad.gamma_grid_nodes;
                let h = (hi - lo) / n as f64;
                let mut nodes: Vec<(f64, f64)> = (0..n)
                    .map(|i| {
                        let x = lo + (i as f64 + 0.5) * h;
                        (g.shift + x, gamma::ln_pdf(x, g.shape, g.scale).exp() * h)
                    })
                    .collect();
                let total: f64 = nodes.iter().map(|(_, w)| w).sum();
                if total > 0.0 && total.is_finite() {
                    nodes.iter_mut().for_each(|(_, w)| *w /= total);
                } else {
                    let uniform = 1.0 / n as f64;
                    nodes.iter_mut().for_each(|(_, w)| *w = uniform);
                }
                nodes
            }
        }
    }
}

/// Mean-field variational density `q(z) = Π_i q_i(z_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeanFieldPosterior {
    factors: Vec<Factor>,
}

impl MeanFieldPosterior {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Domain(
                "mean-field posterior needs at least one factor".into(),
            ));
        }
        Ok(MeanFieldPosterior { factors })
    }

    /// Gaussian factors from `(mean, variance)` pairs.
    pub fn gaussian(params: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            params
                .iter()
                .map(|&(m, v)| Factor::gaussian(m, v))
                .collect::<Result<_>>()?,
        )
    }

    /// Shift-2 Gamma factors from `(shape, scale)` pairs.
    pub fn shifted_gamma(params: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            params
                .iter()
                .map(|&(a, b)| Factor::shifted_gamma(a, b))
                .collect::<Result<_>>()?,
        )
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &Factor {
        &self.factors[i]
    }

    pub fn set_factor(&mut self, i: usize, f: Factor) {
        self.factors[i] = f;
    }

    pub fn means(&self) -> Vec<f64> {
        self.factors.iter().map(Factor::mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.factors.iter().map(Factor::variance).collect()
    }

    pub fn entropy(&self) -> f64 {
        self.factors.iter().map(Factor::entropy).sum()
    }

    pub fn ln_pdf(&self, z: &[f64]) -> f64 {
        self.factors.iter().zip(z).map(|(f, x)| f.ln_pdf(*x)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.factors.iter().map(|f| f.sample(rng)).collect()
    }

    /// Parameter pairs in factor order.
    pub fn params(&self) -> Vec<[f64; 2]> {
        self.factors.iter().map(Factor::params).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn gaussian_entropy() {
        let f = Factor::gaussian(3.0, 1.0).unwrap();
        assert_abs_diff_eq!(f.entropy(), 1.418939, epsilon = 1e-6);
        let g = Factor::gaussian(-7.0, 4.0).unwrap();
        assert_abs_diff_eq!(g.entropy() - f.entropy(), 0.5 * 4f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn exponential_entropy_is_one() {
        let f = Factor::shifted_gamma(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(f.entropy(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_entropy_matches_quadrature() {
        // −∫ q ln q by a fine midpoint rule.
        let f = Factor::shifted_gamma(3.2, 0.6).unwrap();
        let n = 200_000;
        let (lo, hi) = (2.0, 2.0 + 40.0);
        let h = (hi - lo) / n as f64;
        let oracle: f64 = (0..n)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                let lp = f.ln_pdf(x);
                -lp.exp() * lp * h
            })
            .sum();
        assert_abs_diff_eq!(f.entropy(), oracle, epsilon = 1e-7);
    }

    #[test]
    fn moments() {
        let f = Factor::shifted_gamma(16.0, 0.5).unwrap();
        assert_eq!(f.mean(), 10.0);
        assert_eq!(f.variance(), 4.0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(Factor::gaussian(0.0, 0.0).is_err());
        assert!(Factor::shifted_gamma(-1.0, 1.0).is_err());
        assert!(Factor::shifted_gamma(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn hermite_nodes_recover_moments() {
        let f = Factor::gaussian(2.0, 3.0).unwrap();
        let nodes = f.expectation_nodes(&QuadratureSettings::default());
        let m: f64 = nodes.iter().map(|(x, w)| w * x).sum();
        let v: f64 = nodes.iter().map(|(x, w)| w * (x - 2.0).powi(2)).sum();
        assert_abs_diff_eq!(m, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn gamma_grid_recovers_moments() {
        let f = Factor::shifted_gamma(3.2, 0.6).unwrap();
        let nodes = f.expectation_nodes(&QuadratureSettings::default());
        let m: f64 = nodes.iter().map(|(x, w)| w * x).sum();
        let v: f64 = nodes.iter().map(|(x, w)| w * (x - f.mean()).powi(2)).sum();
        assert!(nodes.iter().all(|(x, _)| *x > 2.0));
        assert_abs_diff_eq!(m, f.mean(), epsilon = 1e-3);
        assert_abs_diff_eq!(v, f.variance(), epsilon = 1e-2);
    }

    #[test]
    fn interval_mass_tails() {
        let f = Factor::gaussian(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(f.interval_mass(-1.0, 1.0), 0.682689492, epsilon = 1e-9);
        // far tail still resolves
        let tail = f.interval_mass(9.0, 10.0);
        assert!(tail > 0.0 && tail < 1e-18);
        let g = Factor::shifted_gamma(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(g.interval_mass(2.0, f64::INFINITY), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sampling_matches_moments() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let f = Factor::shifted_gamma(3.2, 0.6).unwrap();
        let n = 40_000;
        let xs: Vec<f64> = (0..n).map(|_| f.sample(&mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        assert!((m - f.mean()).abs() < 0.03);
    }

    #[test]
    fn serde_tagged() {
        let q = MeanFieldPosterior::gaussian(&[(1.0, 2.0)]).unwrap();
        let s = serde_json::to_string(&q).unwrap();
        assert_eq!(s, r#"[{"family":"gaussian","mean":1.0,"variance":2.0}]"#);
        let back: MeanFieldPosterior = serde_json::from_str(&s).unwrap();
        assert_eq!(back, q);
    }
}
