//! Kullback–Leibler divergences used to score fitted posteriors.
//!
//! * [`kl_gaussian`]: closed form between two multivariate normals.
//! * [`kl_quadrature`]: midpoint-rule integral of `q ln(q/p)` on a grid.
//! * [`kl_discrete`]: histogram comparison against an MCMC reference chain.

use serde::{Deserialize, Serialize};

use crate::cavi::{Factor, MeanFieldPosterior};
use crate::error::{Error, Result};
use crate::mcmc::Chain;
use crate::models::GaussianDensity;
use crate::stochastic::CovMatrix;

/// Values down to this are numerical noise around zero and are clamped.
pub const NEGATIVE_SLACK: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlMethod {
    ClosedForm,
    Quadrature,
    Discrete,
}

impl KlMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            KlMethod::ClosedForm => "closed-form",
            KlMethod::Quadrature => "quadrature",
            KlMethod::Discrete => "discrete",
        }
    }
}

/// A divergence in nats; `+∞` is a legitimate value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlValue {
    pub nats: f64,
    pub method: KlMethod,
}

impl KlValue {
    fn new(raw: f64, method: KlMethod) -> Self {
        debug_assert!(
            raw.is_nan() || raw >= NEGATIVE_SLACK - 1e-6,
            "KL {raw} well below zero"
        );
        KlValue {
            nats: if raw < 0.0 { 0.0 } else { raw },
            method,
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.nats == f64::INFINITY
    }
}

/// `KL(q ‖ p) = ½[tr(Σ_p⁻¹Σ_q) + Δᵀ Σ_p⁻¹ Δ − k + ln(det Σ_p / det Σ_q)]`.
pub fn kl_gaussian(q: &GaussianDensity, p: &GaussianDensity) -> Result<KlValue> {
    let k = p.dim();
    if q.dim() != k {
        return Err(Error::Dimension {
            expected: k,
            actual: q.dim(),
        });
    }
    let p_inv = p.cov.inverse();
    let trace = (&p_inv * q.cov.entries()).trace();
    let delta = nalgebra::DVector::from_iterator(k, p.mean.iter().zip(&q.mean).map(|(a, b)| a - b));
    let quad = p.cov.mahalanobis_sq(&delta);
    let raw = 0.5 * (trace + quad - k as f64 + p.cov.ln_det() - q.cov.ln_det());
    Ok(KlValue::new(raw, KlMethod::ClosedForm))
}

/// A Gaussian mean-field posterior as a diagonal-covariance normal.
pub fn mean_field_as_gaussian(q: &MeanFieldPosterior) -> Result<GaussianDensity> {
    if q.factors()
        .iter()
        .any(|f| !matches!(f, Factor::Gaussian(_)))
    {
        return Err(Error::Config(
            "only Gaussian factors form a Gaussian density".into(),
        ));
    }
    GaussianDensity::new(q.means(), CovMatrix::diagonal(&q.variances())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl GridAxis {
    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.bins as f64
    }

    pub fn edge(&self, k: usize) -> f64 {
        if k == self.bins {
            self.upper
        } else {
            self.lower + k as f64 * self.width()
        }
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lower + (k as f64 + 0.5) * self.width()
    }

    /// Bin holding `x`, with the upper edge included in the last bin.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lower && x <= self.upper) {
            return None;
        }
        let k = ((x - self.lower) / self.width()) as usize;
        Some(k.min(self.bins - 1))
    }
}

/// Tensor-product grid, one axis per latent coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridSpec {
    axes: Vec<GridAxis>,
}

/// Default bin count per dimension for reference-chain grids.
pub const DEFAULT_BINS: usize = 30;
/// Default total widening of the reference sample range (half per side).
pub const DEFAULT_WIDEN: f64 = 0.10;

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if !(a.lower < a.upper) || !a.lower.is_finite() || !a.upper.is_finite() || a.bins < 2 {
                return Err(Error::Config(format!("invalid grid axis {i}: {a:?}")));
            }
        }
        Ok(GridSpec { axes })
    }

    pub fn uniform(bounds: &[(f64, f64)], bins: usize) -> Result<Self> {
        Self::new(
            bounds
                .iter()
                .map(|&(lower, upper)| GridAxis { lower, upper, bins })
                .collect(),
        )
    }

    /// Per-dimension range of the post-burn-in samples, widened by
    /// `widen × range` in total (half on each side).
    pub fn from_chain(chain: &Chain, bins: usize, widen: f64) -> Result<Self> {
        if chain.post_burn_in_len() == 0 {
            return Err(Error::InsufficientSamples {
                needed: 1,
                available: 0,
            });
        }
        let m = chain.dim();
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for s in chain.post_burn_in() {
            for i in 0..m {
                lo[i] = lo[i].min(s[i]);
                hi[i] = hi[i].max(s[i]);
            }
        }
        let bounds: Vec<(f64, f64)> = lo
            .iter()
            .zip(&hi)
            .map(|(&a, &b)| {
                let range = if b > a {
                    b - a
                } else {
                    a.abs().max(1.0) * 1e-3
                };
                (a - 0.5 * widen * range, b + 0.5 * widen * range)
            })
            .collect();
        Self::uniform(&bounds, bins)
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::width).product()
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&k, a)| acc * a.bins + k)
    }

    fn unflatten(&self, mut flat: usize, idx: &mut [usize]) {
        for (slot, a) in idx.iter_mut().zip(&self.axes).rev() {
            *slot = flat % a.bins;
            flat /= a.bins;
        }
    }
}

fn check_dims(q: &MeanFieldPosterior, grid: &GridSpec) -> Result<()> {
    if q.dim() != grid.dim() {
        return Err(Error::Dimension {
            expected: grid.dim(),
            actual: q.dim(),
        });
    }
    Ok(())
}

/// Required share of `q`'s mass inside the integration grid.
pub const REQUIRED_COVERAGE: f64 = 1.0 - 1e-6;

/// Midpoint-rule approximation of `∫ q ln(q/p)` over the grid cells.
pub fn kl_quadrature(
    q: &MeanFieldPosterior,
    p: &GaussianDensity,
    grid: &GridSpec,
) -> Result<KlValue> {
    check_dims(q, grid)?;
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: q.dim(),
            actual: p.dim(),
        });
    }
    let covered: f64 = q
        .factors()
        .iter()
        .zip(grid.axes())
        .map(|(f, a)| f.interval_mass(a.lower, a.upper))
        .product();
    if covered < REQUIRED_COVERAGE {
        return Err(Error::Coverage {
            covered,
            required: REQUIRED_COVERAGE,
        });
    }
    let vol = grid.cell_volume();
    let mut idx = vec![0; grid.dim()];
    let mut z = vec![0.0; grid.dim()];
    let mut total = 0.0;
    for flat in 0..grid.cell_count() {
        grid.unflatten(flat, &mut idx);
        for ((zi, &k), a) in z.iter_mut().zip(&idx).zip(grid.axes()) {
            *zi = a.center(k);
        }
        let ln_q = q.ln_pdf(&z);
        if ln_q == f64::NEG_INFINITY {
            continue;
        }
        let ln_p = p.ln_pdf(&z);
        if ln_p == f64::NEG_INFINITY {
            return Ok(KlValue::new(f64::INFINITY, KlMethod::Quadrature));
        }
        total += ln_q.exp() * (ln_q - ln_p) * vol;
    }
    Ok(KlValue::new(total, KlMethod::Quadrature))
}

/// Which way the histogram divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscreteDirection {
    /// `Σ_b p̂_b ln(p̂_b / q_b)` over bins holding reference samples, with
    /// `q_b` the exact mass `q` assigns to bin `b`. Infinite when some
    /// populated bin has `q_b = 0` in double precision.
    #[default]
    ReferenceToFitted,
    /// `Σ_b q_b ln(q_b / p̂_b)` with `q_b` from the density at bin centres
    /// times the cell volume, renormalized over the grid. Infinite when some
    /// bin has `q_b > 1e-12` but no reference sample.
    FittedToReference,
}

/// `q_b` below this counts as zero for [`DiscreteDirection::FittedToReference`].
pub const EMPTY_BIN_MASS: f64 = 1e-12;

/// Discrete KL between a fitted mean-field `q` and the histogram of the
/// reference chain's post-burn-in samples on `grid`.
pub fn kl_discrete(
    q: &MeanFieldPosterior,
    reference: &Chain,
    grid: &GridSpec,
    direction: DiscreteDirection,
) -> Result<KlValue> {
    check_dims(q, grid)?;
    if reference.dim() != grid.dim() {
        return Err(Error::Dimension {
            expected: grid.dim(),
            actual: reference.dim(),
        });
    }
    let counts = histogram(reference, grid);
    let n_in: usize = counts.iter().sum();
    if n_in == 0 {
        return Err(Error::InsufficientSamples {
            needed: 1,
            available: 0,
        });
    }
    let p_hat: Vec<f64> = counts.iter().map(|&c| c as f64 / n_in as f64).collect();
    let raw = match direction {
        DiscreteDirection::ReferenceToFitted => reference_to_fitted(q, grid, &p_hat),
        DiscreteDirection::FittedToReference => fitted_to_reference(q, grid, &p_hat),
    };
    Ok(KlValue::new(raw, KlMethod::Discrete))
}

fn histogram(chain: &Chain, grid: &GridSpec) -> Vec<usize> {
    let mut counts = vec![0usize; grid.cell_count()];
    let mut idx = vec![0; grid.dim()];
    'samples: for s in chain.post_burn_in() {
        for ((slot, a), &x) in idx.iter_mut().zip(grid.axes()).zip(s) {
            match a.bin_of(x) {
                Some(k) => *slot = k,
                None => continue 'samples,
            }
        }
        counts[grid.flat_index(&idx)] += 1;
    }
    counts
}

fn reference_to_fitted(q: &MeanFieldPosterior, grid: &GridSpec, p_hat: &[f64]) -> f64 {
    // Per-axis bin masses; q factorizes so cell masses are products.
    let masses: Vec<Vec<f64>> = q
        .factors()
        .iter()
        .zip(grid.axes())
        .map(|(f, a)| {
            (0..a.bins)
                .map(|k| f.interval_mass(a.edge(k), a.edge(k + 1)))
                .collect()
        })
        .collect();
    let mut idx = vec![0; grid.dim()];
    let mut total = 0.0;
    for (flat, &p) in p_hat.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        grid.unflatten(flat, &mut idx);
        let q_b: f64 = idx.iter().zip(&masses).map(|(&k, m)| m[k]).product();
        if q_b == 0.0 {
            return f64::INFINITY;
        }
        total += p * (p / q_b).ln();
    }
    total
}

fn fitted_to_reference(q: &MeanFieldPosterior, grid: &GridSpec, p_hat: &[f64]) -> f64 {
    let vol = grid.cell_volume();
    let mut idx = vec![0; grid.dim()];
    let mut z = vec![0.0; grid.dim()];
    let mut q_mass = vec![0.0; p_hat.len()];
    for (flat, slot) in q_mass.iter_mut().enumerate() {
        grid.unflatten(flat, &mut idx);
        for ((zi, &k), a) in z.iter_mut().zip(&idx).zip(grid.axes()) {
            *zi = a.center(k);
        }
        *slot = q.ln_pdf(&z).exp() * vol;
    }
    let total_q: f64 = q_mass.iter().sum();
    if !(total_q > 0.0) {
        // q has no representable mass on the grid at all.
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for (q_b, &p) in q_mass.iter().map(|m| m / total_q).zip(p_hat) {
        if q_b <= 0.0 {
            continue;
        }
        if p == 0.0 {
            if q_b > EMPTY_BIN_MASS {
                return f64::INFINITY;
            }
            continue;
        }
        total += q_b * (q_b / p).ln();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngSeed;
    use approx::assert_abs_diff_eq;

    fn normal1(mean: f64, var: f64) -> GaussianDensity {
        GaussianDensity::new(vec![mean], CovMatrix::diagonal(&[var]).unwrap()).unwrap()
    }

    fn chain_from(samples: Vec<Vec<f64>>) -> Chain {
        let n = samples.len();
        Chain::from_parts(samples, vec![true; n], 0).unwrap()
    }

    fn draws(q: &MeanFieldPosterior, n: usize, seed: u64) -> Chain {
        let mut rng = RngSeed(seed).rng();
        chain_from((0..n).map(|_| q.sample(&mut rng)).collect())
    }

    #[test]
    fn identical_gaussians() {
        let p = GaussianDensity::new(
            vec![1.0, -2.0],
            CovMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(kl_gaussian(&p, &p).unwrap().nats, 0.0);
    }

    #[test]
    fn unit_mean_shift() {
        let kl = kl_gaussian(&normal1(0.0, 1.0), &normal1(1.0, 1.0)).unwrap();
        assert_eq!(kl.nats, 0.5);
        assert_eq!(kl.method, KlMethod::ClosedForm);
    }

    #[test]
    fn table_fit_against_printed_posterior() {
        let q = GaussianDensity::new(
            vec![27.233, 12.991],
            CovMatrix::diagonal(&[0.375, 0.0398]).unwrap(),
        )
        .unwrap();
        let p = GaussianDensity::new(
            vec![27.230, 12.991],
            CovMatrix::from_rows(&[vec![0.377, 0.00793], vec![0.00793, 0.400]]).unwrap(),
        )
        .unwrap();
        // Oracle: scalar expansion of the closed form for 2×2 matrices.
        let det_p = 0.377 * 0.400 - 0.00793f64.powi(2);
        let tr = (0.400 * 0.375 + 0.377 * 0.0398) / det_p;
        let dm = 27.230 - 27.233;
        let quad = 0.400 * dm * dm / det_p;
        let oracle = 0.5 * (tr + quad - 2.0 + (det_p / (0.375 * 0.0398)).ln());
        let kl = kl_gaussian(&q, &p).unwrap().nats;
        assert_abs_diff_eq!(kl, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(kl, 0.7036, epsilon = 0.01);
    }

    #[test]
    fn dimension_mismatch() {
        let p2 = GaussianDensity::new(vec![0.0, 0.0], CovMatrix::identity(2)).unwrap();
        assert!(kl_gaussian(&normal1(0.0, 1.0), &p2).is_err());
    }

    #[test]
    fn quadrature_identical() {
        let q = MeanFieldPosterior::gaussian(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let p = GaussianDensity::new(vec![0.0, 0.0], CovMatrix::identity(2)).unwrap();
        let grid = GridSpec::uniform(&[(-8.0, 8.0), (-8.0, 8.0)], 400).unwrap();
        assert!(kl_quadrature(&q, &p, &grid).unwrap().nats < 1e-4);
    }

    #[test]
    fn quadrature_reproduces_mean_shift() {
        let q = MeanFieldPosterior::gaussian(&[(0.0, 1.0)]).unwrap();
        let grid = GridSpec::uniform(&[(-8.0, 8.0)], 400).unwrap();
        let kl = kl_quadrature(&q, &normal1(1.0, 1.0), &grid).unwrap();
        assert_abs_diff_eq!(kl.nats, 0.5, epsilon = 1e-3);
    }

    #[test]
    fn quadrature_coverage_error() {
        let q = MeanFieldPosterior::gaussian(&[(0.0, 1.0)]).unwrap();
        let grid = GridSpec::uniform(&[(-2.0, 2.0)], 100).unwrap();
        assert!(matches!(
            kl_quadrature(&q, &normal1(0.0, 1.0), &grid),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn quadrature_gamma_vs_gaussian_refines() {
        let q = MeanFieldPosterior::shifted_gamma(&[(16.0, 0.5)]).unwrap();
        let p = normal1(10.0, 4.0);
        let coarse = GridSpec::uniform(&[(2.0, 40.0)], 400).unwrap();
        let fine = GridSpec::uniform(&[(2.0, 40.0)], 800).unwrap();
        let a = kl_quadrature(&q, &p, &coarse).unwrap().nats;
        let b = kl_quadrature(&q, &p, &fine).unwrap().nats;
        assert!(a.is_finite() && a >= 0.0);
        assert_abs_diff_eq!(a, b, epsilon = 1e-3);
    }

    #[test]
    fn discrete_self_consistency() {
        let q = MeanFieldPosterior::shifted_gamma(&[(3.2, 0.6), (1.7, 6.9)]).unwrap();
        let reference = draws(&q, 10_000, 42);
        let grid = GridSpec::from_chain(&reference, DEFAULT_BINS, DEFAULT_WIDEN).unwrap();
        let kl = kl_discrete(&q, &reference, &grid, DiscreteDirection::default()).unwrap();
        assert!(kl.nats < 0.1, "{kl:?}");
    }

    #[test]
    fn discrete_disjoint_support_is_infinite() {
        let q = MeanFieldPosterior::gaussian(&[(6.0, 0.01), (6.0, 0.01)]).unwrap();
        let far = MeanFieldPosterior::gaussian(&[(45.0, 1.0), (45.0, 1.0)]).unwrap();
        let reference = draws(&far, 500, 1);
        let grid = GridSpec::from_chain(&reference, DEFAULT_BINS, DEFAULT_WIDEN).unwrap();
        for dir in [
            DiscreteDirection::ReferenceToFitted,
            DiscreteDirection::FittedToReference,
        ] {
            assert!(kl_discrete(&q, &reference, &grid, dir)
                .unwrap()
                .is_infinite());
        }
    }

    #[test]
    fn discrete_identical_masses_is_zero() {
        // One-dimensional uniform-on-grid q is not available, so use a
        // histogram that puts every sample in one bin and a q concentrated
        // there far beyond double precision.
        let q = MeanFieldPosterior::gaussian(&[(0.25, 1e-6)]).unwrap();
        let reference = chain_from(vec![vec![0.25]; 50]);
        let grid = GridSpec::uniform(&[(0.0, 1.0)], 2).unwrap();
        for dir in [
            DiscreteDirection::ReferenceToFitted,
            DiscreteDirection::FittedToReference,
        ] {
            assert_abs_diff_eq!(
                kl_discrete(&q, &reference, &grid, dir).unwrap().nats,
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn fitted_to_reference_flags_empty_bins() {
        // A 2-D mean-field q has mass in every corner cell, which a finite
        // reference leaves empty.
        let q = MeanFieldPosterior::gaussian(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let reference = draws(&q, 10_000, 3);
        let grid = GridSpec::from_chain(&reference, DEFAULT_BINS, DEFAULT_WIDEN).unwrap();
        let kl = kl_discrete(&q, &reference, &grid, DiscreteDirection::FittedToReference).unwrap();
        assert!(kl.is_infinite());
    }

    #[test]
    fn empty_reference_errors() {
        let q = MeanFieldPosterior::gaussian(&[(0.0, 1.0)]).unwrap();
        let reference = chain_from(vec![vec![5.0]; 3]);
        let grid = GridSpec::uniform(&[(-1.0, 1.0)], 4).unwrap();
        assert!(matches!(
            kl_discrete(&q, &reference, &grid, DiscreteDirection::default()),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn grid_from_chain_widens() {
        let reference = chain_from(vec![vec![0.0], vec![10.0]]);
        let grid = GridSpec::from_chain(&reference, 30, 0.1).unwrap();
        assert_abs_diff_eq!(grid.axes()[0].lower, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(grid.axes()[0].upper, 10.5, epsilon = 1e-12);
        assert_eq!(grid.axes()[0].bin_of(10.5), Some(29));
        assert_eq!(grid.axes()[0].bin_of(10.6), None);
    }
}
