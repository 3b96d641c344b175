//! Mean-field coordinate ascent variational inference.
//!
//! [`cavi_closed_form`] applies the exact Gaussian coordinate updates of the
//! conjugate Gaussian-mean model. [`cavi_numerical`] treats the ELBO as a
//! black box: each factor's two parameters are optimized jointly by a
//! bounded Newton–CG step on the quadrature ELBO while the other factors are
//! held fixed.

mod closed_form;
mod elbo;
mod factor;
mod numerical;
pub mod optimize;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use closed_form::{cavi_closed_form, conjugate_gaussian_elbo};
pub use elbo::{elbo, expected_log_joint, LOG_JOINT_FLOOR};
pub use factor::{
    Factor, GaussianFactor, MeanFieldPosterior, QuadratureSettings, ShiftedGammaFactor,
    DEFAULT_GAMMA_SHIFT,
};
pub use numerical::cavi_numerical;

use crate::error::{Error, Result};

/// Inclusive `(lower, upper)` box for each variational parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorBounds {
    pub mean: (f64, f64),
    pub variance: (f64, f64),
    pub shape: (f64, f64),
    pub scale: (f64, f64),
}

impl Default for FactorBounds {
    fn default() -> Self {
        FactorBounds {
            mean: (-1e6, 1e6),
            variance: (1e-6, 1e6),
            shape: (1e-4, 1e4),
            scale: (1e-4, 1e4),
        }
    }
}

impl FactorBounds {
    pub fn for_factor(&self, f: &Factor) -> [(f64, f64); 2] {
        match f {
            Factor::Gaussian(_) => [self.mean, self.variance],
            Factor::ShiftedGamma(_) => [self.shape, self.scale],
        }
    }

    pub(crate) fn contains(&self, f: &Factor) -> bool {
        self.for_factor(f)
            .iter()
            .zip(f.params())
            .all(|((lo, hi), v)| v >= *lo && v <= *hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_sweeps: usize,
    /// Stop once `|ΔELBO| ≤ elbo_rel_tol · |ELBO|` between sweeps.
    pub elbo_rel_tol: f64,
    /// Closed-form CAVI additionally waits until no parameter moves by more
    /// than this in a sweep.
    pub param_tol: f64,
    /// Projected-gradient tolerance of the per-factor optimizer.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Relative central-difference step on the transformed parameters.
    pub fd_rel_step: f64,
    pub bounds: FactorBounds,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_sweeps: 500,
            elbo_rel_tol: 1e-8,
            param_tol: 1e-12,
            inner_tol: 1e-6,
            inner_max_iter: 50,
            fd_rel_step: 1e-5,
            bounds: FactorBounds::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.elbo_rel_tol,
            self.param_tol,
            self.inner_tol,
            self.fd_rel_step,
        ];
        if positive.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config(
                "optimizer tolerances must be positive".into(),
            ));
        }
        if self.max_sweeps == 0 || self.inner_max_iter == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// History of one CAVI run. `elbo_per_sweep[0]` is the ELBO at the
/// initialization; entry `k` is the ELBO after sweep `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviTrace {
    pub elbo_per_sweep: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    /// Coordinate updates that finished on a parameter bound.
    pub bound_hits: usize,
}

impl CaviTrace {
    pub fn final_elbo(&self) -> f64 {
        *self
            .elbo_per_sweep
            .last()
            .expect("trace holds the initial ELBO")
    }

    /// Largest decrease between consecutive sweeps (0 when monotone).
    pub fn max_decrease(&self) -> f64 {
        self.elbo_per_sweep
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

/// Trace plus fitted factors, as exported to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviRecord {
    pub elbo_per_sweep: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    pub bound_hits: usize,
    pub fitted: MeanFieldPosterior,
}

impl CaviRecord {
    pub fn new(trace: &CaviTrace, fitted: &MeanFieldPosterior) -> Self {
        CaviRecord {
            elbo_per_sweep: trace.elbo_per_sweep.clone(),
            sweeps: trace.sweeps,
            converged: trace.converged,
            wall_time_s: trace.wall_time_s,
            bound_hits: trace.bound_hits,
            fitted: fitted.clone(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}
