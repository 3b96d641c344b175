//! Scalar density, CDF and quantile kernels.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

const QUANTILE_TOL: f64 = 1e-12;
const MAX_ROOT_ITERS: usize = 200;

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub fn std_normal_quantile(u: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * u)
}

pub fn normal_ln_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    -0.5 * ((2.0 * PI * variance).ln() + z * z / variance)
}

/// Student-t with `df` degrees of freedom, location 0 and unit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT {
    df: f64,
    ln_norm: f64,
}

impl StudentT {
    pub fn new(df: f64) -> Result<Self> {
        if !(df > 0.0) || !df.is_finite() {
            return Err(Error::Domain(format!(
                "degrees of freedom must be positive, got {df}"
            )));
        }
        let ln_norm = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln();
        Ok(StudentT { df, ln_norm })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_norm - 0.5 * (self.df + 1.0) * (x * x / self.df).ln_1p()
    }

    /// Sum of log densities over `xs`, sharing the normalizer.
    pub fn ln_pdf_sum(&self, xs: &[f64]) -> f64 {
        let tail: f64 = xs.iter().map(|x| (x * x / self.df).ln_1p()).sum();
        xs.len() as f64 * self.ln_norm - 0.5 * (self.df + 1.0) * tail
    }

    /// `P(T > |x|)` for `x`; always at most 1/2.
    fn upper_tail_abs(&self, x: f64) -> f64 {
        let t = self.df / (self.df + x * x);
        0.5 * beta_reg(0.5 * self.df, 0.5, t)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let tail = self.upper_tail_abs(x);
        if x > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    /// `P(T > x)`, accurate in the far upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        let tail = self.upper_tail_abs(x);
        if x > 0.0 {
            tail
        } else {
            1.0 - tail
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!(
                "probability must lie in (0, 1), got {u}"
            )));
        }
        Ok(if u < 0.5 {
            -self.solve_upper_tail(u)
        } else {
            // 1 - u is exact for u in [0.5, 1).
            self.solve_upper_tail(1.0 - u)
        })
    }

    /// Quantile at lower-tail probability `lower` given as the pair
    /// `(lower, upper)` with `lower + upper = 1`, choosing whichever side
    /// retains precision.
    pub(crate) fn quantile_from_tails(&self, lower: f64, upper: f64) -> f64 {
        if lower < upper {
            -self.solve_upper_tail(lower)
        } else {
            self.solve_upper_tail(upper)
        }
    }

    /// Finds `x >= 0` with `P(T > x) = p` for `p in (0, 1/2]` by safeguarded
    /// Newton iteration on the regularized incomplete beta CDF.
    fn solve_upper_tail(&self, p: f64) -> f64 {
        if p >= 0.5 {
            return 0.0;
        }
        let f = |x: f64| self.upper_tail_abs(x) - p;
        let mut lo = 0.0;
        let mut hi = (-std_normal_quantile(p)).max(1.0);
        while f(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..MAX_ROOT_ITERS {
            let fx = f(x);
            if fx == 0.0 {
                return x;
            }
            if fx > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x + fx / self.ln_pdf(x).exp();
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= QUANTILE_TOL * x.abs().max(1.0) {
                return next;
            }
            x = next;
        }
        x
    }
}

pub fn t_logpdf(x: f64, df: f64) -> Result<f64> {
    Ok(StudentT::new(df)?.ln_pdf(x))
}

pub fn t_quantile(u: f64, df: f64) -> Result<f64> {
    StudentT::new(df)?.quantile(u)
}

pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    Ok(StudentT::new(df)?.cdf(x))
}

/// Gamma(shape, scale) helpers.
pub(crate) mod gamma {
    use super::*;

    pub fn ln_pdf(x: f64, shape: f64, scale: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if x == 0.0 {
            return match shape.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Less) => f64::INFINITY,
                Some(std::cmp::Ordering::Equal) => -scale.ln(),
                _ => f64::NEG_INFINITY,
            };
        }
        (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
    }

    pub fn cdf(x: f64, shape: f64, scale: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x == f64::INFINITY {
            1.0
        } else {
            gamma_lr(shape, x / scale)
        }
    }

    pub fn sf(x: f64, shape: f64, scale: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else if x == f64::INFINITY {
            0.0
        } else {
            gamma_ur(shape, x / scale)
        }
    }

    /// Quantile by bisection in log space refined with Newton steps.
    pub fn quantile(p: f64, shape: f64, scale: f64) -> f64 {
        debug_assert!(p > 0.0 && p < 1.0);
        let use_upper = p > 0.5;
        let target = if use_upper { 1.0 - p } else { p };
        let g = |x: f64| {
            if use_upper {
                target - sf(x, shape, 1.0)
            } else {
                cdf(x, shape, 1.0) - target
            }
        };
        // g is increasing in x in both branches.
        let mut lo = 0.0f64;
        let mut hi = shape.max(1.0);
        while g(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        let mut x = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        for _ in 0..MAX_ROOT_ITERS {
            let gx = g(x);
            if gx == 0.0 {
                break;
            }
            if gx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let dens = ln_pdf(x, shape, 1.0).exp();
            let newton = x - gx / dens;
            let next = if dens.is_finite() && dens > 0.0 && newton > lo && newton < hi {
                newton
            } else if lo > 0.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * hi
            };
            if (next - x).abs() <= 1e-13 * x.max(f64::MIN_POSITIVE) {
                x = next;
                break;
            }
            x = next;
        }
        x * scale
    }
}
