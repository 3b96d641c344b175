//! Random-walk Metropolis–Hastings with burn-in bookkeeping.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LatentPoint, LogJoint};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    pub total_steps: usize,
    pub burn_in: usize,
    /// Proposal standard deviation for each coordinate.
    pub step_sizes: Vec<f64>,
    pub seed: RngSeed,
}

impl MhConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.burn_in >= self.total_steps {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than total steps ({})",
                self.burn_in, self.total_steps
            )));
        }
        if self.step_sizes.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: self.step_sizes.len(),
            });
        }
        if self
            .step_sizes
            .iter()
            .any(|s| !(*s > 0.0) || !s.is_finite())
        {
            return Err(Error::Config(format!(
                "step sizes must be positive, got {:?}",
                self.step_sizes
            )));
        }
        Ok(())
    }
}

/// Sample path of a Metropolis–Hastings run. Row `t` is the state after
/// step `t + 1`; the first `burn_in` rows are kept for diagnostics only.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    dim: usize,
    samples: Vec<f64>,
    accepted: Vec<bool>,
    burn_in: usize,
    acceptance_rate: f64,
}

impl Chain {
    /// Builds a chain from stored rows, e.g. one read back from CSV.
    pub fn from_parts(samples: Vec<Vec<f64>>, accepted: Vec<bool>, burn_in: usize) -> Result<Self> {
        let steps = samples.len();
        if steps == 0 || accepted.len() != steps {
            return Err(Error::Config(format!(
                "chain needs matching non-empty sample ({steps}) and acceptance ({}) rows",
                accepted.len()
            )));
        }
        if burn_in >= steps {
            return Err(Error::Config(format!(
                "burn-in ({burn_in}) must be smaller than chain length ({steps})"
            )));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::Config("chain rows of unequal length".into()));
        }
        let n_acc = accepted.iter().filter(|a| **a).count();
        Ok(Chain {
            dim,
            samples: samples.into_iter().flatten().collect(),
            acceptance_rate: n_acc as f64 / steps as f64,
            accepted,
            burn_in,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.accepted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.acceptance_rate
    }

    pub fn accepted(&self) -> &[bool] {
        &self.accepted
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.samples[t * self.dim..(t + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    pub fn post_burn_in(&self) -> impl Iterator<Item = &[f64]> {
        self.samples().skip(self.burn_in)
    }

    pub fn post_burn_in_len(&self) -> usize {
        self.len() - self.burn_in
    }

    /// Sample mean and covariance (unbiased) of the post-burn-in segment.
    pub fn post_burn_in_covariance(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = self.dim;
        let n = self.post_burn_in_len() as f64;
        let mut mean = vec![0.0; m];
        for s in self.post_burn_in() {
            for (a, v) in mean.iter_mut().zip(s) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n);
        let mut cov = vec![vec![0.0; m]; m];
        for s in self.post_burn_in() {
            for i in 0..m {
                for j in 0..m {
                    cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1.0).max(1.0);
        cov.iter_mut().flatten().for_each(|c| *c /= denom);
        (mean, cov)
    }

    /// CSV with columns `step,z1..zm,accepted`; steps are numbered from 1.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["step".to_string()];
        header.extend((1..=self.dim).map(|i| format!("z{i}")));
        header.push("accepted".into());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (t, (s, acc)) in self.samples().zip(&self.accepted).enumerate() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(s.iter().map(|v| v.to_string()));
            rec.push(u8::from(*acc).to_string());
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, burn_in: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let width = r.headers().map_err(|e| Error::csv(path, e))?.len();
        if width < 3 {
            return Err(Error::Config(format!(
                "{}: not a chain CSV",
                path.display()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{}: cannot parse {s:?}", path.display())))
        };
        let mut samples = Vec::new();
        let mut accepted = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let row = (1..width - 1)
                .map(|i| parse(&rec[i]))
                .collect::<Result<Vec<_>>>()?;
            samples.push(row);
            accepted.push(parse(&rec[width - 1])? != 0.0);
        }
        Chain::from_parts(samples, accepted, burn_in)
    }

    pub fn summary(&self) -> Result<ChainSummary> {
        Ok(ChainSummary {
            steps: self.len(),
            acceptance_rate: self.acceptance_rate,
            burn_in: self.burn_in,
            moments: chain_moments(self)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub steps: usize,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub moments: ChainMoments,
}

impl ChainSummary {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f).map_err(|e| Error::io(path, e))
    }
}

/// Runs a symmetric Gaussian random walk: every step perturbs all
/// coordinates with independent `N(0, step_i²)` noise and accepts with
/// probability `min(1, exp(Δ log p))`. Proposals with `-∞` log joint are
/// rejected.
pub fn metropolis_hastings<M: LogJoint + ?Sized>(
    logjoint: &M,
    init: &LatentPoint,
    cfg: &MhConfig,
) -> Result<Chain> {
    let m = logjoint.dim();
    if init.dim() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: init.dim(),
        });
    }
    cfg.validate(m)?;
    let mut current = init.coords().to_vec();
    let mut current_lp = logjoint.log_joint(&current);
    if !current_lp.is_finite() {
        return Err(Error::InvalidInitialization(format!(
            "log joint at {current:?} is {current_lp}"
        )));
    }

    let mut rng = cfg.seed.rng();
    let mut samples = Vec::with_capacity(cfg.total_steps * m);
    let mut accepted = Vec::with_capacity(cfg.total_steps);
    let mut proposal = vec![0.0; m];
    let mut n_acc = 0usize;
    for _ in 0..cfg.total_steps {
        for ((p, c), s) in proposal.iter_mut().zip(&current).zip(&cfg.step_sizes) {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *p = c + s * eps;
        }
        let u: f64 = rng.random();
        let lp = logjoint.log_joint(&proposal);
        let accept = lp > f64::NEG_INFINITY && !lp.is_nan() && u.ln() < lp - current_lp;
        if accept {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            n_acc += 1;
        }
        samples.extend_from_slice(&current);
        accepted.push(accept);
    }
    Ok(Chain {
        dim: m,
        samples,
        accepted,
        burn_in: cfg.burn_in,
        acceptance_rate: n_acc as f64 / cfg.total_steps as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMoments {
    pub means: Vec<f64>,
    /// Unbiased sample variances.
    pub variances: Vec<f64>,
}

impl ChainMoments {
    /// Coordinates whose sample variance is zero.
    pub fn degenerate_coords(&self) -> Vec<usize> {
        self.variances
            .iter()
            .enumerate()
            .filter(|(_, v)| **v <= 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_coords().is_empty()
    }
}

/// Marginal means and unbiased variances over the post-burn-in samples.
pub fn chain_moments(chain: &Chain) -> Result<ChainMoments> {
    let n = chain.post_burn_in_len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: n,
        });
    }
    let m = chain.dim();
    let mut means = vec![0.0; m];
    for s in chain.post_burn_in() {
        for (a, v) in means.iter_mut().zip(s) {
            *a += v;
        }
    }
    means.iter_mut().for_each(|a| *a /= n as f64);
    let mut variances = vec![0.0; m];
    for s in chain.post_burn_in() {
        for ((a, v), mu) in variances.iter_mut().zip(s).zip(&means) {
            *a += (v - mu) * (v - mu);
        }
    }
    variances.iter_mut().for_each(|a| *a /= (n - 1) as f64);
    Ok(ChainMoments { means, variances })
}
