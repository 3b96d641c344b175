use super::factor::{Factor, MeanFieldPosterior, QuadratureSettings};
use crate::error::{Error, Result};
use crate::models::LogJoint;

/// Value substituted for a `-∞` log joint at a quadrature node: the log of
/// the smallest positive double, `ln(4.9e-324) ≈ -744.44`. A joint density
/// that underflows is thus read as the smallest representable density, which
/// keeps the ELBO finite and continuous at the underflow boundary.
pub const LOG_JOINT_FLOOR: f64 = -744.440_071_921_381_2;

pub(crate) fn floor_log_joint(v: f64) -> f64 {
    if v == f64::NEG_INFINITY || v.is_nan() {
        LOG_JOINT_FLOOR
    } else {
        v
    }
}

/// `E_q[log p(z, x)]` by tensor-product quadrature over the factors, or by a
/// sum of one-dimensional rules when the log joint is additive.
pub fn expected_log_joint<M: LogJoint + ?Sized>(
    logjoint: &M,
    q: &MeanFieldPosterior,
    quad: &QuadratureSettings,
) -> Result<f64> {
    if q.dim() != logjoint.dim() {
        return Err(Error::Dimension {
            expected: logjoint.dim(),
            actual: q.dim(),
        });
    }
    quad.validate()?;
    if logjoint.is_additive() {
        return Ok((0..q.dim())
            .map(|i| expected_coordinate_term(logjoint, i, q.factor(i), quad))
            .sum());
    }
    let rules: Vec<Vec<(f64, f64)>> = q
        .factors()
        .iter()
        .map(|f| f.expectation_nodes(quad))
        .collect();
    Ok(tensor_expectation(&rules, |z| {
        floor_log_joint(logjoint.log_joint(z))
    }))
}

/// `E_q[log p] + Σ_i H(q_i)`.
pub fn elbo<M: LogJoint + ?Sized>(
    logjoint: &M,
    q: &MeanFieldPosterior,
    quad: &QuadratureSettings,
) -> Result<f64> {
    Ok(expected_log_joint(logjoint, q, quad)? + q.entropy())
}

/// `E_{q_i}[term_i]` for an additive log joint.
pub(crate) fn expected_coordinate_term<M: LogJoint + ?Sized>(
    logjoint: &M,
    coord: usize,
    factor: &Factor,
    quad: &QuadratureSettings,
) -> f64 {
    factor
        .expectation_nodes(quad)
        .iter()
        .map(|&(z, w)| {
            let t = logjoint
                .coordinate_term(coord, z)
                .expect("additive log joint exposes coordinate terms");
            w * floor_log_joint(t)
        })
        .sum()
}

pub(crate) fn tensor_expectation(
    rules: &[Vec<(f64, f64)>],
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let m = rules.len();
    let mut idx = vec![0usize; m];
    let mut z: Vec<f64> = rules.iter().map(|r| r[0].0).collect();
    let mut total = 0.0;
    loop {
        let w: f64 = idx.iter().zip(rules).map(|(&k, r)| r[k].1).product();
        if w > 0.0 {
            total += w * f(&z);
        }
        // odometer increment, last coordinate fastest
        let mut d = m;
        loop {
            if d == 0 {
                return total;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < rules[d].len() {
                z[d] = rules[d][idx[d]].0;
                break;
            }
            idx[d] = 0;
            z[d] = rules[d][0].0;
        }
    }
}
