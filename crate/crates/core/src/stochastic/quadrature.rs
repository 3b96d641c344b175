use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    /// Gauss–Hermite nodes for `∫ f(t) e^{-t²} dt`, shifted by `center`.
    Hermite,
    /// Uniform midpoint rule on `[center - half_width, center + half_width]`.
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: QuadratureKind,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Builds a quadrature rule. For `Hermite`, `half_width` is ignored.
pub fn quadrature_rule(
    kind: QuadratureKind,
    node_count: usize,
    center: f64,
    half_width: f64,
) -> Result<QuadratureRule> {
    if node_count == 0 {
        return Err(Error::Domain("quadrature needs at least one node".into()));
    }
    match kind {
        QuadratureKind::Hermite => {
            let (nodes, weights) = gauss_hermite(node_count);
            Ok(QuadratureRule {
                nodes: nodes.into_iter().map(|t| t + center).collect(),
                weights,
                kind,
            })
        }
        QuadratureKind::Grid => {
            if !(half_width > 0.0) {
                return Err(Error::Domain(format!(
                    "grid half-width must be positive, got {half_width}"
                )));
            }
            let h = 2.0 * half_width / node_count as f64;
            let start = center - half_width;
            Ok(QuadratureRule {
                nodes: (0..node_count)
                    .map(|i| start + (i as f64 + 0.5) * h)
                    .collect(),
                weights: vec![h; node_count],
                kind,
            })
        }
    }
}

/// Gauss–Hermite nodes and weights (physicists' weight `e^{-t²}`), ascending.
///
/// Newton iteration on the orthonormal Hermite recurrence, seeded with the
/// usual asymptotic guesses for the largest roots.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    x.reverse();
    w.reverse();
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_node() {
        let r = quadrature_rule(QuadratureKind::Hermite, 1, 0.0, 1.0).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert_abs_diff_eq!(r.weights[0], PI.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn weights_sum_to_root_pi() {
        for n in [1, 2, 3, 5, 16, 32, 64] {
            let (_, w) = gauss_hermite(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), PI.sqrt(), epsilon = 1e-10);
            assert!(w.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn second_moment_five_nodes() {
        let r = quadrature_rule(QuadratureKind::Hermite, 5, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.integrate(|t| t * t), PI.sqrt() / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_to_degree_2n_minus_1() {
        // ∫ t^{2k} e^{-t²} dt = Γ(k + ½)
        let n = 8;
        let r = quadrature_rule(QuadratureKind::Hermite, n, 0.0, 1.0).unwrap();
        for k in 0..n {
            let exact = statrs::function::gamma::gamma(k as f64 + 0.5);
            let approx = r.integrate(|t| t.powi(2 * k as i32));
            assert!((approx - exact).abs() <= 1e-10 * exact, "k={k}");
            assert_abs_diff_eq!(
                r.integrate(|t| t.powi(2 * k as i32 + 1)),
                0.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn nodes_symmetric_sorted() {
        let (x, _) = gauss_hermite(7);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        for i in 0..7 {
            assert_abs_diff_eq!(x[i], -x[6 - i], epsilon = 1e-14);
        }
    }

    #[test]
    fn grid_integrates_normal_pdf() {
        let r = quadrature_rule(QuadratureKind::Grid, 1000, 0.0, 8.0).unwrap();
        let mass = r.integrate(|x| (-0.5 * x * x).exp() / (2.0 * PI).sqrt());
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(quadrature_rule(QuadratureKind::Hermite, 0, 0.0, 1.0).is_err());
        assert!(quadrature_rule(QuadratureKind::Grid, 10, 0.0, 0.0).is_err());
    }
}
