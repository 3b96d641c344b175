use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric positive-definite matrix with its Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl CovMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::InvalidCovariance(format!(
                "expected a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite entry".into()));
        }
        let d = entries.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidCovariance(format!(
                        "not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = Cholesky::new(entries.clone()).ok_or_else(|| {
            Error::InvalidCovariance("not positive definite (Cholesky failed)".into())
        })?;
        if chol.l_dirty().diagonal().iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidCovariance(
                "non-positive Cholesky pivot".into(),
            ));
        }
        Ok(CovMatrix { entries, chol })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidCovariance("rows of unequal length".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is positive definite")
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(
            variances,
        )))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|p| p.ln())
            .sum::<f64>()
    }

    /// `(x)ᵀ Σ⁻¹ (x)` via a triangular solve.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(x)
            .expect("Cholesky factor has positive pivots");
        y.norm_squared()
    }

    pub fn has_unit_diagonal(&self, tol: f64) -> bool {
        self.entries
            .diagonal()
            .iter()
            .all(|v| (v - 1.0).abs() <= tol)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

impl PartialEq for CovMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Serialize for CovMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CovMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        CovMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_study_covariance() {
        let c = CovMatrix::from_rows(&[vec![38.0, 0.8], vec![0.8, 4.0]]).unwrap();
        assert!((c.ln_det() - (38.0f64 * 4.0 - 0.64).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let err = CovMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidCovariance(_)));
    }

    #[test]
    fn rejects_asymmetric() {
        let err = CovMatrix::from_rows(&[vec![1.0, 0.1], vec![0.2, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidCovariance(_)));
    }

    #[test]
    fn serde_as_nested_rows() {
        let c = CovMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, "[[2.0,0.5],[0.5,1.0]]");
        let back: CovMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
