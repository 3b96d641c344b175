use std::path::Path;

use crate::error::{Error, Result};

/// `n × d` matrix of observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no observations".into()));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidDataset(
                "zero-dimensional observations".into(),
            ));
        }
        let mut values = Vec::with_capacity(n * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} entries, expected {d}",
                    row.len()
                )));
            }
            values.extend(row);
        }
        Self::from_flat(n, d, values)
    }

    pub fn from_flat(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidDataset(format!("invalid shape {n}x{d}")));
        }
        if values.len() != n * d {
            return Err(Error::InvalidDataset(format!(
                "{} values do not fill a {n}x{d} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite entry at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Dataset { n, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.d];
        for row in self.rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums.iter().map(|s| s / self.n as f64).collect()
    }

    /// Writes the dataset as CSV with header `x1,...,xd`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let d = r.headers().map_err(|e| Error::csv(path, e))?.len();
        let mut values = Vec::new();
        let mut n = 0;
        for record in r.records() {
            let record = record.map_err(|e| Error::csv(path, e))?;
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidDataset(format!("{}: cannot parse {field:?}", path.display()))
                })?;
                values.push(v);
            }
            n += 1;
        }
        Self::from_flat(n, d, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(Dataset::from_rows(vec![]).is_err());
        assert!(Dataset::from_rows(vec![vec![1.0, f64::NAN]]).is_err());
        assert!(Dataset::from_rows(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = Dataset::from_rows(vec![vec![1.5, -2.0], vec![0.1, 1e-9]]).unwrap();
        data.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2\n"));
        assert_eq!(Dataset::read_csv(&path).unwrap(), data);
    }
}
