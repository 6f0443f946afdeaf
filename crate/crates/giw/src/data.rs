//! Labeled datasets and their CSV wire format.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Which distribution a dataset was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Train,
    Validation,
    Test,
}

/// A set of labeled feature vectors.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// One example per row.
    pub features: Array2<f64>,
    /// Class indices, one per row of `features`.
    pub labels: Vec<usize>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, provenance: Provenance) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Dataset {
            features,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// New dataset with the rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut features = Array2::<f64>::zeros((indices.len(), d));
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).assign(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            provenance: self.provenance,
        }
    }

    /// Serializes as `x1,x2,...,label` rows with 17-significant-digit floats,
    /// enough for `f64` round trips.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 0..d {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "x{}", j + 1);
        }
        out.push_str(",label\n");
        for i in 0..self.len() {
            for j in 0..d {
                let _ = write!(out, "{:.16e},", self.features[[i, j]]);
            }
            let _ = writeln!(out, "{}", self.labels[i]);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the format produced by [`Dataset::to_csv`].
    pub fn from_csv(text: &str, provenance: Provenance) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::domain("empty CSV".to_string()))?;
        let d = header.split(',').count() - 1;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(Error::domain(format!(
                    "CSV row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    d + 1
                )));
            }
            for f in &fields[..d] {
                values.push(
                    f.parse::<f64>()
                        .map_err(|e| Error::domain(format!("bad float {f:?}: {e}")))?,
                );
            }
            labels.push(
                fields[d]
                    .parse::<usize>()
                    .map_err(|e| Error::domain(format!("bad label {:?}: {e}", fields[d])))?,
            );
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, d), values)
            .map_err(|e| Error::shape(format!("CSV reshape: {e}")))?;
        Dataset::new(features, labels, provenance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = Dataset::new(
            array![
                [0.1234567890123456, -1.0e-17],
                [std::f64::consts::PI, 2.0 / 3.0]
            ],
            vec![0, 1],
            Provenance::Train,
        )
        .unwrap();
        let back = Dataset::from_csv(&ds.to_csv(), Provenance::Train).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.features.iter().zip(ds.features.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_matches_format() {
        let ds = Dataset::new(array![[1.0, 2.0]], vec![1], Provenance::Test).unwrap();
        assert!(ds.to_csv().starts_with("x1,x2,label\n"));
    }

    #[test]
    fn select_reorders_rows() {
        let ds = Dataset::new(
            array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]],
            vec![0, 1, 0],
            Provenance::Train,
        )
        .unwrap();
        let sub = ds.select(&[2, 0]);
        assert_eq!(sub.labels, vec![0, 0]);
        assert_eq!(sub.features[[0, 0]], 2.0);
        assert_eq!(sub.features[[1, 0]], 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let r = Dataset::new(Array2::zeros((3, 2)), vec![0, 1], Provenance::Train);
        assert!(r.is_err());
    }
}
