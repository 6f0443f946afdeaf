//! RBF kernel machinery shared by the ratio estimators and the one-class SVM:
//! Gram matrices, the median-distance bandwidth heuristic, and ridge
//! stabilization of kernel matrices.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Kernel bandwidth selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    /// Use the given value directly.
    Fixed(f64),
    /// `1 / median(pairwise squared distances)` of the data the kernel is fit on.
    MedianSquared,
    /// `1 / median(pairwise distances)^2`; same scaling law, different statistic.
    MedianRaw,
}

/// RBF kernel configuration: bandwidth plus the ridge added to Gram matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub gamma: GammaSpec,
    /// Ridge added to the diagonal of square Gram matrices before solving.
    pub ridge: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            gamma: GammaSpec::MedianSquared,
            ridge: 1e-5,
        }
    }
}

impl KernelConfig {
    /// Resolves the bandwidth against `data` (the sample the kernel is tied to).
    pub fn resolve_gamma(&self, data: ArrayView2<'_, f64>) -> Result<f64> {
        match self.gamma {
            GammaSpec::Fixed(g) => {
                if g <= 0.0 || !g.is_finite() {
                    return Err(Error::domain(format!("gamma must be positive, got {g}")));
                }
                Ok(g)
            }
            GammaSpec::MedianSquared => median_heuristic(data, true),
            GammaSpec::MedianRaw => median_heuristic(data, false),
        }
    }
}

/// Gram matrix `K[i][j] = exp(-gamma * ||a_i - b_j||^2)`.
///
/// Rows are computed independently (in parallel) with a fixed left-to-right
/// summation order per entry, so the result is bit-identical to a serial
/// evaluation.
pub fn rbf_gram(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, gamma: f64) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!(
            "rbf_gram: {} vs {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::domain(format!("gamma must be positive, got {gamma}")));
    }
    let (m, n) = (a.nrows(), b.nrows());
    let mut k = Array2::<f64>::zeros((m, n));
    let b_rows: Vec<_> = b.rows().into_iter().collect();
    {
        let buf = k.as_slice_mut().expect("freshly allocated array is contiguous");
        buf.par_chunks_mut(n.max(1))
            .zip(a.rows().into_iter().collect::<Vec<_>>())
            .for_each(|(row, ai)| {
                for (j, bj) in b_rows.iter().enumerate() {
                    let mut d2 = 0.0;
                    for c in 0..ai.len() {
                        let diff = ai[c] - bj[c];
                        d2 += diff * diff;
                    }
                    row[j] = (-gamma * d2).exp();
                }
            });
    }
    Ok(k)
}

/// Bandwidth from the median pairwise distance of `x`.
///
/// With `squared`, returns `1 / median(d^2)`; otherwise `1 / median(d)^2`.
/// Either way the result scales as `1/c^2` when the data is scaled by `c`.
pub fn median_heuristic(x: ArrayView2<'_, f64>, squared: bool) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::domain(format!(
            "median heuristic needs at least 2 rows, got {n}"
        )));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for c in 0..x.ncols() {
                let diff = x[[i, c]] - x[[j, c]];
                d2 += diff * diff;
            }
            dists.push(if squared { d2 } else { d2.sqrt() });
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median <= 0.0 {
        return Err(Error::degenerate(
            "median pairwise distance is zero (too many identical rows)".to_string(),
        ));
    }
    Ok(if squared {
        1.0 / median
    } else {
        1.0 / (median * median)
    })
}

/// `K + omega * I`.
pub fn ridge_stabilize(k: &Array2<f64>, omega: f64) -> Result<Array2<f64>> {
    if k.nrows() != k.ncols() {
        return Err(Error::shape(format!(
            "ridge_stabilize needs a square matrix, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    let mut out = k.clone();
    for i in 0..out.nrows() {
        out[[i, i]] += omega;
    }
    Ok(out)
}
