//! One-class support vector machine on latent representations, used to score
//! membership in the training support and split validation data into
//! in-training (IT) and out-of-training (OOT) parts.
//!
//! The dual `min (1/2) a' K a` subject to `0 <= a_i <= 1/(nu n)`,
//! `sum a_i = 1` is solved by SMO-style pairwise transfers between the most
//! violating coordinates.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::kernel::{rbf_gram, GammaSpec, KernelConfig};

/// Fit parameters. `nu` bounds the fraction of training outliers.
#[derive(Debug, Clone, Copy)]
pub struct OsvmParams {
    pub nu: f64,
    pub gamma: GammaSpec,
}

impl Default for OsvmParams {
    fn default() -> Self {
        OsvmParams {
            nu: 0.5,
            gamma: GammaSpec::MedianSquared,
        }
    }
}

/// Fitted model: support vectors with dual coefficients, offset `rho`, and
/// the decision function `g(z) = sum_i a_i k(sv_i, z) - rho`.
#[derive(Debug, Clone)]
pub struct OsvmModel {
    support_vectors: Array2<f64>,
    alphas: Array1<f64>,
    rho: f64,
    gamma: f64,
    nu: f64,
    kkt_residual: f64,
}

impl OsvmModel {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn alphas(&self) -> ArrayView1<'_, f64> {
        self.alphas.view()
    }

    /// Largest first-order optimality violation at the end of the fit.
    pub fn kkt_residual(&self) -> f64 {
        self.kkt_residual
    }

    /// Decision score for one point; larger means more in-support.
    pub fn score(&self, z: ArrayView1<'_, f64>) -> Result<f64> {
        if z.len() != self.support_vectors.ncols() {
            return Err(Error::shape(format!(
                "score input has {} features, model expects {}",
                z.len(),
                self.support_vectors.ncols()
            )));
        }
        let mut acc = 0.0;
        for (sv, a) in self.support_vectors.rows().into_iter().zip(self.alphas.iter()) {
            let mut d2 = 0.0;
            for k in 0..z.len() {
                let diff = z[k] - sv[k];
                d2 += diff * diff;
            }
            acc += a * (-self.gamma * d2).exp();
        }
        Ok(acc - self.rho)
    }

    pub fn score_batch(&self, z: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let k = rbf_gram(z, self.support_vectors.view(), self.gamma)?;
        Ok(k.rows()
            .into_iter()
            .map(|row| row.dot(&self.alphas) - self.rho)
            .collect())
    }
}

/// Trains a one-class SVM on the rows of `z`.
pub fn osvm_fit(z: ArrayView2<'_, f64>, params: &OsvmParams) -> Result<OsvmModel> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::domain(format!("need at least 2 points, got {n}")));
    }
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(Error::domain(format!("nu {} outside (0, 1]", params.nu)));
    }
    if params.nu * (n as f64) < 1.0 {
        return Err(Error::domain(format!(
            "infeasible nu: nu*n = {} < 1",
            params.nu * n as f64
        )));
    }
    let cfg = KernelConfig {
        gamma: params.gamma,
        ridge: 0.0,
    };
    let gamma = cfg.resolve_gamma(z)?;
    let k = rbf_gram(z, z, gamma)?;
    let c = 1.0 / (params.nu * n as f64);

    // Feasible start: fill the first floor(nu n) coordinates to the box cap,
    // put the remainder on the next one.
    let mut alpha = Array1::<f64>::zeros(n);
    let full = (params.nu * n as f64).floor() as usize;
    for i in 0..full.min(n) {
        alpha[i] = c;
    }
    let remainder = 1.0 - full.min(n) as f64 * c;
    if remainder > 1e-15 && full < n {
        alpha[full] = remainder;
    }

    // grad = K alpha, maintained incrementally.
    let mut grad = k.dot(&alpha);
    let tol = 1e-8;
    let max_iter = 200_000usize;
    let mut since_refresh = 0usize;
    for _ in 0..max_iter {
        // most violating pair
        let mut i_up: Option<usize> = None; // alpha > 0, largest gradient
        let mut i_lo: Option<usize> = None; // alpha < C, smallest gradient
        for t in 0..n {
            if alpha[t] > 1e-14 && i_up.map_or(true, |u| grad[t] > grad[u]) {
                i_up = Some(t);
            }
            if alpha[t] < c - 1e-14 * c && i_lo.map_or(true, |l| grad[t] < grad[l]) {
                i_lo = Some(t);
            }
        }
        let (i, j) = match (i_up, i_lo) {
            (Some(i), Some(j)) => (i, j),
            _ => break,
        };
        let gap = grad[i] - grad[j];
        if gap <= tol {
            break;
        }
        let curvature = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
        let max_transfer = alpha[i].min(c - alpha[j]);
        let delta = if curvature > 1e-12 {
            (gap / curvature).min(max_transfer)
        } else {
            max_transfer
        };
        if delta <= 0.0 {
            break;
        }
        alpha[i] -= delta;
        alpha[j] += delta;
        since_refresh += 1;
        if since_refresh >= n {
            grad = k.dot(&alpha);
            since_refresh = 0;
        } else {
            for t in 0..n {
                grad[t] += delta * (k[[j, t]] - k[[i, t]]);
            }
        }
    }
    grad = k.dot(&alpha);

    // Offset: margin support vectors sit exactly on the boundary.
    let band = 1e-8 * c;
    let interior: Vec<usize> = (0..n)
        .filter(|&t| alpha[t] > band && alpha[t] < c - band)
        .collect();
    let rho = if !interior.is_empty() {
        interior.iter().map(|&t| grad[t]).sum::<f64>() / interior.len() as f64
    } else {
        let lo = (0..n)
            .filter(|&t| alpha[t] >= c - band)
            .map(|t| grad[t])
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = (0..n)
            .filter(|&t| alpha[t] <= band)
            .map(|t| grad[t])
            .fold(f64::INFINITY, f64::min);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => 0.0,
        }
    };

    let mut kkt_residual: f64 = ((alpha.sum() - 1.0) as f64).abs();
    for t in 0..n {
        let v = if alpha[t] <= band {
            (rho - grad[t]).max(0.0)
        } else if alpha[t] >= c - band {
            (grad[t] - rho).max(0.0)
        } else {
            (grad[t] - rho).abs()
        };
        kkt_residual = kkt_residual.max(v);
    }

    // Keep only the support vectors.
    let sv_idx: Vec<usize> = (0..n).filter(|&t| alpha[t] > 1e-12).collect();
    let mut support_vectors = Array2::<f64>::zeros((sv_idx.len(), z.ncols()));
    let mut alphas = Array1::<f64>::zeros(sv_idx.len());
    for (r, &t) in sv_idx.iter().enumerate() {
        support_vectors.row_mut(r).assign(&z.row(t));
        alphas[r] = alpha[t];
    }
    Ok(OsvmModel {
        support_vectors,
        alphas,
        rho,
        gamma,
        nu: params.nu,
        kkt_residual,
    })
}

/// Threshold rule for [`split_validation`], on the min-max rescaled score axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitThreshold {
    /// Fixed cut in `[0, 1]`.
    Fixed(f64),
    /// Midpoint of the widest gap in the sorted rescaled scores.
    Auto,
}

/// Partition of validation indices by support membership.
#[derive(Debug, Clone)]
pub struct SplitResult {
    /// Indices scored above the threshold (in-training part).
    pub it_indices: Vec<usize>,
    /// Indices scored at or below the threshold (out-of-training part).
    pub oot_indices: Vec<usize>,
    /// `|IT| / n`.
    pub alpha_hat: f64,
    pub raw_scores: Vec<f64>,
    /// Scores min-max rescaled to `[0, 1]`.
    pub rescaled_scores: Vec<f64>,
    /// The threshold actually applied, on the rescaled axis.
    pub threshold: f64,
}

/// Min-max rescaling of scores onto `[0, 1]`; constant inputs map to 0.5.
pub fn rescale_scores(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 1e-300 {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - min) / range).collect()
}

/// Splits scored validation points into IT (above threshold) and OOT parts
/// and estimates `alpha = |IT| / n`.
pub fn split_validation(scores: &[f64], threshold: SplitThreshold) -> Result<SplitResult> {
    if scores.is_empty() {
        return Err(Error::domain("no scores to split".to_string()));
    }
    let rescaled = rescale_scores(scores);
    let t = match threshold {
        SplitThreshold::Fixed(t) => {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::domain(format!("threshold {t} outside [0, 1]")));
            }
            t
        }
        SplitThreshold::Auto => widest_gap_midpoint(&rescaled),
    };
    let mut it = Vec::new();
    let mut oot = Vec::new();
    for (i, &s) in rescaled.iter().enumerate() {
        if s > t {
            it.push(i);
        } else {
            oot.push(i);
        }
    }
    let alpha_hat = it.len() as f64 / scores.len() as f64;
    Ok(SplitResult {
        it_indices: it,
        oot_indices: oot,
        alpha_hat,
        raw_scores: scores.to_vec(),
        rescaled_scores: rescaled,
        threshold: t,
    })
}

/// Midpoint of the widest gap between consecutive sorted scores. Degenerate
/// inputs (one point, or all equal) yield a threshold below every score, so
/// everything lands in IT.
fn widest_gap_midpoint(scores: &[f64]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let mut best_gap = 0.0;
    let mut best_mid = sorted[0] - 1.0;
    for pair in sorted.windows(2) {
        let gap = pair[1] - pair[0];
        if gap > best_gap {
            best_gap = gap;
            best_mid = 0.5 * (pair[0] + pair[1]);
        }
    }
    if best_gap <= 1e-12 {
        sorted[0] - 1.0
    } else {
        best_mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_box(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 2), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn two_identical_points_split_mass_evenly() {
        let z = array![[0.3, 0.3], [0.3, 0.3]];
        let params = OsvmParams {
            nu: 1.0,
            gamma: GammaSpec::Fixed(1.0),
        };
        let model = osvm_fit(z.view(), &params).unwrap();
        assert_eq!(model.alphas().len(), 2);
        assert_abs_diff_eq!(model.alphas()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(model.alphas()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dual_feasibility_and_kkt() {
        let z = uniform_box(200, 3);
        let model = osvm_fit(z.view(), &OsvmParams::default()).unwrap();
        let sum: f64 = model.alphas().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-8);
        let c = 1.0 / (0.5 * 200.0);
        assert!(model.alphas().iter().all(|&a| a >= 0.0 && a <= c + 1e-12));
        assert!(model.kkt_residual() <= 1e-6, "KKT {}", model.kkt_residual());
    }

    #[test]
    fn nu_property_bounds_negative_scores() {
        let n = 100;
        let z = uniform_box(n, 5);
        let params = OsvmParams {
            nu: 0.5,
            gamma: GammaSpec::MedianSquared,
        };
        let model = osvm_fit(z.view(), &params).unwrap();
        let scores = model.score_batch(z.view()).unwrap();
        let negatives = scores.iter().filter(|&&s| s < 0.0).count();
        assert!(
            negatives <= (0.5 * n as f64).ceil() as usize,
            "{negatives} of {n} negative"
        );
    }

    #[test]
    fn margin_support_vectors_score_zero() {
        let z = uniform_box(80, 7);
        let model = osvm_fit(z.view(), &OsvmParams::default()).unwrap();
        let c = 1.0 / (0.5 * 80.0);
        let band = 1e-6 * c;
        let mut found = 0;
        for (sv, &a) in model
            .support_vectors
            .rows()
            .into_iter()
            .zip(model.alphas().iter())
        {
            if a > band && a < c - band {
                let s = model.score(sv).unwrap();
                assert!(s.abs() <= 1e-6, "margin SV score {s}");
                found += 1;
            }
        }
        assert!(found > 0, "no margin support vectors found");
    }

    #[test]
    fn cluster_center_scores_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Array2::from_shape_fn((60, 2), |_| 0.5 + rng.gen_range(-0.05..0.05));
        let params = OsvmParams {
            nu: 0.3,
            gamma: GammaSpec::Fixed(1.0),
        };
        let model = osvm_fit(z.view(), &params).unwrap();
        assert!(model.score(array![0.5, 0.5].view()).unwrap() > 0.0);
    }

    #[test]
    fn far_point_scores_minus_rho() {
        let z = uniform_box(50, 11);
        let model = osvm_fit(z.view(), &OsvmParams::default()).unwrap();
        let s = model.score(array![500.0, 500.0].view()).unwrap();
        assert!(model.rho() > 0.0);
        assert_abs_diff_eq!(s, -model.rho(), epsilon = 1e-12);
        assert!(s < 0.0);
    }

    #[test]
    fn scoring_is_deterministic() {
        let z = uniform_box(40, 13);
        let model = osvm_fit(z.view(), &OsvmParams::default()).unwrap();
        let a = model.score(array![0.4, 0.6].view()).unwrap();
        let b = model.score(array![0.4, 0.6].view()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn score_rejects_wrong_dim() {
        let z = uniform_box(10, 15);
        let model = osvm_fit(z.view(), &OsvmParams::default()).unwrap();
        assert!(model.score(array![0.0].view()).is_err());
    }

    #[test]
    fn infeasible_nu_rejected() {
        let z = uniform_box(10, 17);
        let params = OsvmParams {
            nu: 0.05, // nu*n = 0.5 < 1
            gamma: GammaSpec::Fixed(1.0),
        };
        assert!(matches!(osvm_fit(z.view(), &params), Err(Error::Domain(_))));
    }

    #[test]
    fn split_reproduces_eight_twelve_alpha() {
        // 8 in-support scores near the top, 12 out-of-support near the bottom.
        let mut scores = vec![0.05, 0.1, 0.12, 0.08, 0.02, 0.11, 0.03, 0.09, 0.06, 0.04, 0.07, 0.01];
        scores.extend([0.9, 0.95, 0.88, 0.92, 0.97, 0.85, 0.91, 0.89]);
        let r = split_validation(&scores, SplitThreshold::Fixed(0.4)).unwrap();
        assert_eq!(r.it_indices.len(), 8);
        assert_eq!(r.oot_indices.len(), 12);
        assert_abs_diff_eq!(r.alpha_hat, 0.4, epsilon = 0.0);
    }

    #[test]
    fn split_all_above_threshold() {
        let scores = vec![5.0, 6.0, 7.0, 8.0];
        // rescaled: 0, 1/3, 2/3, 1 -- threshold 0 keeps rescaled > 0
        let r = split_validation(&scores, SplitThreshold::Fixed(0.0)).unwrap();
        assert_eq!(r.oot_indices, vec![0]);
        // constant scores rescale to 0.5 and land above 0.4
        let r = split_validation(&[3.0, 3.0, 3.0], SplitThreshold::Fixed(0.4)).unwrap();
        assert_eq!(r.alpha_hat, 1.0);
        assert!(r.oot_indices.is_empty());
    }

    #[test]
    fn auto_threshold_finds_bimodal_gap() {
        let scores = vec![0.0, 0.05, 0.1, 0.85, 0.9, 1.0];
        let r = split_validation(&scores, SplitThreshold::Auto).unwrap();
        assert_eq!(r.it_indices, vec![3, 4, 5]);
        assert_abs_diff_eq!(r.alpha_hat, 0.5, epsilon = 0.0);
    }

    #[test]
    fn auto_threshold_constant_scores_all_it() {
        let r = split_validation(&[1.0, 1.0, 1.0, 1.0], SplitThreshold::Auto).unwrap();
        assert_eq!(r.alpha_hat, 1.0);
    }

    #[test]
    fn split_rejects_empty_and_bad_threshold() {
        assert!(split_validation(&[], SplitThreshold::Auto).is_err());
        assert!(split_validation(&[1.0], SplitThreshold::Fixed(1.5)).is_err());
    }

    proptest! {
        #[test]
        fn split_is_monotone_in_threshold(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..30),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = split_validation(&scores, SplitThreshold::Fixed(lo)).unwrap();
            let b = split_validation(&scores, SplitThreshold::Fixed(hi)).unwrap();
            // raising the threshold can only shrink IT
            for i in &b.it_indices {
                prop_assert!(a.it_indices.contains(i));
            }
        }
    }
}
