//! Importance-weight estimators.
//!
//! Three routes to per-example weights:
//! - [`kmm_match`]: kernel mean matching of a training batch onto a
//!   validation batch, a box-constrained quadratic program solved by
//!   projected gradient with an exact active-set polish;
//! - [`ulsif_fit`] / [`rulsif_fit`]: (relative) unconstrained least-squares
//!   importance fitting with a closed-form ridge solution;
//! - [`true_ratio`]: the exact density ratio of a synthetic spec, undefined
//!   off the training support.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{rbf_gram, KernelConfig};
use crate::linalg::solve_spd;
use crate::synth::{Side, SupportSpec};

/// Non-negative per-example weights with a box upper bound.
#[derive(Debug, Clone)]
pub struct WeightVector {
    weights: Vec<f64>,
    bound: f64,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>, bound: f64) -> Result<Self> {
        if bound < 0.0 {
            return Err(Error::domain(format!("weight bound must be >= 0, got {bound}")));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0 || *w > bound + 1e-12) {
            return Err(Error::domain("weights must lie in [0, bound]".to_string()));
        }
        Ok(WeightVector { weights, bound })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }

    /// Rescales to mean 1 (when the mean is positive), then re-clips into the
    /// box. Keeps the effective loss scale stable across batches.
    pub fn normalize_mean_one(&mut self) {
        let m = self.mean();
        if m > 1e-12 {
            for w in &mut self.weights {
                *w = (*w / m).clamp(0.0, self.bound);
            }
        }
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}

/// Weights matching the kernel mean embedding of `ztr` (weighted) to that of
/// `zval`: minimizes `|| (1/m) sum_i w_i phi(ztr_i) - (1/n) sum_j phi(zval_j) ||^2`
/// subject to `0 <= w_i <= bound`, on the ridge-stabilized Gram matrix.
pub fn kmm_match(
    ztr: ArrayView2<'_, f64>,
    zval: ArrayView2<'_, f64>,
    config: &KernelConfig,
    bound: f64,
) -> Result<WeightVector> {
    if ztr.nrows() == 0 || zval.nrows() == 0 {
        return Err(Error::domain("kmm_match needs non-empty inputs".to_string()));
    }
    if bound < 0.0 {
        return Err(Error::domain(format!("weight bound must be >= 0, got {bound}")));
    }
    let m = ztr.nrows();
    if bound == 0.0 {
        return WeightVector::new(vec![0.0; m], 0.0);
    }
    let gamma = config.resolve_gamma(ztr)?;

    // Rows the kernel cannot tell apart (k rounds to 1) must share the
    // optimal weight (averaging within such a group keeps the matching terms
    // and strictly shrinks the ridge term), so the QP can be solved over one
    // variable per distinguishable row. Loss-value representations late in
    // training collapse onto a few values, which would otherwise make the
    // Gram matrix degenerate.
    let (groups, group_of) = group_indistinct_rows(ztr, gamma);
    let g = groups.len();
    let mut reps = Array2::<f64>::zeros((g, ztr.ncols()));
    let mut counts = vec![0.0f64; g];
    for (gi, members) in groups.iter().enumerate() {
        reps.row_mut(gi).assign(&ztr.row(members[0]));
        counts[gi] = members.len() as f64;
    }

    let k_gg = rbf_gram(reps.view(), reps.view(), gamma)?;
    let kappa = rbf_gram(reps.view(), zval, gamma)?.sum_axis(Axis(1));

    // In per-point weights u_g (shared within each group), the objective
    //   F(w) = (1/m^2) w'(K + ridge I)w - (2/(m n)) w' kappa
    // becomes (1/2) u' A u - b' u with
    //   A[g,h] = (2/m^2) (c_g c_h K[g,h] + delta_gh ridge c_g),
    //   b[g]   = (2/(m n)) c_g kappa_g.
    let mf = m as f64;
    let nf = zval.nrows() as f64;
    let mut a = Array2::<f64>::zeros((g, g));
    for gi in 0..g {
        for gj in 0..g {
            a[[gi, gj]] = 2.0 / (mf * mf) * counts[gi] * counts[gj] * k_gg[[gi, gj]];
        }
        a[[gi, gi]] += 2.0 / (mf * mf) * config.ridge * counts[gi];
    }
    let b = Array1::from_shape_fn(g, |gi| 2.0 / (mf * nf) * counts[gi] * kappa[gi]);

    let u = solve_box_qp(&a, &b, 0.0, bound)?;
    let weights: Vec<f64> = (0..m).map(|i| u[group_of[i]]).collect();
    WeightVector::new(weights, bound)
}

/// Groups rows whose kernel similarity rounds to one (`gamma * d^2` below
/// float resolution), via union-find over all pairs. Returns the member
/// lists and each row's group index.
fn group_indistinct_rows(z: ArrayView2<'_, f64>, gamma: f64) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = z.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for c in 0..z.ncols() {
                let diff = z[[i, c]] - z[[j, c]];
                d2 += diff * diff;
            }
            if gamma * d2 <= 1e-12 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut group_of = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        if group_of[root] == usize::MAX {
            group_of[root] = groups.len();
            groups.push(Vec::new());
        }
        group_of[i] = group_of[root];
        groups[group_of[i]].push(i);
    }
    (groups, group_of)
}

/// KKT residual of `w` for `min F(w) = (1/2) w'Aw - b'w` over the box
/// `[lo, hi]^m`: the largest first-order violation across coordinates.
pub fn box_qp_kkt_residual(a: &Array2<f64>, b: &Array1<f64>, w: &Array1<f64>, lo: f64, hi: f64) -> f64 {
    let g = a.dot(w) - b;
    let tol_edge = 1e-10 * (hi - lo).max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let v = if w[i] <= lo + tol_edge {
            (-g[i]).max(0.0) // gradient must be >= 0 at the lower bound
        } else if w[i] >= hi - tol_edge {
            g[i].max(0.0) // gradient must be <= 0 at the upper bound
        } else {
            g[i].abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Solves `min (1/2) w'Aw - b'w` over `[lo, hi]^m` for positive-definite `A`.
///
/// Short projected-gradient phases (Barzilai-Borwein steps with Armijo
/// backtracking) identify the active set; exact solves on the free
/// coordinates then drive the KKT residual down to 1e-6. Iterations are
/// capped at 10 000 projected-gradient steps overall, with an
/// objective-change tolerance of 1e-10 inside each phase.
pub fn solve_box_qp(a: &Array2<f64>, b: &Array1<f64>, lo: f64, hi: f64) -> Result<Array1<f64>> {
    let m = b.len();
    if a.nrows() != m || a.ncols() != m {
        return Err(Error::shape(format!(
            "QP matrix {}x{} does not match rhs length {m}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut w = Array1::<f64>::from_elem(m, 1.0f64.clamp(lo, hi));
    let mut f = qp_objective(a, b, &w);
    // conservative step bound from the row-sum bound on the spectrum of A
    let l_bound = a
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1e-300);

    let mut pg_budget = 10_000usize;
    for round in 0..60 {
        let f_round_start = f;
        let (w_new, f_new, used) = pg_phase(a, b, &w, f, lo, hi, l_bound, 16.min(pg_budget));
        pg_budget = pg_budget.saturating_sub(used);
        let pg_moved = (&w_new - &w).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        w = w_new;
        f = f_new;
        let mut polished = false;
        if let Some((w_pol, f_pol)) = polish_free_set(a, b, &w, f, lo, hi) {
            polished = (&w_pol - &w).iter().map(|v| v.abs()).fold(0.0f64, f64::max) > 1e-15;
            w = w_pol;
            f = f_pol;
        }
        // stop at the documented stationarity tolerance, when out of
        // budget, or when the objective stops moving (degenerate kernels can
        // hold the KKT residual near the tolerance long after the objective
        // has converged)
        let stall_tol = (1e-7 * f.abs()).max(1e-10);
        if box_qp_kkt_residual(a, b, &w, lo, hi) <= 1e-6
            || pg_budget == 0
            || (pg_moved <= 1e-12 && !polished)
            || (round >= 30 && f_round_start - f <= stall_tol)
        {
            break;
        }
        if std::env::var("GIW_QP_TRACE").is_ok() {
            eprintln!(
                "round {round}: f={f:.6e} df={:.2e} kkt={:.2e} pg_used={used} budget={pg_budget}",
                f_round_start - f,
                box_qp_kkt_residual(a, b, &w, lo, hi)
            );
        }
    }
    Ok(w)
}

fn qp_objective(a: &Array2<f64>, b: &Array1<f64>, w: &Array1<f64>) -> f64 {
    0.5 * w.dot(&a.dot(w)) - b.dot(w)
}

/// A bounded run of projected gradient steps; returns the new iterate, its
/// objective, and the number of steps consumed.
#[allow(clippy::too_many_arguments)]
fn pg_phase(
    a: &Array2<f64>,
    b: &Array1<f64>,
    w0: &Array1<f64>,
    f0: f64,
    lo: f64,
    hi: f64,
    l_bound: f64,
    max_steps: usize,
) -> (Array1<f64>, f64, usize) {
    let mut w = w0.clone();
    let mut f = f0;
    let mut g = a.dot(&w) - b;
    let mut alpha = 1.0 / l_bound;
    let mut prev: Option<(Array1<f64>, Array1<f64>)> = None;
    let mut used = 0;
    for _ in 0..max_steps {
        used += 1;
        if let Some((pw, pg)) = &prev {
            let s = &w - pw;
            let y = &g - pg;
            let sy = s.dot(&y);
            if sy > 1e-300 {
                alpha = (s.dot(&s) / sy).clamp(1e-12 / l_bound, 1e12 / l_bound);
            }
        }
        let mut step = alpha;
        let (cand, f_new) = loop {
            let mut cand = &w - &g.mapv(|v| step * v);
            cand.mapv_inplace(|v| v.clamp(lo, hi));
            let d = &cand - &w;
            let f_new = qp_objective(a, b, &cand);
            let quad = g.dot(&d) + d.dot(&d) / (2.0 * step);
            if f_new <= f + quad + 1e-15 || step < 1e-18 {
                break (cand, f_new);
            }
            step *= 0.5;
        };
        let g_new = a.dot(&cand) - b;
        let moved = (&cand - &w).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        prev = Some((w, g));
        w = cand;
        g = g_new;
        let df = (f - f_new).abs();
        f = f_new;
        if df <= 1e-10 && moved <= 1e-10 {
            break;
        }
    }
    (w, f, used)
}

/// One exact solve on the currently free coordinates; returns an improved
/// iterate or `None`.
fn polish_free_set(
    a: &Array2<f64>,
    b: &Array1<f64>,
    w: &Array1<f64>,
    f: f64,
    lo: f64,
    hi: f64,
) -> Option<(Array1<f64>, f64)> {
    let m = b.len();
    let g = a.dot(w) - b;
    let tol_edge = 1e-10 * (hi - lo).max(1.0);
    let free: Vec<usize> = (0..m)
        .filter(|&i| {
            if w[i] <= lo + tol_edge {
                g[i] < 0.0
            } else if w[i] >= hi - tol_edge {
                g[i] > 0.0
            } else {
                true
            }
        })
        .collect();
    if free.is_empty() {
        return None;
    }
    let nf = free.len();
    let mut pos = vec![usize::MAX; m];
    for (r, &i) in free.iter().enumerate() {
        pos[i] = r;
    }
    let mut a_ff = Array2::<f64>::zeros((nf, nf));
    let mut rhs = Array1::<f64>::zeros(nf);
    for (r, &i) in free.iter().enumerate() {
        let mut acc = b[i];
        for j in 0..m {
            if pos[j] != usize::MAX {
                a_ff[[r, pos[j]]] = a[[i, j]];
            } else {
                acc -= a[[i, j]] * w[j];
            }
        }
        rhs[r] = acc;
    }
    let sol = solve_spd(&a_ff, &rhs).ok()?;
    let mut cand = w.clone();
    for (r, &i) in free.iter().enumerate() {
        cand[i] = sol[r].clamp(lo, hi);
    }
    let f_cand = qp_objective(a, b, &cand);
    if f_cand > f + 1e-14 {
        return None;
    }
    Some((cand, f_cand))
}

/// Which least-squares ratio fit to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioVariant {
    Ulsif,
    Rulsif { eta: f64 },
}

/// Fitted radial-basis ratio model `w(x) = max(0, sum_l theta_l k(x, c_l))`.
#[derive(Debug, Clone)]
pub struct RatioModel {
    centers: Array2<f64>,
    theta: Array1<f64>,
    gamma: f64,
    variant: RatioVariant,
    lambda: f64,
}

/// Ridge selection for the least-squares fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSelect {
    Fixed(f64),
    /// 5-fold cross-validation over {1e-3, 1e-2, 1e-1, 1}.
    CrossValidated,
}

/// Parameters shared by [`ulsif_fit`] and [`rulsif_fit`].
#[derive(Debug, Clone)]
pub struct UlsifParams {
    pub lambda: LambdaSelect,
    /// Number of kernel centers, capped at the numerator sample size.
    pub n_centers: usize,
    pub kernel: KernelConfig,
    pub seed: u64,
}

impl Default for UlsifParams {
    fn default() -> Self {
        UlsifParams {
            lambda: LambdaSelect::CrossValidated,
            n_centers: 100,
            kernel: KernelConfig::default(),
            seed: 0,
        }
    }
}

const LAMBDA_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

/// Fits the density ratio test/train by unconstrained least-squares
/// importance fitting: `theta = (H + lambda I)^{-1} h` with the quadratic
/// term from the training sample and the linear term from the test sample.
pub fn ulsif_fit(
    xtr: ArrayView2<'_, f64>,
    xte: ArrayView2<'_, f64>,
    params: &UlsifParams,
) -> Result<RatioModel> {
    fit_least_squares(xte, xtr.to_owned(), params, RatioVariant::Ulsif)
}

/// Fits the eta-relative ratio `p_te / (eta p_te + (1 - eta) p_tr)` by
/// running the least-squares fit against a mixture denominator sample with an
/// eta-fraction of test rows. `eta = 0` reduces exactly to [`ulsif_fit`].
pub fn rulsif_fit(
    xtr: ArrayView2<'_, f64>,
    xte: ArrayView2<'_, f64>,
    eta: f64,
    params: &UlsifParams,
) -> Result<RatioModel> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("eta {eta} outside [0, 1]")));
    }
    let n_den = xtr.nrows();
    let n_from_test = ((eta * n_den as f64).round() as usize).min(xte.nrows());
    // Separate RNG stream from the one used for center selection, so eta = 0
    // consumes the centers stream identically to ulsif_fit.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x52554c53);
    let den = if n_from_test == 0 {
        xtr.to_owned()
    } else {
        let mut te_idx = rand::seq::index::sample(&mut rng, xte.nrows(), n_from_test).into_vec();
        te_idx.sort_unstable();
        let n_from_train = n_den - n_from_test;
        let mut tr_idx = rand::seq::index::sample(&mut rng, n_den, n_from_train).into_vec();
        tr_idx.sort_unstable();
        let d = xtr.ncols();
        let mut den = Array2::<f64>::zeros((n_den, d));
        for (r, &i) in te_idx.iter().enumerate() {
            den.row_mut(r).assign(&xte.row(i));
        }
        for (r, &i) in tr_idx.iter().enumerate() {
            den.row_mut(n_from_test + r).assign(&xtr.row(i));
        }
        den
    };
    fit_least_squares(xte, den, params, RatioVariant::Rulsif { eta })
}

fn fit_least_squares(
    num: ArrayView2<'_, f64>,
    den: Array2<f64>,
    params: &UlsifParams,
    variant: RatioVariant,
) -> Result<RatioModel> {
    if num.nrows() == 0 || den.nrows() == 0 {
        return Err(Error::domain("ratio fit needs non-empty samples".to_string()));
    }
    if num.ncols() != den.ncols() {
        return Err(Error::shape(format!(
            "ratio fit: {} vs {} columns",
            num.ncols(),
            den.ncols()
        )));
    }
    let l = params.n_centers.min(num.nrows());
    if l == 0 {
        return Err(Error::domain("need at least one center".to_string()));
    }
    let mut rng_centers = ChaCha8Rng::seed_from_u64(params.seed);
    let mut center_idx = rand::seq::index::sample(&mut rng_centers, num.nrows(), l).into_vec();
    center_idx.sort_unstable();
    let mut centers = Array2::<f64>::zeros((l, num.ncols()));
    for (r, &i) in center_idx.iter().enumerate() {
        centers.row_mut(r).assign(&num.row(i));
    }

    let gamma = params.kernel.resolve_gamma(den.view())?;
    let g_den = rbf_gram(den.view(), centers.view(), gamma)?;
    let g_num = rbf_gram(num, centers.view(), gamma)?;

    let lambda = match params.lambda {
        LambdaSelect::Fixed(lam) => {
            if lam <= 0.0 {
                return Err(Error::domain(format!("lambda must be positive, got {lam}")));
            }
            lam
        }
        LambdaSelect::CrossValidated => {
            cross_validate_lambda(&g_den, &g_num, params.seed ^ 0x43565f4c)?
        }
    };

    let theta = solve_ridge(&g_den, &g_num, lambda, None, None)?;
    Ok(RatioModel {
        centers,
        theta,
        gamma,
        variant,
        lambda,
    })
}

/// Solves `(H + lambda I) theta = h` where `H` and `h` are built from the
/// selected rows (all rows when the masks are `None`).
fn solve_ridge(
    g_den: &Array2<f64>,
    g_num: &Array2<f64>,
    lambda: f64,
    den_rows: Option<&[usize]>,
    num_rows: Option<&[usize]>,
) -> Result<Array1<f64>> {
    let l = g_den.ncols();
    let mut h_mat = Array2::<f64>::zeros((l, l));
    let mut count = 0usize;
    let mut add_row = |row: ArrayView1<'_, f64>| {
        for i in 0..l {
            for j in 0..=i {
                h_mat[[i, j]] += row[i] * row[j];
            }
        }
        count += 1;
    };
    match den_rows {
        Some(rows) => rows.iter().for_each(|&r| add_row(g_den.row(r))),
        None => g_den.rows().into_iter().for_each(add_row),
    }
    if count == 0 {
        return Err(Error::domain("ridge solve with empty denominator".to_string()));
    }
    for i in 0..l {
        for j in 0..i {
            h_mat[[j, i]] = h_mat[[i, j]];
        }
    }
    h_mat.mapv_inplace(|v| v / count as f64);
    for i in 0..l {
        h_mat[[i, i]] += lambda;
    }

    let mut h_vec = Array1::<f64>::zeros(l);
    let mut n_num = 0usize;
    let mut add_num = |row: ArrayView1<'_, f64>| {
        h_vec += &row;
        n_num += 1;
    };
    match num_rows {
        Some(rows) => rows.iter().for_each(|&r| add_num(g_num.row(r))),
        None => g_num.rows().into_iter().for_each(add_num),
    }
    if n_num == 0 {
        return Err(Error::domain("ridge solve with empty numerator".to_string()));
    }
    h_vec.mapv_inplace(|v| v / n_num as f64);
    solve_spd(&h_mat, &h_vec)
        .map_err(|e| Error::numeric(format!("ratio system singular despite ridge: {e}")))
}

/// 5-fold cross-validation of the squared-loss fitting criterion
/// `(1/2) E_den[w^2] - E_num[w]` over the fixed lambda grid.
fn cross_validate_lambda(g_den: &Array2<f64>, g_num: &Array2<f64>, seed: u64) -> Result<f64> {
    use rand::seq::SliceRandom;
    let folds = 5usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut den_idx: Vec<usize> = (0..g_den.nrows()).collect();
    let mut num_idx: Vec<usize> = (0..g_num.nrows()).collect();
    den_idx.shuffle(&mut rng);
    num_idx.shuffle(&mut rng);

    let mut best = (f64::INFINITY, LAMBDA_GRID[0]);
    for &lambda in &LAMBDA_GRID {
        let mut score = 0.0;
        let mut usable = true;
        for f in 0..folds {
            let (den_hold, den_rest) = split_fold(&den_idx, folds, f);
            let (num_hold, num_rest) = split_fold(&num_idx, folds, f);
            if den_rest.is_empty() || num_rest.is_empty() || den_hold.is_empty() || num_hold.is_empty() {
                usable = false;
                break;
            }
            let theta = match solve_ridge(g_den, g_num, lambda, Some(&den_rest), Some(&num_rest)) {
                Ok(t) => t,
                Err(_) => {
                    usable = false;
                    break;
                }
            };
            let mut sq = 0.0;
            for &r in &den_hold {
                let w = g_den.row(r).dot(&theta);
                sq += w * w;
            }
            let mut lin = 0.0;
            for &r in &num_hold {
                lin += g_num.row(r).dot(&theta);
            }
            score += 0.5 * sq / den_hold.len() as f64 - lin / num_hold.len() as f64;
        }
        if usable && score < best.0 {
            best = (score, lambda);
        }
    }
    Ok(best.1)
}

fn split_fold(idx: &[usize], folds: usize, f: usize) -> (Vec<usize>, Vec<usize>) {
    let n = idx.len();
    let lo = f * n / folds;
    let hi = (f + 1) * n / folds;
    let hold = idx[lo..hi].to_vec();
    let rest = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
    (hold, rest)
}

impl RatioModel {
    pub fn variant(&self) -> RatioVariant {
        self.variant
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta(&self) -> ArrayView1<'_, f64> {
        self.theta.view()
    }

    /// Estimated ratio at `x`, clipped below at zero.
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut acc = 0.0;
        for (c, t) in self.centers.rows().into_iter().zip(self.theta.iter()) {
            let mut d2 = 0.0;
            for k in 0..x.len() {
                let diff = x[k] - c[k];
                d2 += diff * diff;
            }
            acc += t * (-self.gamma * d2).exp();
        }
        acc.max(0.0)
    }

    pub fn eval_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let g = rbf_gram(x, self.centers.view(), self.gamma)?;
        Ok(g.rows()
            .into_iter()
            .map(|r| r.dot(&self.theta).max(0.0))
            .collect())
    }
}

/// Exact importance `p_te(x, y) / p_tr(x, y)` from the box densities;
/// `None` where the training density vanishes (the ratio is ill-defined
/// outside the training support).
pub fn true_ratio(spec: &SupportSpec, x: [f64; 2], y: usize) -> Option<f64> {
    let p_tr = spec.density(Side::Train, x, y);
    if p_tr <= 0.0 {
        return None;
    }
    Some(spec.density(Side::Test, x, y) / p_tr)
}
