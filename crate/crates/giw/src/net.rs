//! Minimal feedforward classifier: dense layers with ReLU hidden activations
//! and identity outputs, weighted cross-entropy with exact gradients, a
//! finite-difference gradient check, and an Adam optimizer with decoupled
//! weight decay and stepped learning-rate decay.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Fully connected network. `weights[l]` has shape `(dims[l+1], dims[l])`;
/// hidden layers apply ReLU, the last layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Per-parameter gradients, same shapes as the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            weights: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Accumulates another gradient set of the same shape.
    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

impl Mlp {
    /// He-initialized network for the given layer sizes, e.g. `[2, 32, 32, 2]`.
    pub fn new_he(dims: &[usize], seed: u64) -> Result<Self> {
        Mlp::new_he_scaled(dims, seed, 1.0)
    }

    /// He initialization with the per-layer standard deviation multiplied by
    /// `scale`. Small scales keep the function close to zero at the start,
    /// so input directions that carry no training signal stay unused.
    pub fn new_he_scaled(dims: &[usize], seed: u64, scale: f64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::domain("need at least input and output layers".to_string()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::domain("layer sizes must be positive".to_string()));
        }
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::domain(format!("init scale must be positive, got {scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let std = scale * (2.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds a network from explicit parameters (used for hand-constructed
    /// classifiers in evaluations and tests).
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::shape("weights/biases layer counts differ".to_string()));
        }
        let mut dims = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != b.len() {
                return Err(Error::shape(format!("layer {l}: bias length {} != rows {}", b.len(), w.nrows())));
            }
            if w.ncols() != dims[l] {
                return Err(Error::shape(format!(
                    "layer {l}: expected {} input columns, got {}",
                    dims[l],
                    w.ncols()
                )));
            }
            dims.push(w.nrows());
        }
        if weights
            .iter()
            .any(|w| w.iter().any(|v| !v.is_finite()))
            || biases.iter().any(|b| b.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::numeric("non-finite parameter".to_string()));
        }
        Ok(Mlp { dims, weights, biases })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.dims.last().expect("at least two layers")
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Maximum absolute parameter difference between two models of the same shape.
    pub fn max_param_diff(&self, other: &Mlp) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.weights.iter().zip(&other.weights) {
            for (x, y) in a.iter().zip(b.iter()) {
                m = m.max((x - y).abs());
            }
        }
        for (a, b) in self.biases.iter().zip(&other.biases) {
            for (x, y) in a.iter().zip(b.iter()) {
                m = m.max((x - y).abs());
            }
        }
        m
    }

    fn check_batch(&self, batch: ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} columns, model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for a batch (rows = examples, columns = classes).
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let mut a = batch.to_owned();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    /// Activations of the last hidden layer (before the output layer).
    ///
    /// For a single-layer network this is the input itself.
    pub fn forward_hidden(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(batch)?;
        let mut a = batch.to_owned();
        let last = self.weights.len() - 1;
        for (w, b) in self.weights[..last].iter().zip(&self.biases[..last]) {
            let mut z = a.dot(&w.t());
            z += b;
            z.mapv_inplace(|v| v.max(0.0));
            a = z;
        }
        Ok(a)
    }

    /// Row-wise L2-normalized last-hidden-layer output, the representation
    /// used for support detection on trained models.
    pub fn hidden_representation(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut h = self.forward_hidden(batch)?;
        for mut row in h.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        Ok(h)
    }

    /// Argmax class predictions.
    pub fn predict(&self, batch: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(argmax_rows(&logits))
    }

    /// Loss and exact gradients of the weighted cross-entropy
    /// `(1/n) * sum_i w_i * ce_i` over the batch.
    pub fn weighted_cross_entropy(
        &self,
        batch: ArrayView2<'_, f64>,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<(f64, Gradients)> {
        let (loss, grads, _) = self.weighted_cross_entropy_detailed(batch, labels, weights)?;
        Ok((loss, grads))
    }

    /// As [`Mlp::weighted_cross_entropy`] but also returns the per-example
    /// (unweighted) cross-entropy values.
    pub fn weighted_cross_entropy_detailed(
        &self,
        batch: ArrayView2<'_, f64>,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<(f64, Gradients, Vec<f64>)> {
        self.check_batch(batch)?;
        let n = batch.nrows();
        if labels.len() != n || weights.len() != n {
            return Err(Error::shape(format!(
                "batch {n} rows, {} labels, {} weights",
                labels.len(),
                weights.len()
            )));
        }
        let c = self.n_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::domain(format!("label {bad} outside [0, {c})")));
        }
        if let Some(&bad) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
            return Err(Error::domain(format!("weight {bad} must be finite and >= 0")));
        }
        if n == 0 {
            return Ok((0.0, Gradients::zeros_like(self), Vec::new()));
        }

        // Forward pass keeping post-activation values per layer.
        let mut activations: Vec<Array2<f64>> = vec![batch.to_owned()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[l].dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        let logits = &activations[last + 1];

        // Per-example cross-entropy via log-sum-exp, and the output delta
        // (w_i / n) * (softmax_i - onehot_i).
        let mut ce = Vec::with_capacity(n);
        let mut delta = Array2::<f64>::zeros((n, c));
        for i in 0..n {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            ce.push(lse - row[labels[i]]);
            let scale = weights[i] / n as f64;
            for j in 0..c {
                let softmax = (row[j] - lse).exp();
                delta[[i, j]] = scale * (softmax - if j == labels[i] { 1.0 } else { 0.0 });
            }
        }
        let loss = ce
            .iter()
            .zip(weights)
            .map(|(l, w)| l * w)
            .sum::<f64>()
            / n as f64;

        // Backward pass.
        let mut grads = Gradients::zeros_like(self);
        let mut d = delta;
        for l in (0..self.weights.len()).rev() {
            grads.weights[l] = d.t().dot(&activations[l]);
            grads.biases[l] = d.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = d.dot(&self.weights[l]);
                // ReLU mask from the stored post-activation values.
                for (p, a) in prev.iter_mut().zip(activations[l].iter()) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                d = prev;
            }
        }
        Ok((loss, grads, ce))
    }

    /// Per-example cross-entropy without gradients.
    pub fn per_example_ce(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Vec<f64>> {
        let logits = self.forward(batch)?;
        let c = self.n_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::domain(format!("label {bad} outside [0, {c})")));
        }
        Ok(labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let row = logits.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[y]
            })
            .collect())
    }

    /// Worst relative disagreement between analytic gradients and central
    /// finite differences over every parameter. Diagnostic only.
    pub fn grad_check(
        &self,
        batch: ArrayView2<'_, f64>,
        labels: &[usize],
        weights: &[f64],
        epsilon: f64,
    ) -> Result<f64> {
        if epsilon <= 0.0 || epsilon > 1e-3 {
            return Err(Error::domain(format!("epsilon {epsilon} outside (0, 1e-3]")));
        }
        let (_, analytic) = self.weighted_cross_entropy(batch, labels, weights)?;
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;

        let mut check = |analytic_g: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (analytic_g - numeric).abs() / (analytic_g.abs() + 1e-8);
            if rel > worst {
                worst = rel;
            }
        };

        for l in 0..self.weights.len() {
            for idx in ndarray::indices(self.weights[l].dim()) {
                let orig = probe.weights[l][idx];
                probe.weights[l][idx] = orig + epsilon;
                let (lp, _, _) = probe.weighted_cross_entropy_detailed(batch, labels, weights)?;
                probe.weights[l][idx] = orig - epsilon;
                let (lm, _, _) = probe.weighted_cross_entropy_detailed(batch, labels, weights)?;
                probe.weights[l][idx] = orig;
                check(analytic.weights[l][idx], lp, lm);
            }
            for i in 0..self.biases[l].len() {
                let orig = probe.biases[l][i];
                probe.biases[l][i] = orig + epsilon;
                let (lp, _, _) = probe.weighted_cross_entropy_detailed(batch, labels, weights)?;
                probe.biases[l][i] = orig - epsilon;
                let (lm, _, _) = probe.weighted_cross_entropy_detailed(batch, labels, weights)?;
                probe.biases[l][i] = orig;
                check(analytic.biases[l][i], lp, lm);
            }
        }
        Ok(worst)
    }
}

/// Row-wise argmax (first maximum wins).
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Fraction of correct argmax predictions.
pub fn accuracy(model: &Mlp, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let pred = model.predict(batch)?;
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

/// Adam with decoupled weight decay and a stepped learning-rate schedule
/// (`lr * factor^(epoch / every)`).
#[derive(Debug, Clone)]
pub struct AdamState {
    base_lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    decay_factor: f64,
    decay_every: usize,
    epoch: usize,
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(model: &Mlp, lr: f64, weight_decay: f64, decay_factor: f64, decay_every: usize) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::domain(format!("learning rate must be positive, got {lr}")));
        }
        Ok(AdamState {
            base_lr: lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            decay_factor,
            decay_every,
            epoch: 0,
            step: 0,
            m_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        })
    }

    /// Current learning rate under the stepped schedule.
    pub fn learning_rate(&self) -> f64 {
        if self.decay_every == 0 {
            return self.base_lr;
        }
        self.base_lr * self.decay_factor.powi((self.epoch / self.decay_every) as i32)
    }

    /// Advances the schedule by one epoch.
    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One Adam update in place. Gradient shapes must match the model.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != model.weights.len() {
            return Err(Error::shape("gradient layer count mismatch".to_string()));
        }
        if !grads.is_finite() {
            return Err(Error::numeric("non-finite gradient".to_string()));
        }
        self.step += 1;
        let lr = self.learning_rate();
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for l in 0..model.weights.len() {
            if grads.weights[l].dim() != model.weights[l].dim()
                || grads.biases[l].len() != model.biases[l].len()
            {
                return Err(Error::shape(format!("gradient shape mismatch at layer {l}")));
            }
            update_tensor(
                model.weights[l].iter_mut(),
                grads.weights[l].iter(),
                self.m_w[l].iter_mut(),
                self.v_w[l].iter_mut(),
                lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                self.weight_decay,
                bc1,
                bc2,
            );
            update_tensor(
                model.biases[l].iter_mut(),
                grads.biases[l].iter(),
                self.m_b[l].iter_mut(),
                self.v_b[l].iter_mut(),
                lr,
                self.beta1,
                self.beta2,
                self.epsilon,
                // Biases are not decayed.
                0.0,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor<'a>(
    params: impl Iterator<Item = &'a mut f64>,
    grads: impl Iterator<Item = &'a f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    bc1: f64,
    bc2: f64,
) {
    for (((p, g), m), v) in params.zip(grads).zip(m).zip(v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + epsilon) + weight_decay * *p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, d: usize, c: usize, seed: u64) -> (Array2<f64>, Vec<usize>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.5..1.5));
        let y = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let w = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        (x, y, w)
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let zero = Mlp::from_parts(
            vec![Array2::zeros((3, 2)), Array2::zeros((2, 3))],
            vec![Array1::zeros(3), Array1::zeros(2)],
        )
        .unwrap();
        let x = array![[0.5, -1.0], [2.0, 3.0]];
        let logits = zero.forward(x.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let eye = Mlp::from_parts(vec![Array2::eye(2)], vec![Array1::zeros(2)]).unwrap();
        let x = array![[0.3, -0.7], [5.0, 2.0]];
        let logits = eye.forward(x.view()).unwrap();
        assert_eq!(logits, x);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        // Hand-rolled matrix multiply with explicit loops, kept independent of
        // the ndarray-based implementation.
        let model = Mlp::new_he(&[2, 16, 2], 42).unwrap();
        let x = array![[0.25, -1.5], [1.0, 0.0], [-0.3, 0.9]];
        let logits = model.forward(x.view()).unwrap();
        for i in 0..x.nrows() {
            let mut hidden = [0.0f64; 16];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut acc = model.biases()[0][j];
                for k in 0..2 {
                    acc += model.weights()[0][[j, k]] * x[[i, k]];
                }
                *h = acc.max(0.0);
            }
            for j in 0..2 {
                let mut acc = model.biases()[1][j];
                for (k, h) in hidden.iter().enumerate() {
                    acc += model.weights()[1][[j, k]] * h;
                }
                assert_abs_diff_eq!(logits[[i, j]], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = Mlp::new_he(&[3, 4, 2], 0).unwrap();
        let x = Array2::<f64>::zeros((2, 2));
        assert!(model.forward(x.view()).is_err());
    }

    #[test]
    fn zero_weights_zero_loss_and_gradients() {
        let model = Mlp::new_he(&[2, 4, 2], 1).unwrap();
        let (x, y, _) = random_batch(6, 2, 2, 2);
        let (loss, grads) = model
            .weighted_cross_entropy(x.view(), &y, &vec![0.0; 6])
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn uniform_weights_reduce_to_mean_ce() {
        let model = Mlp::new_he(&[2, 4, 3], 3).unwrap();
        let (x, y, _) = random_batch(8, 2, 3, 4);
        let (loss, _) = model
            .weighted_cross_entropy(x.view(), &y, &vec![1.0; 8])
            .unwrap();
        let ce = model.per_example_ce(x.view(), &y).unwrap();
        assert_abs_diff_eq!(loss, ce.iter().sum::<f64>() / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_logits_give_ln2() {
        let zero = Mlp::from_parts(vec![Array2::zeros((2, 2))], vec![Array1::zeros(2)]).unwrap();
        let (loss, _) = zero
            .weighted_cross_entropy(array![[1.0, -1.0]].view(), &[0], &[1.0])
            .unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let model = Mlp::new_he(&[2, 2], 0).unwrap();
        let r = model.weighted_cross_entropy(array![[0.0, 0.0]].view(), &[2], &[1.0]);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn loss_and_gradients_scale_linearly_in_weights() {
        let model = Mlp::new_he(&[2, 5, 2], 9).unwrap();
        let (x, y, w) = random_batch(7, 2, 2, 10);
        let (l1, g1) = model.weighted_cross_entropy(x.view(), &y, &w).unwrap();
        let w3: Vec<f64> = w.iter().map(|v| 3.0 * v).collect();
        let (l3, g3) = model.weighted_cross_entropy(x.view(), &y, &w3).unwrap();
        assert_abs_diff_eq!(l3, 3.0 * l1, epsilon = 1e-12);
        for (a, b) in g1.weights.iter().zip(&g3.weights) {
            for (x1, x3) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(*x3, 3.0 * *x1, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_normalize() {
        let model = Mlp::new_he(&[2, 8, 4], 5).unwrap();
        let (x, _, _) = random_batch(10, 2, 4, 6);
        let logits = model.forward(x.view()).unwrap();
        for row in logits.rows() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let total: f64 = row.iter().map(|v| (v - max).exp() / sum).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn grad_check_small_net() {
        let model = Mlp::new_he(&[2, 4, 2], 7).unwrap();
        let (x, y, w) = random_batch(8, 2, 2, 8);
        let err = model.grad_check(x.view(), &y, &w, 1e-5).unwrap();
        assert!(err <= 1e-4, "gradient check error {err}");
    }

    #[test]
    fn grad_check_zero_weights_is_zero() {
        let model = Mlp::new_he(&[2, 3, 2], 11).unwrap();
        let (x, y, _) = random_batch(5, 2, 2, 12);
        let err = model.grad_check(x.view(), &y, &vec![0.0; 5], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_deterministic() {
        let model = Mlp::new_he(&[2, 4, 2], 13).unwrap();
        let (x, y, w) = random_batch(6, 2, 2, 14);
        let a = model.grad_check(x.view(), &y, &w, 1e-5).unwrap();
        let b = model.grad_check(x.view(), &y, &w, 1e-5).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        let model = Mlp::new_he(&[2, 2], 0).unwrap();
        let x = array![[0.0, 0.0]];
        assert!(model.grad_check(x.view(), &[0], &[1.0], 0.0).is_err());
        assert!(model.grad_check(x.view(), &[0], &[1.0], 1e-2).is_err());
    }

    #[test]
    fn adam_zero_gradients_leave_parameters() {
        let mut model = Mlp::new_he(&[2, 3, 2], 15).unwrap();
        let before = model.clone();
        let mut opt = AdamState::new(&model, 0.01, 0.0, 0.1, 100).unwrap();
        let grads = Gradients {
            weights: model.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: model.biases().iter().map(|b| Array1::zeros(b.len())).collect(),
        };
        opt.step(&mut model, &grads).unwrap();
        assert_eq!(model.max_param_diff(&before), 0.0);
    }

    #[test]
    fn adam_descends_on_quadratic() {
        // f(theta) = theta^2 represented as a 1x1 "weight"; gradient fed manually.
        let mut model =
            Mlp::from_parts(vec![array![[1.0]]], vec![Array1::zeros(1)]).unwrap();
        let mut opt = AdamState::new(&model, 0.05, 0.0, 1.0, 0).unwrap();
        let theta = model.weights()[0][[0, 0]];
        let grads = Gradients {
            weights: vec![array![[2.0 * theta]]],
            biases: vec![Array1::zeros(1)],
        };
        opt.step(&mut model, &grads).unwrap();
        assert!(model.weights()[0][[0, 0]].abs() < theta.abs());
    }

    #[test]
    fn adam_converges_on_convex_quadratic() {
        // f(w) = 0.5 * sum lambda_i (w_i - t_i)^2 with known optimum t.
        let lambdas = [0.5, 1.0, 2.0];
        let targets = [1.0, -2.0, 0.5];
        let mut model = Mlp::from_parts(
            vec![array![[3.0, 3.0, 3.0]]],
            vec![Array1::zeros(1)],
        )
        .unwrap();
        let mut opt = AdamState::new(&model, 0.1, 0.0, 1.0, 0).unwrap();
        for _ in 0..200 {
            let w = model.weights()[0].row(0).to_owned();
            let g: Vec<f64> = (0..3).map(|i| lambdas[i] * (w[i] - targets[i])).collect();
            let grads = Gradients {
                weights: vec![Array2::from_shape_vec((1, 3), g).unwrap()],
                biases: vec![Array1::zeros(1)],
            };
            opt.step(&mut model, &grads).unwrap();
        }
        let w = model.weights()[0].row(0);
        let grad_norm: f64 = (0..3)
            .map(|i| (lambdas[i] * (w[i] - targets[i])).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(grad_norm <= 1e-3, "gradient norm {grad_norm}");
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut model = Mlp::new_he(&[2, 2], 0).unwrap();
        let mut opt = AdamState::new(&model, 0.01, 0.0, 1.0, 0).unwrap();
        let grads = Gradients {
            weights: vec![array![[f64::NAN, 0.0], [0.0, 0.0]]],
            biases: vec![Array1::zeros(2)],
        };
        assert!(matches!(opt.step(&mut model, &grads), Err(Error::Numeric(_))));
    }

    #[test]
    fn lr_schedule_steps_down() {
        let model = Mlp::new_he(&[2, 2], 0).unwrap();
        let mut opt = AdamState::new(&model, 0.0005, 0.0, 0.1, 100).unwrap();
        assert_abs_diff_eq!(opt.learning_rate(), 0.0005);
        for _ in 0..100 {
            opt.advance_epoch();
        }
        assert_abs_diff_eq!(opt.learning_rate(), 0.00005);
        for _ in 0..100 {
            opt.advance_epoch();
        }
        assert_abs_diff_eq!(opt.learning_rate(), 0.000005, epsilon = 1e-18);
    }

    #[test]
    fn he_init_is_seed_deterministic() {
        let a = Mlp::new_he(&[2, 32, 32, 2], 77).unwrap();
        let b = Mlp::new_he(&[2, 32, 32, 2], 77).unwrap();
        assert_eq!(a.max_param_diff(&b), 0.0);
        let c = Mlp::new_he(&[2, 32, 32, 2], 78).unwrap();
        assert!(a.max_param_diff(&c) > 0.0);
    }
}
