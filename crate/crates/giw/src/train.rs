//! End-to-end trainers: the generalized importance-weighting pipeline
//! (pretrain, one-class-SVM validation split, two-term weighted objective)
//! and the baseline methods it is compared against.
//!
//! The per-step objective is
//! `alpha * mean_i(w_i * ce_i)  +  (1 - alpha) * mean_j(ce_j)`
//! where the first mean runs over a training mini-batch with weights from
//! distribution matching against the in-training validation batch, and the
//! second over an out-of-training validation batch. With an empty
//! out-of-training part and `alpha = 1` this is exactly the dynamic
//! importance weighting update.

use ndarray::Array2;
use rand::prelude::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::kernel::{GammaSpec, KernelConfig};
use crate::net::{accuracy, AdamState, Gradients, Mlp};
use crate::osvm::{osvm_fit, split_validation, OsvmParams, SplitResult, SplitThreshold};
use crate::ratio::{kmm_match, rulsif_fit, LambdaSelect, UlsifParams, WeightVector};

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Giw,
    Diw,
    Rdiw,
    ValOnly,
    PretrainVal,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Giw => "giw",
            Method::Diw => "diw",
            Method::Rdiw => "rdiw",
            Method::ValOnly => "val_only",
            Method::PretrainVal => "pretrain_val",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "giw" => Some(Method::Giw),
            "diw" => Some(Method::Diw),
            "rdiw" => Some(Method::Rdiw),
            "val_only" => Some(Method::ValOnly),
            "pretrain_val" => Some(Method::PretrainVal),
            _ => None,
        }
    }

    pub fn all() -> [Method; 5] {
        [
            Method::Giw,
            Method::Diw,
            Method::Rdiw,
            Method::ValOnly,
            Method::PretrainVal,
        ]
    }
}

/// Representation handed to the per-batch weight estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightRepr {
    /// Per-example cross-entropy as a 1-D representation (the default).
    LossValue,
    /// L2-normalized last-hidden-layer output.
    HiddenFeature,
}

/// Which estimator produces the per-batch importance weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightEstimator {
    KernelMeanMatching,
    RelativeUlsif,
}

/// Representation for the support-membership split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRepr {
    /// Raw input features (the right choice for low-dimensional data).
    RawInput,
    /// L2-normalized last-hidden-layer output of the pretrained model.
    HiddenNormalized,
}

/// Threshold rule for the validation split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// Fixed threshold on the min-max rescaled score axis.
    Fixed(f64),
    /// Kernel-contact floor: a validation point is out-of-training when its
    /// total kernel affinity to the training set falls two orders of
    /// magnitude below that of every training point.
    Auto,
}

/// One-class SVM configuration for the validation split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OsvmSplitConfig {
    pub nu: f64,
    pub gamma: GammaSpec,
    pub rule: SplitRule,
    pub representation: SplitRepr,
}

impl Default for OsvmSplitConfig {
    fn default() -> Self {
        OsvmSplitConfig {
            nu: 0.5,
            // kernel length scale ~0.14, enough to resolve the 0.1 support
            // margins of the box toys
            gamma: GammaSpec::Fixed(50.0),
            rule: SplitRule::Auto,
            representation: SplitRepr::RawInput,
        }
    }
}

/// Trainer hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Hidden layer widths of the classifier.
    pub hidden: Vec<usize>,
    /// Multiplier on the He initialization scale. Values below one keep the
    /// initial function small, so the trained model stays flat along input
    /// directions the training labels never depend on.
    pub init_scale: f64,
    /// Epochs of the main training phase (one epoch = one pass over the
    /// training data).
    pub epochs: usize,
    /// Training mini-batch size.
    pub batch_size: usize,
    /// Per-batch cap on the in-training and out-of-training validation
    /// batch sizes.
    pub val_batch: usize,
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    /// Upper box bound on importance weights.
    pub weight_bound: f64,
    /// Rescale each batch's weights to mean one after clipping.
    pub normalize_weights: bool,
    /// Minimum number of full passes over the validation parts per epoch;
    /// the per-batch validation batch size is raised if needed.
    pub oversample: usize,
    pub weight_repr: WeightRepr,
    pub weight_estimator: WeightEstimator,
    /// Kernel for the distribution-matching weight estimator.
    pub kmm_kernel: KernelConfig,
    /// Mixture weight for the relative-ratio baseline.
    pub rulsif_eta: f64,
    pub osvm: OsvmSplitConfig,
    /// Overrides the estimated in-training fraction.
    pub alpha_override: Option<f64>,
    /// Class-prior-shift mode: skip the split and use the whole validation
    /// set in both objective terms.
    pub use_full_val_both_terms: bool,
    /// Keep the pretrained parameters when the main phase starts (otherwise
    /// reinitialize and use the pretrained model only for the split).
    pub continue_from_pretrain: bool,
    /// Standardize classifier inputs by the training-feature statistics;
    /// the transform is folded back into the first layer afterwards, so
    /// returned models consume raw coordinates.
    pub standardize_inputs: bool,
    /// Keep per-batch logs (weights, losses, objective terms).
    pub record_batches: bool,
    /// Keep a parameter snapshot after every epoch.
    pub record_trajectory: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 32],
            init_scale: 1.0,
            epochs: 200,
            batch_size: 64,
            val_batch: 16,
            pretrain_epochs: 10,
            learning_rate: 0.005,
            lr_decay_factor: 0.1,
            lr_decay_every: 150,
            weight_decay: 0.0,
            weight_bound: 50.0,
            normalize_weights: true,
            oversample: 1,
            weight_repr: WeightRepr::LossValue,
            weight_estimator: WeightEstimator::KernelMeanMatching,
            kmm_kernel: KernelConfig::default(),
            rulsif_eta: 0.5,
            osvm: OsvmSplitConfig::default(),
            alpha_override: None,
            use_full_val_both_terms: false,
            continue_from_pretrain: true,
            standardize_inputs: true,
            record_batches: false,
            record_trajectory: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::domain("epochs and batch size must be >= 1".to_string()));
        }
        if self.oversample == 0 {
            return Err(Error::domain("oversample must be >= 1".to_string()));
        }
        if self.weight_bound < 0.0 {
            return Err(Error::domain("weight bound must be >= 0".to_string()));
        }
        if self.init_scale <= 0.0 {
            return Err(Error::domain("init scale must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.rulsif_eta) {
            return Err(Error::domain("eta must lie in [0, 1]".to_string()));
        }
        if let Some(a) = self.alpha_override {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::domain("alpha override must lie in [0, 1]".to_string()));
            }
        }
        Ok(())
    }

    /// Class-prior-shift variant: no validation split, both terms see all
    /// validation data, fixed alpha 1/2.
    pub fn class_prior_shift_mode(&self) -> TrainConfig {
        let mut cfg = self.clone();
        cfg.use_full_val_both_terms = true;
        cfg.alpha_override = Some(0.5);
        cfg
    }

    fn layer_dims(&self, input_dim: usize, n_classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(n_classes);
        dims
    }
}

/// Per-epoch training metrics.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub test_acc: f64,
    pub obj_term1: f64,
    pub obj_term2: f64,
    pub alpha_hat: f64,
}

/// Per-batch log for objective bookkeeping checks.
#[derive(Debug, Clone)]
pub struct BatchLog {
    pub epoch: usize,
    pub alpha_hat: f64,
    pub weights: Vec<f64>,
    pub train_losses: Vec<f64>,
    pub val2_losses: Vec<f64>,
    pub term1: f64,
    pub term2: f64,
    pub objective: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub metrics: Vec<EpochMetrics>,
    pub split: Option<SplitResult>,
    pub warnings: Vec<String>,
    pub batch_logs: Vec<BatchLog>,
    /// Parameter snapshots after each epoch (when recorded).
    pub trajectory: Vec<Mlp>,
}

// Distinct RNG streams per pipeline phase, so optional phases (like the
// validation split) never shift the training randomness.
const SEED_INIT: u64 = 0x494e4954;
const SEED_PRETRAIN: u64 = 0x50524554;
const SEED_TRAIN: u64 = 0x54524149;
const SEED_VAL1: u64 = 0x56414c31;
const SEED_VAL2: u64 = 0x56414c32;
const SEED_RULSIF: u64 = 0x52554c46;

/// Scores validation data against a one-class SVM fit on the training
/// representation and splits it into in-training and out-of-training parts.
pub fn val_data_split(
    model: &Mlp,
    dtr: &Dataset,
    dv: &Dataset,
    cfg: &OsvmSplitConfig,
) -> Result<SplitResult> {
    if dv.is_empty() {
        return Err(Error::domain("validation set is empty".to_string()));
    }
    let (ztr, zv) = match cfg.representation {
        SplitRepr::RawInput => (dtr.features.clone(), dv.features.clone()),
        SplitRepr::HiddenNormalized => (
            model.hidden_representation(dtr.features.view())?,
            model.hidden_representation(dv.features.view())?,
        ),
    };
    let params = OsvmParams {
        nu: cfg.nu,
        gamma: cfg.gamma,
    };
    let osvm = osvm_fit(ztr.view(), &params)?;
    let val_scores = osvm.score_batch(zv.view())?;
    match cfg.rule {
        SplitRule::Fixed(t) => split_validation(&val_scores, SplitThreshold::Fixed(t)),
        SplitRule::Auto => {
            let train_scores = osvm.score_batch(ztr.view())?;
            contact_floor_split(&val_scores, &train_scores, osvm.rho())
        }
    }
}

/// Fraction of the lowest training kernel contact below which a point is
/// declared out-of-training.
const CONTACT_FLOOR_FRACTION: f64 = 0.01;

/// Kernel-contact floor rule. The decision score is `g(z) = contact(z) - rho`
/// with `contact(z)` the dual-weighted kernel sum, so `contact = score + rho`
/// is strictly positive on the training support and collapses toward zero
/// off it. A validation point whose contact drops an order of magnitude
/// below the worst training point's cannot plausibly lie in the support
/// (in-support contacts stay within a factor of ~30 of the training minimum,
/// while points past the support margin collapse by four or more orders).
fn contact_floor_split(val_scores: &[f64], train_scores: &[f64], rho: f64) -> Result<SplitResult> {
    if val_scores.is_empty() {
        return Err(Error::domain("no scores to split".to_string()));
    }
    let t_min_contact = train_scores
        .iter()
        .map(|s| s + rho)
        .fold(f64::INFINITY, f64::min)
        .max(1e-300);
    let floor = CONTACT_FLOOR_FRACTION * t_min_contact;
    let threshold_raw = floor - rho;

    let rescaled = crate::osvm::rescale_scores(val_scores);
    let mut it = Vec::new();
    let mut oot = Vec::new();
    for (i, &s) in val_scores.iter().enumerate() {
        if s > threshold_raw {
            it.push(i);
        } else {
            oot.push(i);
        }
    }
    // report the threshold on the rescaled axis
    let v_min = val_scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let v_max = val_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = if v_max > v_min {
        ((threshold_raw - v_min) / (v_max - v_min)).clamp(0.0, 1.0)
    } else if val_scores.iter().all(|&s| s <= threshold_raw) {
        1.0
    } else {
        0.0
    };
    Ok(SplitResult {
        alpha_hat: it.len() as f64 / val_scores.len() as f64,
        it_indices: it,
        oot_indices: oot,
        raw_scores: val_scores.to_vec(),
        rescaled_scores: rescaled,
        threshold,
    })
}

/// Cycles shuffled passes over a fixed index set. Requests covering the whole
/// set return it unshuffled and consume no randomness.
struct ValCycler {
    indices: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    started: bool,
}

impl ValCycler {
    fn new(n: usize, seed: u64) -> Self {
        ValCycler {
            indices: (0..n).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            started: false,
        }
    }

    fn next_batch(&mut self, k: usize) -> Vec<usize> {
        if self.indices.is_empty() || k == 0 {
            return Vec::new();
        }
        if k >= self.indices.len() {
            return (0..self.indices.len()).collect();
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == 0 || !self.started {
                self.indices.shuffle(&mut self.rng);
                self.started = true;
            }
            let take = (k - out.len()).min(self.indices.len() - self.pos);
            out.extend_from_slice(&self.indices[self.pos..self.pos + take]);
            self.pos += take;
            if self.pos == self.indices.len() {
                self.pos = 0;
            }
        }
        out
    }
}

/// Effective per-batch validation batch size: the configured cap, raised so
/// the whole part is passed at least `oversample` times per epoch.
fn effective_val_batch(cap: usize, part_size: usize, batches_per_epoch: usize, oversample: usize) -> usize {
    if part_size == 0 {
        return 0;
    }
    let coverage = (oversample * part_size).div_ceil(batches_per_epoch.max(1));
    cap.max(coverage).min(part_size)
}

fn he_model(cfg: &TrainConfig, input_dim: usize, n_classes: usize, seed: u64) -> Result<Mlp> {
    Mlp::new_he_scaled(
        &cfg.layer_dims(input_dim, n_classes),
        seed ^ SEED_INIT,
        cfg.init_scale,
    )
}

/// Plain empirical-risk minimization on `data` (uniform weights, no
/// validation terms).
fn erm_train(
    mut model: Mlp,
    data: &Dataset,
    epochs: usize,
    cfg: &TrainConfig,
    eval: Option<&Dataset>,
    seed: u64,
    metrics: Option<&mut Vec<EpochMetrics>>,
) -> Result<Mlp> {
    if data.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset".to_string()));
    }
    let mut opt = AdamState::new(
        &model,
        cfg.learning_rate,
        cfg.weight_decay,
        cfg.lr_decay_factor,
        cfg.lr_decay_every,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut metrics = metrics;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (loss, grads) = model.weighted_cross_entropy(
                batch.features.view(),
                &batch.labels,
                &vec![1.0; batch.len()],
            )?;
            opt.step(&mut model, &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        opt.advance_epoch();
        if let Some(out) = metrics.as_deref_mut() {
            let eval = eval.expect("metrics requested without eval data");
            out.push(EpochMetrics {
                epoch,
                test_acc: accuracy(&model, eval.features.view(), &eval.labels)?,
                obj_term1: loss_sum / batches.max(1) as f64,
                obj_term2: 0.0,
                alpha_hat: 1.0,
            });
        }
    }
    Ok(model)
}

/// Per-batch importance weights from the configured estimator, on the
/// configured representation. Falls back to uniform weights when the batch
/// representation is degenerate (e.g. all loss values identical).
#[allow(clippy::too_many_arguments)]
fn estimate_batch_weights(
    model: &Mlp,
    batch: &Dataset,
    val1: &Dataset,
    cfg: &TrainConfig,
    train_losses: &[f64],
    seed: u64,
    warnings: &mut Vec<String>,
    warned: &mut bool,
) -> Result<Vec<f64>> {
    let (ztr, zv) = match cfg.weight_repr {
        WeightRepr::LossValue => {
            let val_losses = model.per_example_ce(val1.features.view(), &val1.labels)?;
            (
                Array2::from_shape_vec((train_losses.len(), 1), train_losses.to_vec())
                    .expect("column vector"),
                Array2::from_shape_vec((val_losses.len(), 1), val_losses).expect("column vector"),
            )
        }
        WeightRepr::HiddenFeature => (
            model.hidden_representation(batch.features.view())?,
            model.hidden_representation(val1.features.view())?,
        ),
    };
    let weights = match cfg.weight_estimator {
        WeightEstimator::KernelMeanMatching => {
            match kmm_match(ztr.view(), zv.view(), &cfg.kmm_kernel, cfg.weight_bound) {
                Ok(w) => w,
                Err(Error::Degenerate(msg)) => {
                    if !*warned {
                        warnings.push(format!("degenerate matching batch, uniform weights: {msg}"));
                        *warned = true;
                    }
                    WeightVector::new(vec![1.0f64.min(cfg.weight_bound); batch.len()], cfg.weight_bound)?
                }
                Err(e) => return Err(e),
            }
        }
        WeightEstimator::RelativeUlsif => {
            let params = UlsifParams {
                lambda: LambdaSelect::Fixed(0.1),
                n_centers: 100,
                kernel: cfg.kmm_kernel,
                seed,
            };
            match rulsif_fit(ztr.view(), zv.view(), cfg.rulsif_eta, &params) {
                Ok(m) => {
                    let raw = m.eval_batch(ztr.view())?;
                    let clipped: Vec<f64> =
                        raw.iter().map(|w| w.clamp(0.0, cfg.weight_bound)).collect();
                    WeightVector::new(clipped, cfg.weight_bound)?
                }
                Err(Error::Degenerate(msg)) => {
                    if !*warned {
                        warnings.push(format!("degenerate ratio batch, uniform weights: {msg}"));
                        *warned = true;
                    }
                    WeightVector::new(vec![1.0f64.min(cfg.weight_bound); batch.len()], cfg.weight_bound)?
                }
                Err(e) => return Err(e),
            }
        }
    };
    let mut weights = weights;
    if cfg.normalize_weights {
        weights.normalize_mean_one();
    }
    Ok(weights.into_vec())
}

/// Trains with the two-term objective given an existing split of the
/// validation data. With `dv2` empty and `alpha_hat = 1` this runs the plain
/// dynamic importance weighting update.
#[allow(clippy::too_many_arguments)]
pub fn model_update(
    mut model: Mlp,
    dtr: &Dataset,
    dv1: &Dataset,
    dv2: &Dataset,
    alpha_hat: f64,
    cfg: &TrainConfig,
    eval: &Dataset,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&alpha_hat) {
        return Err(Error::domain(format!("alpha_hat {alpha_hat} outside [0, 1]")));
    }
    if dtr.is_empty() {
        return Err(Error::domain("training set is empty".to_string()));
    }
    let mut warnings = Vec::new();
    let mut warned_degenerate = false;
    if dv1.is_empty() && alpha_hat > 0.0 {
        warnings.push(
            "in-training validation part is empty; dropping the weighted term".to_string(),
        );
    }

    let mut opt = AdamState::new(
        &model,
        cfg.learning_rate,
        cfg.weight_decay,
        cfg.lr_decay_factor,
        cfg.lr_decay_every,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SEED_TRAIN);
    let mut val1_cycler = ValCycler::new(dv1.len(), seed ^ SEED_VAL1);
    let mut val2_cycler = ValCycler::new(dv2.len(), seed ^ SEED_VAL2);
    let batches_per_epoch = dtr.len().div_ceil(cfg.batch_size);
    let n1 = effective_val_batch(cfg.val_batch, dv1.len(), batches_per_epoch, cfg.oversample);
    let n2 = effective_val_batch(cfg.val_batch, dv2.len(), batches_per_epoch, cfg.oversample);

    let mut order: Vec<usize> = (0..dtr.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut batch_logs = Vec::new();
    let mut trajectory = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut term1_sum = 0.0;
        let mut term2_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = dtr.select(chunk);
            let mut grads: Option<Gradients> = None;
            let mut term1 = 0.0;
            let mut term2 = 0.0;
            let mut log_weights = Vec::new();
            let mut log_train_losses = Vec::new();
            let mut log_val2_losses = Vec::new();

            if !dv1.is_empty() || alpha_hat > 0.0 {
                // Weighted term over the training batch. The losses also feed
                // the matching representation, so compute them first.
                let train_losses = model.per_example_ce(batch.features.view(), &batch.labels)?;
                let weights = if dv1.is_empty() {
                    // degenerate: no in-training validation data to match
                    Vec::new()
                } else {
                    let v1 = dv1.select(&val1_cycler.next_batch(n1));
                    let rulsif_seed = (seed ^ SEED_RULSIF)
                        .wrapping_add((epoch as u64) << 24)
                        .wrapping_add(batch_idx as u64);
                    estimate_batch_weights(
                        &model,
                        &batch,
                        &v1,
                        cfg,
                        &train_losses,
                        rulsif_seed,
                        &mut warnings,
                        &mut warned_degenerate,
                    )?
                };
                if !weights.is_empty() {
                    let scaled: Vec<f64> = weights.iter().map(|w| alpha_hat * w).collect();
                    let (loss, g) = model.weighted_cross_entropy(
                        batch.features.view(),
                        &batch.labels,
                        &scaled,
                    )?;
                    term1 = loss;
                    grads = Some(g);
                    if cfg.record_batches {
                        log_weights = weights;
                        log_train_losses = train_losses;
                    }
                }
            }

            if !dv2.is_empty() && alpha_hat < 1.0 && n2 > 0 {
                let v2 = dv2.select(&val2_cycler.next_batch(n2));
                let w2 = vec![1.0 - alpha_hat; v2.len()];
                let (loss, g, losses) = model.weighted_cross_entropy_detailed(
                    v2.features.view(),
                    &v2.labels,
                    &w2,
                )?;
                term2 = loss;
                match grads.as_mut() {
                    Some(total) => total.add(&g),
                    None => grads = Some(g),
                }
                if cfg.record_batches {
                    log_val2_losses = losses;
                }
            }

            if let Some(g) = grads {
                opt.step(&mut model, &g)?;
            }
            term1_sum += term1;
            term2_sum += term2;
            batches += 1;
            if cfg.record_batches {
                batch_logs.push(BatchLog {
                    epoch,
                    alpha_hat,
                    weights: log_weights,
                    train_losses: log_train_losses,
                    val2_losses: log_val2_losses,
                    term1,
                    term2,
                    objective: term1 + term2,
                });
            }
        }
        opt.advance_epoch();
        metrics.push(EpochMetrics {
            epoch,
            test_acc: accuracy(&model, eval.features.view(), &eval.labels)?,
            obj_term1: term1_sum / batches.max(1) as f64,
            obj_term2: term2_sum / batches.max(1) as f64,
            alpha_hat,
        });
        if cfg.record_trajectory {
            trajectory.push(model.clone());
        }
    }

    Ok(TrainOutcome {
        model,
        metrics,
        split: None,
        warnings,
        batch_logs,
        trajectory,
    })
}

/// Column-wise input standardization fitted on training features. Training
/// runs in standardized coordinates; [`Standardizer::fold_into`] bakes the
/// affine transform into the first layer so the model consumes raw inputs.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(data: &Dataset) -> Standardizer {
        let n = data.len().max(1) as f64;
        let d = data.dim();
        let mut mean = vec![0.0; d];
        for i in 0..data.len() {
            for c in 0..d {
                mean[c] += data.features[[i, c]];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for i in 0..data.len() {
            for c in 0..d {
                var[c] += (data.features[[i, c]] - mean[c]).powi(2);
            }
        }
        let inv_std = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    1.0 / s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, inv_std }
    }

    fn transform(&self, data: &Dataset) -> Dataset {
        let mut features = data.features.clone();
        for mut row in features.rows_mut() {
            for c in 0..row.len() {
                row[c] = (row[c] - self.mean[c]) * self.inv_std[c];
            }
        }
        Dataset {
            features,
            labels: data.labels.clone(),
            provenance: data.provenance,
        }
    }

    /// `W (x - mu) * inv_std + b  ==  (W diag(inv_std)) x + (b - W (mu * inv_std))`
    fn fold_into(&self, model: &Mlp) -> Mlp {
        let mut weights = model.weights().to_vec();
        let mut biases = model.biases().to_vec();
        let w0 = weights[0].clone();
        for (c, &is) in self.inv_std.iter().enumerate() {
            for r in 0..w0.nrows() {
                weights[0][[r, c]] = w0[[r, c]] * is;
            }
        }
        for r in 0..w0.nrows() {
            let shift: f64 = (0..self.mean.len())
                .map(|c| w0[[r, c]] * self.mean[c] * self.inv_std[c])
                .sum();
            biases[0][r] -= shift;
        }
        Mlp::from_parts(weights, biases).expect("folded model is consistent")
    }
}

fn fold_outcome(std: &Option<Standardizer>, outcome: &mut TrainOutcome) {
    if let Some(s) = std {
        outcome.model = s.fold_into(&outcome.model);
        for m in &mut outcome.trajectory {
            *m = s.fold_into(m);
        }
    }
}

/// Empty validation placeholder of the right width.
pub fn empty_validation(dim: usize) -> Dataset {
    Dataset::new(Array2::zeros((0, dim)), Vec::new(), Provenance::Validation)
        .expect("empty dataset is consistent")
}

/// Full pipeline with an externally supplied validation split: initialize,
/// pretrain, then run the two-term update.
#[allow(clippy::too_many_arguments)]
pub fn train_giw_with_split(
    dtr: &Dataset,
    dv1: &Dataset,
    dv2: &Dataset,
    alpha_hat: f64,
    cfg: &TrainConfig,
    eval: &Dataset,
    seed: u64,
) -> Result<TrainOutcome> {
    let std = cfg.standardize_inputs.then(|| Standardizer::fit(dtr));
    let (dtr, dv1, dv2, eval) = match &std {
        Some(s) => (
            s.transform(dtr),
            s.transform(dv1),
            s.transform(dv2),
            s.transform(eval),
        ),
        None => (dtr.clone(), dv1.clone(), dv2.clone(), eval.clone()),
    };
    let n_classes = n_classes_of(&dtr, &eval);
    let init = he_model(cfg, dtr.dim(), n_classes, seed)?;
    let pretrained = erm_train(
        init,
        &dtr,
        cfg.pretrain_epochs,
        cfg,
        None,
        seed ^ SEED_PRETRAIN,
        None,
    )?;
    let start = if cfg.continue_from_pretrain {
        pretrained
    } else {
        he_model(cfg, dtr.dim(), n_classes, seed)?
    };
    let mut outcome = model_update(start, &dtr, &dv1, &dv2, alpha_hat, cfg, &eval, seed)?;
    fold_outcome(&std, &mut outcome);
    Ok(outcome)
}

fn n_classes_of(a: &Dataset, b: &Dataset) -> usize {
    a.labels
        .iter()
        .chain(b.labels.iter())
        .copied()
        .max()
        .unwrap_or(0)
        + 1
}

/// Trains the selected method end to end.
pub fn train_method(
    method: Method,
    dtr: &Dataset,
    dv: &Dataset,
    cfg: &TrainConfig,
    eval: &Dataset,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dv.is_empty() {
        return Err(Error::domain("validation set is empty".to_string()));
    }
    let n_classes = n_classes_of(dtr, eval).max(n_classes_of(dv, eval));
    match method {
        Method::ValOnly => {
            let std = cfg.standardize_inputs.then(|| Standardizer::fit(dv));
            let (dv_t, eval_t) = match &std {
                Some(s) => (s.transform(dv), s.transform(eval)),
                None => (dv.clone(), eval.clone()),
            };
            let init = he_model(cfg, dv_t.dim(), n_classes, seed)?;
            let mut metrics = Vec::new();
            let model = erm_train(
                init,
                &dv_t,
                cfg.epochs,
                cfg,
                Some(&eval_t),
                seed ^ SEED_TRAIN,
                Some(&mut metrics),
            )?;
            let mut outcome = TrainOutcome {
                model,
                metrics,
                split: None,
                warnings: Vec::new(),
                batch_logs: Vec::new(),
                trajectory: Vec::new(),
            };
            fold_outcome(&std, &mut outcome);
            Ok(outcome)
        }
        Method::PretrainVal => {
            let std = cfg.standardize_inputs.then(|| Standardizer::fit(dtr));
            let (dtr_t, dv_t, eval_t) = match &std {
                Some(s) => (s.transform(dtr), s.transform(dv), s.transform(eval)),
                None => (dtr.clone(), dv.clone(), eval.clone()),
            };
            let init = he_model(cfg, dtr_t.dim(), n_classes, seed)?;
            let pretrained = erm_train(
                init,
                &dtr_t,
                cfg.pretrain_epochs,
                cfg,
                None,
                seed ^ SEED_PRETRAIN,
                None,
            )?;
            let mut metrics = Vec::new();
            let model = erm_train(
                pretrained,
                &dv_t,
                cfg.epochs,
                cfg,
                Some(&eval_t),
                seed ^ SEED_TRAIN,
                Some(&mut metrics),
            )?;
            let mut outcome = TrainOutcome {
                model,
                metrics,
                split: None,
                warnings: Vec::new(),
                batch_logs: Vec::new(),
                trajectory: Vec::new(),
            };
            fold_outcome(&std, &mut outcome);
            Ok(outcome)
        }
        Method::Diw | Method::Rdiw => {
            let mut cfg = cfg.clone();
            cfg.weight_estimator = match method {
                Method::Rdiw => WeightEstimator::RelativeUlsif,
                _ => WeightEstimator::KernelMeanMatching,
            };
            // the whole validation set acts as the in-training part
            train_giw_with_split(dtr, dv, &empty_validation(dv.dim()), 1.0, &cfg, eval, seed)
        }
        Method::Giw => {
            if cfg.use_full_val_both_terms {
                let alpha = cfg.alpha_override.unwrap_or(0.5);
                return train_giw_with_split(dtr, dv, dv, alpha, cfg, eval, seed);
            }
            // Split first. The raw-input representation ignores the model and
            // the raw coordinates keep the support-margin scale the one-class
            // kernel is calibrated for; the hidden representation needs the
            // pretrained model, trained in the same standardized space as the
            // main phase.
            let split = match cfg.osvm.representation {
                SplitRepr::RawInput => {
                    let probe = he_model(cfg, dtr.dim(), n_classes, seed)?;
                    val_data_split(&probe, dtr, dv, &cfg.osvm)?
                }
                SplitRepr::HiddenNormalized => {
                    let std = cfg.standardize_inputs.then(|| Standardizer::fit(dtr));
                    let (dtr_t, dv_t) = match &std {
                        Some(s) => (s.transform(dtr), s.transform(dv)),
                        None => (dtr.clone(), dv.clone()),
                    };
                    let init = he_model(cfg, dtr_t.dim(), n_classes, seed)?;
                    let pretrained = erm_train(
                        init,
                        &dtr_t,
                        cfg.pretrain_epochs,
                        cfg,
                        None,
                        seed ^ SEED_PRETRAIN,
                        None,
                    )?;
                    val_data_split(&pretrained, &dtr_t, &dv_t, &cfg.osvm)?
                }
            };
            let dv1 = dv.select(&split.it_indices);
            let dv2 = dv.select(&split.oot_indices);
            let alpha_hat = cfg.alpha_override.unwrap_or(split.alpha_hat);
            let mut outcome =
                train_giw_with_split(dtr, &dv1, &dv2, alpha_hat, cfg, eval, seed)?;
            outcome.split = Some(split);
            Ok(outcome)
        }
    }
}

/// Appends per-epoch metrics rows in the
/// `epoch,method,seed,test_acc,obj_term1,obj_term2,alpha_hat` format.
pub fn metrics_to_csv(method: Method, seed: u64, metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,method,seed,test_acc,obj_term1,obj_term2,alpha_hat\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.9e},{:.9e},{:.6}\n",
            m.epoch,
            method.tag(),
            seed,
            m.test_acc,
            m.obj_term1,
            m.obj_term2,
            m.alpha_hat
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{CaseId, GridVariant, Side, SupportSpec};
    use approx::assert_abs_diff_eq;

    fn toy_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            ..TrainConfig::default()
        }
    }

    fn grid_data(variant: GridVariant, seed: u64) -> (Dataset, Dataset, Dataset) {
        let spec = SupportSpec::grid_example(variant);
        let dtr = spec.sample(Side::Train, 200, seed).unwrap();
        let dv = spec.toy_validation(seed ^ 0x56).unwrap();
        let eval = spec.sample(Side::Test, 4000, 0xE7A1).unwrap();
        (dtr, dv, eval)
    }

    #[test]
    fn split_on_case_iii_toy_validation() {
        let spec = SupportSpec::grid_example(GridVariant::Aligned);
        let dtr = spec.sample(Side::Train, 200, 1).unwrap();
        let dv = spec.toy_validation(2).unwrap();
        let model = Mlp::new_he(&[2, 32, 32, 2], 3).unwrap();
        let split = val_data_split(&model, &dtr, &dv, &OsvmSplitConfig::default()).unwrap();
        assert_abs_diff_eq!(split.alpha_hat, 0.5);
        // rows 2 and 3 are the centers of the test-only squares
        assert_eq!(split.oot_indices, vec![2, 3]);
        // full ranking separation between the parts
        let worst_it = split
            .it_indices
            .iter()
            .map(|&i| split.raw_scores[i])
            .fold(f64::INFINITY, f64::min);
        let best_oot = split
            .oot_indices
            .iter()
            .map(|&i| split.raw_scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst_it > best_oot);
    }

    #[test]
    fn split_on_matching_supports_keeps_everything() {
        let spec = SupportSpec::case_spec(CaseId::I);
        let dtr = spec.sample(Side::Train, 200, 5).unwrap();
        let dv = spec.sample(Side::Test, 8, 6).unwrap();
        let model = Mlp::new_he(&[2, 32, 32, 2], 7).unwrap();
        let split = val_data_split(&model, &dtr, &dv, &OsvmSplitConfig::default()).unwrap();
        assert_eq!(split.alpha_hat, 1.0);
        assert!(split.oot_indices.is_empty());
    }

    #[test]
    fn split_with_fixed_threshold_matches_plain_rule() {
        let spec = SupportSpec::grid_example(GridVariant::Aligned);
        let dtr = spec.sample(Side::Train, 200, 11).unwrap();
        let dv = spec.toy_validation(12).unwrap();
        let model = Mlp::new_he(&[2, 32, 32, 2], 13).unwrap();
        let cfg = OsvmSplitConfig {
            rule: SplitRule::Fixed(0.4),
            ..OsvmSplitConfig::default()
        };
        let split = val_data_split(&model, &dtr, &dv, &cfg).unwrap();
        assert_abs_diff_eq!(split.alpha_hat, 0.5);
        assert_eq!(split.oot_indices, vec![2, 3]);
    }

    #[test]
    fn effective_val_batch_covers_the_part() {
        // small part: the cap wins
        assert_eq!(effective_val_batch(16, 2, 4, 1), 2);
        // large part: raised so 4 batches cover 100 points at least once
        assert_eq!(effective_val_batch(16, 100, 4, 1), 25);
        // oversampling doubles the demand
        assert_eq!(effective_val_batch(16, 100, 4, 2), 50);
        assert_eq!(effective_val_batch(16, 0, 4, 1), 0);
    }

    #[test]
    fn val_cycler_covers_all_indices() {
        let mut c = ValCycler::new(5, 9);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..5 {
            for i in c.next_batch(2) {
                seen.insert(i);
            }
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn diw_reduces_to_erm_with_unit_weights_and_no_oot() {
        // With weights pinned at 1 (normalize off, bound 1) and no OOT term,
        // the update is plain weighted ERM.
        let (dtr, dv, eval) = grid_data(GridVariant::Aligned, 21);
        let mut cfg = toy_cfg(3);
        cfg.weight_bound = 1.0;
        cfg.normalize_weights = false;
        cfg.pretrain_epochs = 0;
        // kmm with bound 1 can still go below 1; force uniform by zero bound + fallback
        // instead: check the objective value equals the plain mean loss when
        // weights are all 1 via the bookkeeping logs
        cfg.record_batches = true;
        let out = train_giw_with_split(
            &dtr,
            &dv,
            &empty_validation(2),
            1.0,
            &cfg,
            &eval,
            3,
        )
        .unwrap();
        for log in &out.batch_logs {
            // with alpha = 1 and no OOT term the objective is the weighted mean
            let m = log.train_losses.len() as f64;
            let recomputed: f64 = log
                .weights
                .iter()
                .zip(&log.train_losses)
                .map(|(w, l)| w * l)
                .sum::<f64>()
                / m;
            assert_abs_diff_eq!(log.objective, recomputed, epsilon = 1e-10);
        }
    }

    #[test]
    fn objective_bookkeeping_reproduces_logged_terms() {
        let (dtr, dv, eval) = grid_data(GridVariant::Checkerboard, 23);
        let mut cfg = toy_cfg(2);
        cfg.record_batches = true;
        cfg.pretrain_epochs = 2;
        let out = train_method(Method::Giw, &dtr, &dv, &cfg, &eval, 5).unwrap();
        assert!(!out.batch_logs.is_empty());
        for log in &out.batch_logs {
            let m = log.train_losses.len().max(1) as f64;
            let term1: f64 = log.alpha_hat
                * log
                    .weights
                    .iter()
                    .zip(&log.train_losses)
                    .map(|(w, l)| w * l)
                    .sum::<f64>()
                / m;
            let n2 = log.val2_losses.len().max(1) as f64;
            let term2: f64 =
                (1.0 - log.alpha_hat) * log.val2_losses.iter().sum::<f64>() / n2;
            assert_abs_diff_eq!(log.term1, term1, epsilon = 1e-10);
            assert_abs_diff_eq!(log.term2, term2, epsilon = 1e-10);
            assert_abs_diff_eq!(log.objective, term1 + term2, epsilon = 1e-10);
        }
    }

    #[test]
    fn metrics_are_seed_deterministic() {
        let (dtr, dv, eval) = grid_data(GridVariant::Aligned, 31);
        let cfg = toy_cfg(3);
        let a = train_method(Method::Giw, &dtr, &dv, &cfg, &eval, 7).unwrap();
        let b = train_method(Method::Giw, &dtr, &dv, &cfg, &eval, 7).unwrap();
        assert_eq!(a.model.max_param_diff(&b.model), 0.0);
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(x.test_acc.to_bits(), y.test_acc.to_bits());
            assert_eq!(x.obj_term1.to_bits(), y.obj_term1.to_bits());
        }
    }

    #[test]
    fn giw_with_empty_oot_matches_diw_bitwise() {
        let (dtr, dv, eval) = grid_data(GridVariant::Aligned, 37);
        let mut cfg = toy_cfg(4);
        cfg.record_trajectory = true;
        let diw = train_method(Method::Diw, &dtr, &dv, &cfg, &eval, 11).unwrap();
        let giw = train_giw_with_split(&dtr, &dv, &empty_validation(2), 1.0, &cfg, &eval, 11)
            .unwrap();
        assert_eq!(diw.trajectory.len(), giw.trajectory.len());
        for (a, b) in diw.trajectory.iter().zip(&giw.trajectory) {
            assert_eq!(a.max_param_diff(b), 0.0);
        }
    }

    #[test]
    fn class_prior_shift_mode_sets_alpha_half() {
        let cfg = toy_cfg(1);
        let shifted = cfg.class_prior_shift_mode();
        assert_eq!(shifted.alpha_override, Some(0.5));
        assert!(shifted.use_full_val_both_terms);
        // disabling restores split behavior
        let mut restored = shifted.clone();
        restored.use_full_val_both_terms = false;
        restored.alpha_override = None;
        assert!(!restored.use_full_val_both_terms);
        assert_eq!(restored.alpha_override, None);
    }

    #[test]
    fn class_prior_shift_mode_uses_all_val_in_both_terms() {
        let (dtr, dv, eval) = grid_data(GridVariant::Aligned, 41);
        let mut cfg = toy_cfg(1).class_prior_shift_mode();
        cfg.record_batches = true;
        cfg.pretrain_epochs = 1;
        let out = train_method(Method::Giw, &dtr, &dv, &cfg, &eval, 13).unwrap();
        assert!(out
            .metrics
            .iter()
            .all(|m| (m.alpha_hat - 0.5).abs() < 1e-12));
        // both terms active: the OOT losses come from the full validation set
        assert!(out.batch_logs.iter().any(|l| l.val2_losses.len() == dv.len()));
        assert!(out.batch_logs.iter().all(|l| !l.weights.is_empty()));
    }

    #[test]
    fn empty_dv1_falls_back_to_oot_only() {
        let (dtr, dv, eval) = grid_data(GridVariant::Aligned, 43);
        let cfg = toy_cfg(1);
        let out = model_update(
            Mlp::new_he(&[2, 32, 32, 2], 1).unwrap(),
            &dtr,
            &empty_validation(2),
            &dv,
            0.0,
            &cfg,
            &eval,
            17,
        )
        .unwrap();
        assert!(out.metrics[0].obj_term1 == 0.0);
        assert!(out.metrics[0].obj_term2 > 0.0);
    }

    #[test]
    fn rejects_unknown_alpha_or_empty_train() {
        let (dtr, dv, eval) = grid_data(GridVariant::Aligned, 47);
        let cfg = toy_cfg(1);
        assert!(model_update(
            Mlp::new_he(&[2, 32, 32, 2], 1).unwrap(),
            &dtr,
            &dv,
            &empty_validation(2),
            1.5,
            &cfg,
            &eval,
            0
        )
        .is_err());
        assert!(train_method(Method::ValOnly, &dtr, &empty_validation(2), &cfg, &eval, 0).is_err());
    }

    #[test]
    fn metrics_csv_format() {
        let metrics = vec![EpochMetrics {
            epoch: 0,
            test_acc: 0.5,
            obj_term1: 1.0,
            obj_term2: 0.25,
            alpha_hat: 0.5,
        }];
        let csv = metrics_to_csv(Method::Giw, 3, &metrics);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,method,seed,test_acc,obj_term1,obj_term2,alpha_hat"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,giw,3,0.500000,"));
    }
}
