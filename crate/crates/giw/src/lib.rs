//! Generalized importance weighting for distribution shift with support
//! change.
//!
//! When the test support extends beyond the training support, reweighting the
//! training loss by the density ratio silently drops the test mass that the
//! training distribution never sees, and the weighted objective undershoots
//! the true risk. This crate implements the corrected two-term objective —
//! a weighted term over the in-training part of the test distribution plus a
//! plain term over the out-of-training part — along with everything needed to
//! run and check it end to end:
//!
//! - [`net`]: a small feedforward classifier with weighted cross-entropy,
//!   exact gradients, and an Adam optimizer;
//! - [`kernel`]: RBF Gram matrices, the median-distance bandwidth heuristic,
//!   and ridge stabilization;
//! - [`ratio`]: importance-weight estimators (kernel mean matching, uLSIF,
//!   RuLSIF) plus exact ratios for synthetic specs;
//! - [`osvm`]: a one-class SVM for scoring support membership and splitting
//!   validation data;
//! - [`synth`]: closed-form piecewise-uniform synthetic problems covering
//!   the four support-relationship cases;
//! - [`oracle`]: Monte-Carlo estimates of the risk and both objectives, with
//!   consistency reports;
//! - [`train`]: the full training pipelines (split-based method and
//!   baselines);
//! - [`experiment`]: config-driven experiment harness and artifact output.

pub mod data;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod net;
pub mod oracle;
pub mod osvm;
pub mod ratio;
pub mod synth;
pub mod train;

pub use data::{Dataset, Provenance};
pub use error::{Error, Result};
