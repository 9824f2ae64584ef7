//! Streaming kernel ridge regression with batch incremental/decremental
//! updates.
//!
//! Three model families share one edit vocabulary ([`EditBatch`]):
//!
//! - [`IntrinsicModel`]: primal KRR with bias over an explicit polynomial
//!   feature map. Caches `S⁻¹ = (ΦΦᵀ + ρI)⁻¹` and updates it with one
//!   Woodbury step per batch of additions and removals.
//! - [`EmpiricalModel`]: dual KRR over any kernel. Caches `Q⁻¹ = (K + ρI)⁻¹`
//!   and grows/shrinks it with bordered block-inverse identities.
//! - [`BayesPosterior`]: Gaussian posterior over the intrinsic weights with
//!   the same batch updates applied to the posterior covariance, plus a
//!   Gaussian predictive distribution.
//!
//! The [`harness`] module replays edit streams against batch, single-sample
//! and full-refit strategies and reports timings and equivalence.

pub mod error;
pub mod harness;
pub mod kbr;
pub mod kernels;
pub mod krr_empirical;
pub mod krr_intrinsic;
pub mod linalg;
pub mod sample;

pub use error::{Error, Result};
pub use kbr::{BayesPosterior, BayesPrior, PredictiveDist};
pub use kernels::KernelSpec;
pub use krr_empirical::EmpiricalModel;
pub use krr_intrinsic::IntrinsicModel;
pub use sample::{EditBatch, Sample, SampleId};

use serde::{Deserialize, Serialize};

/// Default ridge parameter `ρ`.
pub const DEFAULT_RIDGE: f64 = 0.5;

/// Outcome of checking an edit batch against the size rule under which the
/// incremental path is cheaper than recomputing from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Guard {
    Proceed,
    AdviseRefit,
}

/// Scalar regression model with a ±1 decision rule on top.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> Result<f64>;

    /// `+1` when `predict(x) − threshold >= 0`, else `−1` (ties go to `+1`).
    fn classify(&self, x: &[f64], threshold: f64) -> Result<f64> {
        Ok(sign_label(self.predict(x)? - threshold))
    }
}

pub fn sign_label(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Drift control for cached inverses: rebuild from the stored samples every
/// `every_rounds` edits, or (empirical space) as soon as a probed row of the
/// normal equations misses by more than `residual_tolerance` relative to the
/// label scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefreshPolicy {
    pub every_rounds: usize,
    pub residual_tolerance: f64,
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        RefreshPolicy {
            every_rounds: 1000,
            residual_tolerance: 1e-6,
        }
    }
}

pub(crate) fn check_ridge(ridge: f64) -> Result<()> {
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter(format!("ridge must be positive, got {ridge}")));
    }
    Ok(())
}

/// `‖a − b‖∞ / ‖b‖∞` over parameter vectors of equal length.
pub fn relative_deviation(a: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(a.len(), reference.len(), "parameter vectors differ in length");
    let diff = a
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = reference.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}
