//! Training of the projection head with the combined multi-label
//! contrastive + SSL objective.

mod head;
mod loss;
mod trainer;

pub use head::{ProjectionHead, HEAD_MAGIC, HEAD_VERSION, HEAD_VERSION_WITH_BIAS};
pub use loss::{
    combined_loss, groundtruth_similarity, mcl_loss, ssl_loss, LossGrad, LossWeighting,
    PairLossGrad, SimilarityBatch,
};
pub use trainer::{
    objective, train, BatchInputs, LossTrace, ObjectiveValue, TraceRow, TrainOutcome, TrainingSet,
    Views,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const DEFAULT_LR: f64 = 0.003;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_ITERATIONS: usize = 2000;
pub const DEFAULT_DIM_OUT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Uniform in `[−1/√d_in, 1/√d_in]`.
    Uniform,
    /// Identity matrix; requires `d_in == d_out`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub lambda: f64,
    /// Drop the MCL term and train on SSL alone.
    pub ssl_only: bool,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub dim_out: usize,
    pub init: HeadInit,
    pub bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            ssl_only: false,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            batch_size: DEFAULT_BATCH_SIZE,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            dim_out: DEFAULT_DIM_OUT,
            init: HeadInit::Uniform,
            bias: false,
        }
    }
}

impl TrainConfig {
    pub fn weighting(&self) -> LossWeighting {
        if self.ssl_only || self.lambda.is_infinite() {
            LossWeighting::SslOnly
        } else {
            LossWeighting::Weighted(self.lambda)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.dim_out == 0 {
            return fail("output dimension must be positive".into());
        }
        Ok(())
    }
}
