//! Doubly stochastic SGD training: the beam-tree trainer, the generic flat
//! trainer with a pluggable candidate selector, and the full-softmax baseline.

mod flat;
pub mod loss;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClassUnigram, DataError, Dataset};
use crate::sampling::{NoiseSampler, SamplingError};

pub use flat::{
    empirical_objective_exact, flat_step, softmax_loss_grad, softmax_train, train_generic,
    train_generic_with, CandidateSelector, TopScores,
};
pub use loss::{
    grad_generic_in, grad_generic_out, in_coefficients, loss_in, loss_out, out_coefficients,
    softmax_coefficients, ClassCoefficients, NoiseTerm,
};
pub use tree::{
    grad_tree_edge_in, grad_tree_edge_out, train_beam_tree, train_beam_tree_with, tree_step,
    EdgeUpdate, StepOutcome, TreeGradient,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tree has {tree} classes but the dataset has {data}")]
    ClassMismatch { tree: usize, data: usize },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    Unigram { power: f64 },
}

impl SamplerKind {
    pub fn build(&self, dataset: &Dataset) -> Result<NoiseSampler, TrainError> {
        let unigram = match *self {
            SamplerKind::Uniform => ClassUnigram::uniform(dataset.num_classes()),
            SamplerKind::Unigram { power } => ClassUnigram::from_counts(dataset.class_counts(), power)?,
        };
        Ok(NoiseSampler::new(&unigram)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Candidate set size per example.
    pub candidates: usize,
    /// Noise draws per example when the true class is a candidate.
    pub noises: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub branching: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub eval_every: usize,
    /// Scale the step by `1 / sqrt(1 + t)` after `t` updates.
    #[serde(default)]
    pub lr_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            candidates: 5,
            noises: 5,
            learning_rate: 0.1,
            epochs: 10,
            branching: 10,
            sampler: SamplerKind::Uniform,
            seed: 0,
            eval_every: 1,
            lr_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.candidates == 0 || self.noises == 0 {
            return fail("candidates and noises must be positive".into());
        }
        if self.candidates + self.noises > num_classes {
            return fail(format!(
                "candidates + noises = {} exceeds the {num_classes} classes",
                self.candidates + self.noises
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.branching < 2 {
            return fail(format!("branching {} must be at least 2", self.branching));
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive".into());
        }
        if let SamplerKind::Unigram { power } = self.sampler {
            if !(0.0..=1.0).contains(&power) {
                return fail(format!("unigram power {power} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub(crate) fn step_size(&self, updates_done: u64) -> f64 {
        if self.lr_decay {
            self.learning_rate / (1.0 + updates_done as f64).sqrt()
        } else {
            self.learning_rate
        }
    }
}

/// Counters accumulated over a training run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub examples_seen: u64,
    pub in_candidates: u64,
    pub out_of_candidates: u64,
    pub edge_updates: u64,
    /// Edges on every selected path, skipped because their gradient is zero.
    pub shared_edges_skipped: u64,
    pub max_updates_per_example: usize,
}

/// Summary passed to the per-epoch observer.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub examples_seen: u64,
    /// Mean sampled log-probability over the epoch.
    pub sampled_objective_mean: f64,
    pub wall_seconds: f64,
    pub stats: TrainStats,
}
