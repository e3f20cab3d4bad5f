//! Numerical checks of the estimator's statistical theory: consistency on
//! synthetic softmax data, the asymptotic precision matrices, the vanishing
//! gap to the softmax MLE, a Monte Carlo covariance experiment, and coverage.

mod gradcheck;
mod variance;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Example, LabelDictionary};
use crate::matrix::{dense_dot, Matrix};
use crate::model::{CaneModel, FlatModel};
use crate::search::beam_top;
use crate::trainer::{softmax_train, train_generic, TopScores, TrainConfig, TrainError};

pub use gradcheck::{gradient_check, GradCheckReport};
pub use variance::{
    corollary1_gap, corollary1_limit_check, estimator_variance_mc, min_eigenvalue,
    variance_matrix_m, variance_matrix_mle, VarianceInputs, VarianceReport,
};

#[derive(Debug, Error)]
pub enum StatError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("matrix is singular")]
    Singular,
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Ground truth for a synthetic softmax problem. The last weight row is zero,
/// so class `K - 1` is the reference for log-odds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub weights: Matrix,
    pub n: usize,
}

impl SyntheticSpec {
    pub fn new(weights: Matrix, n: usize) -> Result<Self, StatError> {
        if weights.rows() < 2 || weights.cols() == 0 {
            return Err(StatError::Invalid("need at least two classes and one feature".into()));
        }
        if !weights.is_finite() {
            return Err(StatError::Invalid("weights must be finite".into()));
        }
        if weights.row(weights.rows() - 1).iter().any(|&v| v != 0.0) {
            return Err(StatError::Invalid("last weight row must be zero".into()));
        }
        Ok(Self { weights, n })
    }

    /// Weights drawn i.i.d. `N(0, scale^2)` with the reference row zeroed.
    pub fn random(num_classes: usize, dim: usize, n: usize, scale: f64, seed: u64) -> Result<Self, StatError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Matrix::zeros(num_classes, dim);
        for k in 0..num_classes.saturating_sub(1) {
            for v in w.row_mut(k) {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Self::new(w, n)
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { weights: self.weights.clone(), n }
    }
}

/// `(x, k) -> (W* x)_k - (W* x)_K`, plus the class probabilities behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueLogOdds {
    weights: Matrix,
}

impl TrueLogOdds {
    pub fn log_odds(&self, x: &[f64], class: usize) -> f64 {
        // The reference row is zero, so its score is zero.
        dense_dot(self.weights.row(class), x)
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&(0..self.weights.rows()).map(|k| self.log_odds(x, k)).collect::<Vec<_>>())
    }
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub(crate) fn draw_x<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub(crate) fn draw_label<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

fn dense_to_sparse(x: &[f64]) -> Vec<(usize, f64)> {
    x.iter().copied().enumerate().collect()
}

/// Draws `spec.n` examples with `x ~ N(0, I_d)` and `y ~ softmax(W* x)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> (Dataset, TrueLogOdds) {
    let truth = TrueLogOdds { weights: spec.weights.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..spec.n)
        .map(|_| {
            let x = draw_x(spec.dim(), &mut rng);
            let y = draw_label(&truth.probabilities(&x), &mut rng);
            Example { features: dense_to_sparse(&x), label: y }
        })
        .collect();
    let ds = Dataset::new(examples, LabelDictionary::identity(spec.num_classes()), spec.dim())
        .expect("synthetic examples are valid");
    (ds, truth)
}

/// Mean over `probe` of `sum_k (s_k - s_K - log-odds_k)^2 / (K - 1)`.
pub fn log_odds_mse(model: &FlatModel, truth: &TrueLogOdds, probe: &[Vec<f64>]) -> f64 {
    let k = model.num_classes();
    let r = k - 1;
    let total: f64 = probe
        .iter()
        .map(|x| {
            let sx = dense_to_sparse(x);
            let s_ref = model.score(&sx, r);
            (0..r)
                .map(|c| (model.score(&sx, c) - s_ref - truth.log_odds(x, c)).powi(2))
                .sum::<f64>()
                / r as f64
        })
        .sum();
    total / probe.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The generic trainer with top-scoring candidates.
    Cane,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub n: usize,
    pub mse: f64,
}

/// Number of fresh inputs used to measure log-odds error.
pub const PROBE_SIZE: usize = 2000;

/// Fits the chosen estimator on fresh synthetic data at each `n` and reports
/// the log-odds error on a shared probe set.
pub fn consistency_experiment(
    spec: &SyntheticSpec,
    config: &TrainConfig,
    n_grid: &[usize],
    seed: u64,
    estimator: Estimator,
) -> Result<Vec<ConsistencyPoint>, StatError> {
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid.first() == Some(&0) {
        return Err(StatError::Invalid("n grid must be positive and increasing".into()));
    }
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let probe: Vec<Vec<f64>> = (0..PROBE_SIZE).map(|_| draw_x(spec.dim(), &mut probe_rng)).collect();
    n_grid
        .iter()
        .map(|&n| {
            let (ds, truth) = generate_synthetic(&spec.with_n(n), seed.wrapping_mul(1_000_003).wrapping_add(n as u64));
            let cfg = TrainConfig { seed: seed.wrapping_add(n as u64), ..config.clone() };
            let model = match estimator {
                Estimator::Cane => train_generic(&ds, &cfg, &TopScores)?,
                Estimator::Softmax => softmax_train(&ds, &cfg)?,
            };
            Ok(ConsistencyPoint { n, mse: log_odds_mse(&model, &truth, &probe) })
        })
        .collect()
}

/// Fraction of examples whose label is among the top `candidates` beam results.
pub fn coverage_probability(model: &CaneModel, dataset: &Dataset, candidates: usize) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let hits = dataset
        .examples()
        .par_iter()
        .filter(|ex| {
            beam_top(&model.tree, &model.params, &model.representation, &ex.features, candidates)
                .iter()
                .any(|&(c, _)| c == ex.label)
        })
        .count();
    hits as f64 / dataset.len() as f64
}
