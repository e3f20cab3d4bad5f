//! Flat per-class linear models: the generic CANE trainer and the softmax baseline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{
    in_coefficients, loss_in, loss_out, out_coefficients, softmax_coefficients, ClassCoefficients,
    NoiseTerm,
};
use super::{TrainConfig, TrainError};
use crate::data::{Dataset, Example};
use crate::matrix::{log_sum_exp, sparse_axpy, Matrix, SparseVec};
use crate::model::FlatModel;
use crate::sampling::NoiseSampler;

/// Chooses the candidate set for an input under the current model.
pub trait CandidateSelector {
    fn select(&self, model: &FlatModel, x: &SparseVec, count: usize) -> Vec<usize>;
}

impl<F> CandidateSelector for F
where
    F: Fn(&FlatModel, &SparseVec, usize) -> Vec<usize>,
{
    fn select(&self, model: &FlatModel, x: &SparseVec, count: usize) -> Vec<usize> {
        self(model, x, count)
    }
}

/// The `count` classes with the highest current scores (ties: lower id).
#[derive(Debug, Clone, Copy, Default)]
pub struct TopScores;

impl CandidateSelector for TopScores {
    fn select(&self, model: &FlatModel, x: &SparseVec, count: usize) -> Vec<usize> {
        let scores = model.scores(x);
        let mut ids: Vec<usize> = (0..scores.len()).collect();
        ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        ids.truncate(count);
        ids
    }
}

fn scored(model: &FlatModel, x: &SparseVec, ids: &[usize]) -> Vec<(usize, f64)> {
    ids.iter().map(|&k| (k, model.score(x, k))).collect()
}

/// One generic CANE step on a flat model. Returns the coefficients applied.
#[allow(clippy::too_many_arguments)]
pub fn flat_step<S, R>(
    model: &mut FlatModel,
    sampler: &NoiseSampler,
    selector: &S,
    config: &TrainConfig,
    x: &SparseVec,
    y: usize,
    eta: f64,
    rng: &mut R,
) -> Result<ClassCoefficients, TrainError>
where
    S: CandidateSelector + ?Sized,
    R: Rng + ?Sized,
{
    let ids = selector.select(model, x, config.candidates);
    let candidates = scored(model, x, &ids);
    let coefs = if ids.contains(&y) {
        let mut noises = Vec::new();
        if ids.len() < model.num_classes() {
            for d in sampler.sample_noises(&ids, config.noises, rng)? {
                noises.push(NoiseTerm {
                    class: d.class,
                    score: model.score(x, d.class),
                    q: d.q,
                });
            }
        }
        in_coefficients(&candidates, y, &noises)
    } else {
        let q = sampler.noise_prob(&ids, y)?;
        out_coefficients(&candidates, y, model.score(x, y), q)
    };
    for &(class, c) in &coefs.entries {
        sparse_axpy(eta * c, x, model.weights.row_mut(class));
    }
    Ok(coefs)
}

/// Generic CANE SGD on a flat linear model with zero initialization.
pub fn train_generic<S: CandidateSelector + ?Sized>(
    dataset: &Dataset,
    config: &TrainConfig,
    selector: &S,
) -> Result<FlatModel, TrainError> {
    train_generic_with(dataset, config, selector, |_, _| {})
}

/// As [`train_generic`], reporting `(epoch, mean sampled objective)` after every epoch.
pub fn train_generic_with<S, F>(
    dataset: &Dataset,
    config: &TrainConfig,
    selector: &S,
    mut on_epoch: F,
) -> Result<FlatModel, TrainError>
where
    S: CandidateSelector + ?Sized,
    F: FnMut(usize, f64),
{
    config.validate(dataset.num_classes())?;
    let sampler = config.sampler.build(dataset)?;
    let mut model = FlatModel::zeros(
        dataset.num_classes(),
        dataset.num_features(),
        dataset.label_dictionary().clone(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut steps = 0u64;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let ex = &dataset.examples()[i];
            let eta = config.step_size(steps);
            let c = flat_step(&mut model, &sampler, selector, config, &ex.features, ex.label, eta, &mut rng)?;
            sum += c.loss;
            steps += 1;
        }
        on_epoch(epoch, sum / dataset.len().max(1) as f64);
    }
    Ok(model)
}

/// The empirical CANE objective with the noise expectation enumerated exactly.
///
/// Intended for small label spaces: each example costs `O(K)`.
pub fn empirical_objective_exact<S: CandidateSelector + ?Sized>(
    model: &FlatModel,
    dataset: &Dataset,
    selector: &S,
    sampler: &NoiseSampler,
    candidates: usize,
) -> Result<f64, TrainError> {
    let k = model.num_classes();
    let mut total = 0.0;
    for ex in dataset.examples() {
        let x = &ex.features;
        let ids = selector.select(model, x, candidates);
        let cand = scored(model, x, &ids);
        let term = if ids.len() == k {
            let scores: Vec<f64> = cand.iter().map(|c| c.1).collect();
            model.score(x, ex.label) - log_sum_exp(&scores)
        } else if ids.contains(&ex.label) {
            let mut acc = 0.0;
            for j in (0..k).filter(|j| !ids.contains(j)) {
                let q = sampler.noise_prob(&ids, j)?;
                acc += q * loss_in(&cand, ex.label, model.score(x, j), q);
            }
            acc
        } else {
            let q = sampler.noise_prob(&ids, ex.label)?;
            loss_out(&cand, model.score(x, ex.label), q)
        };
        total += term;
    }
    Ok(total / dataset.len().max(1) as f64)
}

/// Exact softmax log-likelihood of one example and its `K x d` gradient.
pub fn softmax_loss_grad(model: &FlatModel, example: &Example) -> (f64, Matrix) {
    let scores = model.scores(&example.features);
    let (ll, coefs) = softmax_coefficients(&scores, example.label);
    let mut g = Matrix::zeros(model.num_classes(), model.num_features());
    for (k, c) in coefs.iter().enumerate() {
        sparse_axpy(*c, &example.features, g.row_mut(k));
    }
    (ll, g)
}

/// Full-softmax SGD baseline with the same shuffling and step-size schedule as CANE.
pub fn softmax_train(dataset: &Dataset, config: &TrainConfig) -> Result<FlatModel, TrainError> {
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) || config.epochs == 0 {
        return Err(TrainError::Config("learning rate and epochs must be positive".into()));
    }
    let mut model = FlatModel::zeros(
        dataset.num_classes(),
        dataset.num_features(),
        dataset.label_dictionary().clone(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut steps = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let ex = &dataset.examples()[i];
            let eta = config.step_size(steps);
            let scores = model.scores(&ex.features);
            let (_, coefs) = softmax_coefficients(&scores, ex.label);
            for (k, c) in coefs.iter().enumerate() {
                sparse_axpy(eta * c, &ex.features, model.weights.row_mut(k));
            }
            steps += 1;
        }
    }
    Ok(model)
}
