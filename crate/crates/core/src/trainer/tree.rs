//! Beam-tree training: candidates from beam search, updates on the edges of the
//! selected paths.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{in_coefficients, out_coefficients, ClassCoefficients, NoiseTerm};
use super::{EpochReport, TrainConfig, TrainError, TrainStats};
use crate::data::Dataset;
use crate::label_tree::{path_score, LabelTree};
use crate::matrix::{sparse_axpy, SparseVec};
use crate::model::CaneModel;
use crate::sampling::NoiseSampler;
use crate::search::beam_top;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeUpdate {
    pub edge: usize,
    /// Multiplies `g(x)` to give the edge gradient.
    pub coefficient: f64,
}

/// Edge-level gradient of one example: the class coefficients summed over every
/// selected path through each edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGradient {
    /// Edges carrying a (generally) non-zero gradient, in ascending id order.
    pub updates: Vec<EdgeUpdate>,
    /// Edges lying on every selected path; their gradient is exactly zero.
    pub shared: Vec<usize>,
}

impl TreeGradient {
    pub fn new(tree: &LabelTree, coefs: &ClassCoefficients) -> Self {
        let mut touched: Vec<(usize, f64)> = Vec::new();
        for &(class, c) in &coefs.entries {
            let path = tree.path_edges(class).expect("class in tree");
            touched.extend(path.iter().map(|&e| (e, c)));
        }
        touched.sort_by_key(|t| t.0);
        let selected = coefs.entries.len();
        let mut updates = Vec::new();
        let mut shared = Vec::new();
        let mut i = 0;
        while i < touched.len() {
            let edge = touched[i].0;
            let mut sum = 0.0;
            let mut count = 0;
            while i < touched.len() && touched[i].0 == edge {
                sum += touched[i].1;
                count += 1;
                i += 1;
            }
            if count == selected {
                shared.push(edge);
            } else {
                updates.push(EdgeUpdate {
                    edge,
                    coefficient: sum,
                });
            }
        }
        Self { updates, shared }
    }

    /// Dense gradient for `edge` given the representation `gx` of dimension `dim`.
    pub fn edge_gradient(&self, edge: usize, gx: &SparseVec, dim: usize) -> Vec<f64> {
        let mut g = vec![0.0; dim];
        if let Some(u) = self.updates.iter().find(|u| u.edge == edge) {
            sparse_axpy(u.coefficient, gx, &mut g);
        }
        g
    }
}

/// Edge gradient for the `y in C` branch, averaged over the sampled noises.
pub fn grad_tree_edge_in(
    tree: &LabelTree,
    candidates: &[(usize, f64)],
    y: usize,
    noises: &[NoiseTerm],
    gx: &SparseVec,
    dim: usize,
    edge: usize,
) -> Vec<f64> {
    TreeGradient::new(tree, &in_coefficients(candidates, y, noises)).edge_gradient(edge, gx, dim)
}

/// Edge gradient for the `y not in C` branch.
#[allow(clippy::too_many_arguments)]
pub fn grad_tree_edge_out(
    tree: &LabelTree,
    candidates: &[(usize, f64)],
    y: usize,
    true_score: f64,
    q: f64,
    gx: &SparseVec,
    dim: usize,
    edge: usize,
) -> Vec<f64> {
    TreeGradient::new(tree, &out_coefficients(candidates, y, true_score, q))
        .edge_gradient(edge, gx, dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub in_candidates: bool,
    pub candidates: Vec<(usize, f64)>,
    pub noises: Vec<NoiseTerm>,
    pub updated_edges: Vec<usize>,
    pub skipped_edges: Vec<usize>,
}

/// One beam-tree SGD step on `(x, y)` with step size `eta`.
pub fn tree_step<R: Rng + ?Sized>(
    model: &mut CaneModel,
    sampler: &NoiseSampler,
    config: &TrainConfig,
    x: &SparseVec,
    y: usize,
    eta: f64,
    rng: &mut R,
) -> Result<StepOutcome, TrainError> {
    let gx = model.representation.apply(x).into_owned();
    let candidates = beam_top(
        &model.tree,
        &model.params,
        &model.representation,
        x,
        config.candidates,
    );
    let ids: Vec<usize> = candidates.iter().map(|c| c.0).collect();
    let in_candidates = ids.contains(&y);
    let mut noises = Vec::new();
    let coefs = if in_candidates {
        if ids.len() < model.num_classes() {
            for d in sampler.sample_noises(&ids, config.noises, rng)? {
                noises.push(NoiseTerm {
                    class: d.class,
                    score: path_score(&model.tree, &model.params, &gx, d.class),
                    q: d.q,
                });
            }
        }
        in_coefficients(&candidates, y, &noises)
    } else {
        let q = sampler.noise_prob(&ids, y)?;
        let s_y = path_score(&model.tree, &model.params, &gx, y);
        out_coefficients(&candidates, y, s_y, q)
    };
    let grad = TreeGradient::new(&model.tree, &coefs);
    for u in &grad.updates {
        sparse_axpy(eta * u.coefficient, &gx, model.params.edge_mut(u.edge));
    }
    Ok(StepOutcome {
        loss: coefs.loss,
        in_candidates,
        candidates,
        noises,
        updated_edges: grad.updates.iter().map(|u| u.edge).collect(),
        skipped_edges: grad.shared,
    })
}

/// Beam-tree training with zero-initialized edge parameters.
pub fn train_beam_tree(
    dataset: &Dataset,
    tree: LabelTree,
    config: &TrainConfig,
) -> Result<(CaneModel, TrainStats), TrainError> {
    train_beam_tree_with(dataset, tree, config, |_, _| {})
}

/// As [`train_beam_tree`], calling `observer` after every `eval_every`-th epoch and the last.
pub fn train_beam_tree_with<F>(
    dataset: &Dataset,
    tree: LabelTree,
    config: &TrainConfig,
    mut observer: F,
) -> Result<(CaneModel, TrainStats), TrainError>
where
    F: FnMut(&EpochReport, &CaneModel),
{
    let k = dataset.num_classes();
    config.validate(k)?;
    if tree.num_classes() != k {
        return Err(TrainError::ClassMismatch {
            tree: tree.num_classes(),
            data: k,
        });
    }
    let sampler = config.sampler.build(dataset)?;
    let mut model = CaneModel::zeros(tree, dataset.label_dictionary().clone(), dataset.num_features());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut stats = TrainStats::default();
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let ex = &dataset.examples()[i];
            let eta = config.step_size(stats.examples_seen);
            let out = tree_step(&mut model, &sampler, config, &ex.features, ex.label, eta, &mut rng)?;
            loss_sum += out.loss;
            stats.examples_seen += 1;
            if out.in_candidates {
                stats.in_candidates += 1;
            } else {
                stats.out_of_candidates += 1;
            }
            stats.edge_updates += out.updated_edges.len() as u64;
            stats.shared_edges_skipped += out.skipped_edges.len() as u64;
            stats.max_updates_per_example = stats.max_updates_per_example.max(out.updated_edges.len());
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let report = EpochReport {
                epoch,
                examples_seen: stats.examples_seen,
                sampled_objective_mean: loss_sum / dataset.len().max(1) as f64,
                wall_seconds: start.elapsed().as_secs_f64(),
                stats,
            };
            observer(&report, &model);
        }
    }
    Ok((model, stats))
}
