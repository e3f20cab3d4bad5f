//! Finite-difference check of the analytic gradients on random instances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Example, LabelDictionary};
use crate::label_tree::{path_score, EdgeParams, LabelTree};
use crate::model::FlatModel;
use crate::trainer::loss::{grad_generic_in, grad_generic_out, loss_in, loss_out, NoiseTerm};
use crate::trainer::{grad_tree_edge_in, grad_tree_edge_out, softmax_loss_grad};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub step: f64,
    /// Largest `||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6)`.
    pub max_rel_error: f64,
    /// Which gradient produced the maximum.
    pub worst: String,
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-6)
}

fn central_difference<F: Fn(&[f64]) -> f64>(f: F, at: &[f64], step: f64) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..at.len())
        .map(|i| {
            p[i] = at[i] + step;
            let up = f(&p);
            p[i] = at[i] - step;
            let down = f(&p);
            p[i] = at[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

struct Instance {
    tree: LabelTree,
    params: EdgeParams,
    x: Vec<(usize, f64)>,
    cands: Vec<usize>,
    y: usize,
    noises: Vec<(usize, f64)>,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(3..=16);
    let d = rng.random_range(1..=8);
    let b = rng.random_range(2..=4);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let tree = LabelTree::rebalance(&order, b).expect("permutation");
    let mut params = EdgeParams::zeros(&tree, d);
    for v in params.0.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    let x = (0..d).map(|i| (i, rng.random_range(-1.5..1.5))).collect();
    let n_c = rng.random_range(1..=(k - 1).min(5));
    let mut classes: Vec<usize> = (0..k).collect();
    classes.shuffle(rng);
    let cands = classes[..n_c].to_vec();
    let rest = &classes[n_c..];
    let y = if rng.random_bool(0.5) { cands[rng.random_range(0..n_c)] } else { rest[rng.random_range(0..rest.len())] };
    let noises = (0..rng.random_range(1..=4))
        .map(|_| (rest[rng.random_range(0..rest.len())], rng.random_range(0.05..1.0)))
        .collect();
    Instance { tree, params, x, cands, y, noises }
}

fn sampled_loss(inst: &Instance, params: &EdgeParams) -> f64 {
    let score = |k| path_score(&inst.tree, params, &inst.x, k);
    let cands: Vec<(usize, f64)> = inst.cands.iter().map(|&k| (k, score(k))).collect();
    if inst.cands.contains(&inst.y) {
        inst.noises.iter().map(|&(j, q)| loss_in(&cands, inst.y, score(j), q)).sum::<f64>() / inst.noises.len() as f64
    } else {
        loss_out(&cands, score(inst.y), inst.noises[0].1)
    }
}

fn check_instance(inst: &Instance, step: f64) -> Vec<(&'static str, f64)> {
    let tree = &inst.tree;
    let d = inst.params.dim();
    let flat_len = inst.params.0.as_slice().len();
    let with = |v: &[f64]| {
        let mut p = inst.params.clone();
        p.0.as_mut_slice().copy_from_slice(v);
        p
    };
    let numeric = central_difference(|v| sampled_loss(inst, &with(v)), inst.params.0.as_slice(), step);

    let score = |k| path_score(tree, &inst.params, &inst.x, k);
    let cands: Vec<(usize, f64)> = inst.cands.iter().map(|&k| (k, score(k))).collect();
    let noises: Vec<NoiseTerm> = inst
        .noises
        .iter()
        .map(|&(j, q)| NoiseTerm { class: j, score: score(j), q })
        .collect();
    // Score gradient of class k over the flattened edge parameters.
    let score_grad = |k: usize| {
        let mut g = vec![0.0; flat_len];
        for &e in tree.path_edges(k).expect("class in tree") {
            for &(i, v) in &inst.x {
                g[e * d + i] += v;
            }
        }
        g
    };
    let inside = inst.cands.contains(&inst.y);
    let generic = if inside {
        grad_generic_in(&cands, inst.y, &noises, score_grad, flat_len)
    } else {
        grad_generic_out(&cands, inst.y, score(inst.y), inst.noises[0].1, score_grad, flat_len)
    };
    let mut edges = Vec::with_capacity(flat_len);
    for e in 0..tree.num_edges() {
        edges.extend(if inside {
            grad_tree_edge_in(tree, &cands, inst.y, &noises, &inst.x, d, e)
        } else {
            grad_tree_edge_out(tree, &cands, inst.y, score(inst.y), inst.noises[0].1, &inst.x, d, e)
        });
    }
    let (generic_name, tree_name) = if inside { ("generic-in", "tree-in") } else { ("generic-out", "tree-out") };
    vec![(generic_name, rel_error(&generic, &numeric)), (tree_name, rel_error(&edges, &numeric))]
}

fn check_softmax(rng: &mut ChaCha8Rng, step: f64) -> f64 {
    let k = rng.random_range(2..=16);
    let d = rng.random_range(1..=8);
    let mut model = FlatModel::zeros(k, d, LabelDictionary::identity(k));
    for v in model.weights.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    let ex = Example {
        features: (0..d).map(|i| (i, rng.random_range(-1.5..1.5))).collect(),
        label: rng.random_range(0..k),
    };
    let (_, g) = softmax_loss_grad(&model, &ex);
    let numeric = central_difference(
        |v| {
            let mut m = model.clone();
            m.weights.as_mut_slice().copy_from_slice(v);
            softmax_loss_grad(&m, &ex).0
        },
        model.weights.as_slice(),
        step,
    );
    rel_error(g.as_slice(), &numeric)
}

/// Compares every analytic gradient with central differences on `instances`
/// random problems (`K <= 16`, `d <= 8`).
pub fn gradient_check(instances: usize, seed: u64, step: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0, String::from("none"));
    for i in 0..instances {
        let inst = random_instance(&mut rng);
        let mut results = check_instance(&inst, step);
        results.push(("softmax", check_softmax(&mut rng, step)));
        for (name, err) in results {
            if err > worst.0 || err.is_nan() {
                worst = (err, format!("{name} (instance {i})"));
            }
        }
    }
    GradCheckReport { instances, step, max_rel_error: worst.0, worst: worst.1 }
}
