//! Level-synchronous beam search over the label tree.
//!
//! Frontier ties are broken by the smallest class id under each node, which
//! reduces to the class id at the leaves.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::label_tree::{EdgeParams, LabelTree, Representation};
use crate::matrix::{sparse_dot, SparseVec};
use crate::model::CaneModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamEntry {
    pub node: usize,
    /// Partial path sum from the root to `node`.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BeamStats {
    /// Child nodes scored.
    pub expansions: usize,
    /// Frontier rounds processed.
    pub levels: usize,
}

fn by_score_then_id(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top-`width` classes with their path-sum scores, best first (ties: lower class id).
pub fn beam_top(
    tree: &LabelTree,
    params: &EdgeParams,
    representation: &Representation,
    x: &SparseVec,
    width: usize,
) -> Vec<(usize, f64)> {
    beam_top_with_stats(tree, params, representation, x, width).0
}

pub fn beam_top_with_stats(
    tree: &LabelTree,
    params: &EdgeParams,
    representation: &Representation,
    x: &SparseVec,
    width: usize,
) -> (Vec<(usize, f64)>, BeamStats) {
    let gx = representation.apply(x);
    let width = width.max(1);
    let mut stats = BeamStats::default();
    let mut frontier = vec![BeamEntry {
        node: tree.root(),
        score: 0.0,
    }];
    let mut next: Vec<BeamEntry> = Vec::new();
    let mut pool: Vec<(usize, f64)> = Vec::new();

    while !frontier.is_empty() {
        stats.levels += 1;
        for entry in &frontier {
            let node = tree.node(entry.node);
            if let Some(class) = node.class {
                pool.push((class, entry.score));
                continue;
            }
            for &child in &node.children {
                let edge = child - 1;
                stats.expansions += 1;
                next.push(BeamEntry {
                    node: child,
                    score: entry.score + sparse_dot(&gx, params.edge(edge)),
                });
            }
        }
        if next.len() > width {
            let cmp = |a: &BeamEntry, b: &BeamEntry| {
                by_score_then_id(
                    (a.score, tree.min_class_under(a.node)),
                    (b.score, tree.min_class_under(b.node)),
                )
            };
            next.select_nth_unstable_by(width - 1, cmp);
            next.truncate(width);
        }
        std::mem::swap(&mut frontier, &mut next);
        next.clear();
    }

    pool.sort_by(|a, b| by_score_then_id((a.1, a.0), (b.1, b.0)));
    pool.truncate(width);
    (pool, stats)
}

/// Top-`j` class ids for `x`.
pub fn predict_top_j(model: &CaneModel, x: &SparseVec, j: usize) -> Vec<usize> {
    beam_top(&model.tree, &model.params, &model.representation, x, j)
        .into_iter()
        .map(|(c, _)| c)
        .collect()
}

/// Top-k accuracies from one width-`top` beam per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub examples: usize,
    pub top: usize,
    /// `accuracy[k - 1]`: fraction with the label among the first `k` results.
    pub accuracy: Vec<f64>,
    /// Fraction with the label anywhere in the width-`top` beam.
    pub coverage: f64,
}

pub fn evaluate(model: &CaneModel, dataset: &Dataset, top: usize) -> AccuracyReport {
    let top = top.max(1);
    let ranks: Vec<Option<usize>> = dataset
        .examples()
        .par_iter()
        .map(|ex| predict_top_j(model, &ex.features, top).iter().position(|&c| c == ex.label))
        .collect();
    let n = dataset.len().max(1) as f64;
    let accuracy: Vec<f64> = (0..top)
        .map(|k| ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / n)
        .collect();
    AccuracyReport {
        examples: dataset.len(),
        top,
        coverage: *accuracy.last().expect("top >= 1"),
        accuracy,
    }
}
