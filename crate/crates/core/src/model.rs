//! Trained model containers.

use crate::data::LabelDictionary;
use crate::label_tree::{path_score, EdgeParams, LabelTree, Representation};
use crate::matrix::{sparse_dot, Matrix, SparseVec};

/// Tree-structured model: class scores are path sums over edge parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CaneModel {
    pub tree: LabelTree,
    pub params: EdgeParams,
    pub representation: Representation,
    pub labels: LabelDictionary,
    pub num_features: usize,
}

impl CaneModel {
    /// Zero-initialized parameters over `tree`.
    pub fn zeros(tree: LabelTree, labels: LabelDictionary, num_features: usize) -> Self {
        let representation = Representation::Identity;
        let params = EdgeParams::zeros(&tree, representation.output_dim(num_features));
        Self {
            tree,
            params,
            representation,
            labels,
            num_features,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tree.num_classes()
    }

    pub fn score(&self, x: &SparseVec, class: usize) -> f64 {
        let gx = self.representation.apply(x);
        path_score(&self.tree, &self.params, &gx, class)
    }
}

/// Flat linear model: one weight row per class, `s_k(x) = w_k . x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatModel {
    pub weights: Matrix,
    pub labels: LabelDictionary,
}

impl FlatModel {
    pub fn zeros(num_classes: usize, num_features: usize, labels: LabelDictionary) -> Self {
        Self {
            weights: Matrix::zeros(num_classes, num_features),
            labels,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_features(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn score(&self, x: &SparseVec, class: usize) -> f64 {
        sparse_dot(x, self.weights.row(class))
    }

    pub fn scores(&self, x: &SparseVec) -> Vec<f64> {
        (0..self.num_classes()).map(|k| self.score(x, k)).collect()
    }

    /// The same scoring function expressed as a depth-one tree.
    pub fn to_tree_model(&self) -> CaneModel {
        let k = self.num_classes();
        let order: Vec<usize> = (0..k).collect();
        let tree = LabelTree::rebalance(&order, k.max(2)).expect("identity order is a permutation");
        let mut model = CaneModel::zeros(tree, self.labels.clone(), self.num_features());
        for class in 0..k {
            let edge = model.tree.edge(0, class).expect("depth-one tree");
            model.params.edge_mut(edge).copy_from_slice(self.weights.row(class));
        }
        model
    }
}
