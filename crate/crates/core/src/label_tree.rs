//! The b-nary label tree, its edge parameters, and path-sum class scoring.
//!
//! Nodes are numbered in breadth-first order with the root at 0. Every non-root
//! node owns the edge from its parent, so edge ids are `node - 1` and are also
//! breadth-first. The tree is immutable once built; parameters live in
//! [`EdgeParams`], one row per edge.

use std::borrow::Cow;
use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster;
use crate::matrix::{sparse_dot, Matrix, SparseVec};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("branching factor must be at least 2, got {0}")]
    Branching(usize),
    #[error("leaf order is not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("tree needs at least one class")]
    NoClasses,
    #[error("invalid topology: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub parent: Option<usize>,
    /// Position among the parent's children.
    pub slot: usize,
    pub children: Vec<usize>,
    pub class: Option<usize>,
    pub depth: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Root-to-leaf sequence of edge ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path(pub Vec<usize>);

impl Path {
    pub fn edges(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parent/slot/class arrays describing a tree in breadth-first node order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub branching: usize,
    /// `-1` for the root.
    pub parent: Vec<i64>,
    pub slot: Vec<usize>,
    /// Class id for leaves, `-1` for internal nodes.
    pub leaf_class: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTree {
    branching: usize,
    nodes: Vec<Node>,
    leaf_of_class: Vec<usize>,
    paths: Vec<Vec<usize>>,
    min_class: Vec<usize>,
    depth: usize,
}

enum Shape {
    Leaf(usize),
    Internal(Vec<Shape>),
}

/// Smallest `h` with `b^h >= n`.
pub fn ceil_log(n: usize, b: usize) -> usize {
    let mut h = 0;
    let mut cap: usize = 1;
    while cap < n {
        cap = cap.saturating_mul(b);
        h += 1;
    }
    h
}

fn balanced_shape(leaves: &[usize], b: usize) -> Shape {
    let n = leaves.len();
    if n == 1 {
        return Shape::Leaf(leaves[0]);
    }
    let h = ceil_log(n, b);
    let cap = b.pow(h as u32 - 1);
    let c = n.div_ceil(cap);
    let base = n / c;
    let extra = n % c;
    let mut children = Vec::with_capacity(c);
    let mut start = 0;
    for i in 0..c {
        let size = base + usize::from(i < extra);
        children.push(balanced_shape(&leaves[start..start + size], b));
        start += size;
    }
    Shape::Internal(children)
}

impl LabelTree {
    /// Balanced b-nary tree whose left-to-right leaves are `leaf_order`.
    pub fn rebalance(leaf_order: &[usize], branching: usize) -> Result<Self, TreeError> {
        if branching < 2 {
            return Err(TreeError::Branching(branching));
        }
        let k = leaf_order.len();
        if k == 0 {
            return Err(TreeError::NoClasses);
        }
        let mut seen = vec![false; k];
        for &c in leaf_order {
            if c >= k || seen[c] {
                return Err(TreeError::NotPermutation(k));
            }
            seen[c] = true;
        }
        let shape = match balanced_shape(leaf_order, branching) {
            leaf @ Shape::Leaf(_) => Shape::Internal(vec![leaf]),
            s => s,
        };
        Ok(Self::from_shape(&shape, branching, k))
    }

    fn from_shape(root: &Shape, branching: usize, num_classes: usize) -> Self {
        let mut nodes = vec![Node {
            parent: None,
            slot: 0,
            children: Vec::new(),
            class: None,
            depth: 0,
        }];
        let mut queue: VecDeque<(usize, &Shape)> = VecDeque::from([(0, root)]);
        while let Some((id, shape)) = queue.pop_front() {
            match shape {
                Shape::Leaf(c) => nodes[id].class = Some(*c),
                Shape::Internal(children) => {
                    for (slot, child) in children.iter().enumerate() {
                        let cid = nodes.len();
                        nodes.push(Node {
                            parent: Some(id),
                            slot,
                            children: Vec::new(),
                            class: None,
                            depth: nodes[id].depth + 1,
                        });
                        nodes[id].children.push(cid);
                        queue.push_back((cid, child));
                    }
                }
            }
        }
        Self::finish(nodes, branching, num_classes).expect("shape yields a valid tree")
    }

    fn finish(nodes: Vec<Node>, branching: usize, num_classes: usize) -> Result<Self, TreeError> {
        let mut leaf_of_class = vec![usize::MAX; num_classes];
        for (id, n) in nodes.iter().enumerate() {
            if let Some(c) = n.class {
                if c >= num_classes || leaf_of_class[c] != usize::MAX {
                    return Err(TreeError::Topology(format!(
                        "class {c} at node {id} is out of range or repeated"
                    )));
                }
                leaf_of_class[c] = id;
            }
        }
        if let Some(c) = leaf_of_class.iter().position(|&l| l == usize::MAX) {
            return Err(TreeError::Topology(format!("class {c} has no leaf")));
        }
        let paths = leaf_of_class
            .iter()
            .map(|&leaf| {
                let mut edges = Vec::with_capacity(nodes[leaf].depth);
                let mut cur = leaf;
                while let Some(p) = nodes[cur].parent {
                    edges.push(cur - 1);
                    cur = p;
                }
                edges.reverse();
                edges
            })
            .collect();
        let depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
        // Children always have larger ids than parents, so a reverse sweep sees them first.
        let mut min_class = vec![usize::MAX; nodes.len()];
        for id in (0..nodes.len()).rev() {
            min_class[id] = match nodes[id].class {
                Some(c) => c,
                None => nodes[id]
                    .children
                    .iter()
                    .map(|&c| min_class[c])
                    .min()
                    .unwrap_or(usize::MAX),
            };
        }
        Ok(Self {
            branching,
            nodes,
            leaf_of_class,
            paths,
            min_class,
            depth,
        })
    }

    /// Recursive k-means (k = b) over class centers, then a balanced rebuild of the leaf order.
    pub fn build_clustering(centers: &Matrix, branching: usize, seed: u64) -> Result<Self, TreeError> {
        if branching < 2 {
            return Err(TreeError::Branching(branching));
        }
        if centers.rows() == 0 {
            return Err(TreeError::NoClasses);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order = Vec::with_capacity(centers.rows());
        let all: Vec<usize> = (0..centers.rows()).collect();
        split_into(centers, &all, branching, &mut rng, &mut order);
        Self::rebalance(&order, branching)
    }

    pub fn from_topology(t: &Topology) -> Result<Self, TreeError> {
        if t.branching < 2 {
            return Err(TreeError::Branching(t.branching));
        }
        let n = t.parent.len();
        if n < 2 || t.slot.len() != n || t.leaf_class.len() != n {
            return Err(TreeError::Topology("array lengths disagree or too short".into()));
        }
        if t.parent[0] != -1 {
            return Err(TreeError::Topology("node 0 must be the root".into()));
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(n);
        nodes.push(Node {
            parent: None,
            slot: 0,
            children: Vec::new(),
            class: None,
            depth: 0,
        });
        let mut prev_parent = 0usize;
        for id in 1..n {
            let p = t.parent[id];
            if p < 0 || p as usize >= id || (p as usize) < prev_parent {
                return Err(TreeError::Topology(format!(
                    "node {id}: parent {p} breaks breadth-first order"
                )));
            }
            let p = p as usize;
            prev_parent = p;
            if t.slot[id] != nodes[p].children.len() {
                return Err(TreeError::Topology(format!("node {id}: slot out of sequence")));
            }
            if nodes[p].children.len() >= t.branching {
                return Err(TreeError::Topology(format!("node {p} exceeds branching")));
            }
            nodes[p].children.push(id);
            let depth = nodes[p].depth + 1;
            nodes.push(Node {
                parent: Some(p),
                slot: t.slot[id],
                children: Vec::new(),
                class: None,
                depth,
            });
        }
        let mut num_classes = 0;
        for (id, node) in nodes.iter_mut().enumerate() {
            let c = t.leaf_class[id];
            match (node.children.is_empty(), c) {
                (true, c) if c >= 0 => {
                    node.class = Some(c as usize);
                    num_classes += 1;
                }
                (false, -1) => {}
                _ => {
                    return Err(TreeError::Topology(format!(
                        "node {id}: leaf/class mismatch"
                    )))
                }
            }
        }
        Self::finish(nodes, t.branching, num_classes)
    }

    pub fn topology(&self) -> Topology {
        Topology {
            branching: self.branching,
            parent: self
                .nodes
                .iter()
                .map(|n| n.parent.map_or(-1, |p| p as i64))
                .collect(),
            slot: self.nodes.iter().map(|n| n.slot).collect(),
            leaf_class: self
                .nodes
                .iter()
                .map(|n| n.class.map_or(-1, |c| c as i64))
                .collect(),
        }
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn num_classes(&self) -> usize {
        self.leaf_of_class.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Edge id of the edge entering `node`. `None` for the root.
    pub fn edge_into(&self, node: usize) -> Option<usize> {
        (node > 0).then(|| node - 1)
    }

    /// Edge id for `(parent, child slot)`.
    pub fn edge(&self, parent: usize, slot: usize) -> Option<usize> {
        self.nodes.get(parent)?.children.get(slot).map(|&c| c - 1)
    }

    /// Child node at the far end of an edge.
    pub fn edge_child(&self, edge: usize) -> usize {
        edge + 1
    }

    /// Smallest class id in the subtree under `node`; equals the class for a leaf.
    pub fn min_class_under(&self, node: usize) -> usize {
        self.min_class[node]
    }

    pub fn leaf_of(&self, class: usize) -> usize {
        self.leaf_of_class[class]
    }

    pub fn path_of(&self, class: usize) -> Result<Path, TreeError> {
        self.path_edges(class)
            .map(|e| Path(e.to_vec()))
            .ok_or(TreeError::ClassOutOfRange {
                class,
                num_classes: self.num_classes(),
            })
    }

    /// Borrowed root-first edge ids for `class`.
    pub fn path_edges(&self, class: usize) -> Option<&[usize]> {
        self.paths.get(class).map(Vec::as_slice)
    }

    /// Classes in left-to-right leaf order.
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_classes());
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            if let Some(c) = n.class {
                out.push(c);
            }
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

fn split_into(
    centers: &Matrix,
    members: &[usize],
    b: usize,
    rng: &mut ChaCha8Rng,
    order: &mut Vec<usize>,
) {
    if members.len() <= b {
        order.extend_from_slice(members);
        return;
    }
    for cluster in cluster::kmeans(centers, members, b, rng) {
        split_into(centers, &cluster, b, rng, order);
    }
}

/// Maps raw input features to the representation `g(x)` scored against edge parameters.
///
/// Only the identity map is implemented. A learned map would add a variant here and
/// a parameter update in the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Identity,
}

impl Representation {
    pub fn apply<'a>(&self, x: &'a SparseVec) -> Cow<'a, SparseVec> {
        match self {
            Representation::Identity => Cow::Borrowed(x),
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Representation::Identity => input_dim,
        }
    }
}

/// One parameter row per tree edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeParams(pub Matrix);

impl EdgeParams {
    pub fn zeros(tree: &LabelTree, dim: usize) -> Self {
        Self(Matrix::zeros(tree.num_edges(), dim))
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn num_edges(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn edge(&self, e: usize) -> &[f64] {
        self.0.row(e)
    }

    #[inline]
    pub fn edge_mut(&mut self, e: usize) -> &mut [f64] {
        self.0.row_mut(e)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Path sum of edge scores for an already-represented input. Accumulates root first.
#[inline]
pub fn path_score(tree: &LabelTree, params: &EdgeParams, gx: &SparseVec, class: usize) -> f64 {
    let mut s = 0.0;
    for &e in &tree.paths[class] {
        s += sparse_dot(gx, params.edge(e));
    }
    s
}

/// Score of `class` for input `x`: `g(x) . sum of edge parameters on the class path`.
///
/// Panics if `class` is out of range.
pub fn score_class(
    tree: &LabelTree,
    params: &EdgeParams,
    representation: &Representation,
    x: &SparseVec,
    class: usize,
) -> f64 {
    let gx = representation.apply(x);
    path_score(tree, params, &gx, class)
}
