//! Candidates-vs-noises estimation (CANE) for multiclass problems with many labels.
//!
//! A label tree routes each input to a small set of candidate classes by beam
//! search; training contrasts those candidates against classes drawn from a
//! noise distribution, so one update costs `O(b log_b K)` instead of `O(K)`.

pub mod cluster;
pub mod data;
pub mod label_tree;
pub mod matrix;
pub mod model;
pub mod persist;
pub mod sampling;
pub mod search;
pub mod statlab;
pub mod trainer;

pub use data::{Dataset, Example, LabelDictionary};
pub use label_tree::{EdgeParams, LabelTree, Representation};
pub use model::{CaneModel, FlatModel};
pub use sampling::NoiseSampler;
pub use search::{beam_top, predict_top_j};
pub use trainer::{TrainConfig, TrainError};
