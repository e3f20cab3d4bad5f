//! Model and tree files, and per-epoch metric records.
//!
//! A model file is one JSON header line followed by the edge parameters as
//! little-endian `f64`, edge-major in edge-id order. Writing is deterministic,
//! so save, load and save again reproduces the same bytes.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelDictionary;
use crate::label_tree::{EdgeParams, LabelTree, Representation, Topology, TreeError};
use crate::matrix::Matrix;
use crate::model::CaneModel;
use crate::trainer::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid model file: {0}")]
    Format(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub num_classes: usize,
    pub num_features: usize,
    pub branching: usize,
    pub topology: Topology,
    pub label_dictionary: LabelDictionary,
    pub representation: Representation,
    /// Length of each edge's parameter row.
    pub row_len: usize,
    pub seed: u64,
    pub config: Option<TrainConfig>,
}

impl ModelHeader {
    pub fn describe(model: &CaneModel, config: Option<&TrainConfig>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            num_classes: model.num_classes(),
            num_features: model.num_features,
            branching: model.tree.branching(),
            topology: model.tree.topology(),
            label_dictionary: model.labels.clone(),
            representation: model.representation,
            row_len: model.params.dim(),
            seed: config.map_or(0, |c| c.seed),
            config: config.cloned(),
        }
    }
}

pub fn write_model<W: Write>(model: &CaneModel, config: Option<&TrainConfig>, mut out: W) -> Result<(), PersistError> {
    let header = ModelHeader::describe(model, config);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(model.params.0.as_slice().len() * 8);
    for v in model.params.0.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_model<R: BufRead>(mut input: R) -> Result<(CaneModel, ModelHeader), PersistError> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(PersistError::Format("missing header line".into()));
    }
    let header: ModelHeader = serde_json::from_slice(&line)?;
    if header.format_version != FORMAT_VERSION {
        return Err(PersistError::Format(format!("unsupported format version {}", header.format_version)));
    }
    let tree = LabelTree::from_topology(&header.topology)?;
    if tree.num_classes() != header.num_classes || tree.branching() != header.branching {
        return Err(PersistError::Format("header disagrees with its topology".into()));
    }
    if header.label_dictionary.len() != header.num_classes {
        return Err(PersistError::Format("label dictionary size differs from K".into()));
    }
    if header.representation.output_dim(header.num_features) != header.row_len {
        return Err(PersistError::Format("row length does not match the representation".into()));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    let expected = tree.num_edges() * header.row_len * 8;
    if payload.len() != expected {
        return Err(PersistError::Format(format!(
            "payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = EdgeParams(Matrix::from_vec(tree.num_edges(), header.row_len, values));
    let model = CaneModel {
        tree,
        params,
        representation: header.representation,
        labels: header.label_dictionary.clone(),
        num_features: header.num_features,
    };
    Ok((model, header))
}

pub fn save_model<P: AsRef<Path>>(path: P, model: &CaneModel, config: Option<&TrainConfig>) -> Result<(), PersistError> {
    write_model(model, config, BufWriter::new(File::create(path)?))
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<(CaneModel, ModelHeader), PersistError> {
    read_model(BufReader::new(File::open(path)?))
}

pub fn write_tree<W: Write>(tree: &LabelTree, mut out: W) -> Result<(), PersistError> {
    serde_json::to_writer(&mut out, &tree.topology())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_tree<R: Read>(input: R) -> Result<LabelTree, PersistError> {
    let topology: Topology = serde_json::from_reader(input)?;
    Ok(LabelTree::from_topology(&topology)?)
}

pub fn save_tree<P: AsRef<Path>>(path: P, tree: &LabelTree) -> Result<(), PersistError> {
    write_tree(tree, BufWriter::new(File::create(path)?))
}

pub fn load_tree<P: AsRef<Path>>(path: P) -> Result<LabelTree, PersistError> {
    read_tree(BufReader::new(File::open(path)?))
}

/// One JSON line of training progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub examples_seen: u64,
    pub sampled_objective_mean: f64,
    pub test_accuracy_top1: Option<f64>,
    #[serde(rename = "coverage_topNc")]
    pub coverage_top_nc: Option<f64>,
    pub wall_seconds: f64,
}

impl MetricRecord {
    pub fn write_line<W: Write>(&self, mut out: W) -> Result<(), PersistError> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(k: usize, b: usize, d: usize, seed: u64) -> CaneModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = LabelTree::rebalance(&(0..k).rev().collect::<Vec<_>>(), b).unwrap();
        let labels = LabelDictionary::from_raw_labels((0..k as i64).map(|v| v * 3 - 7));
        let mut m = CaneModel::zeros(tree, labels, d);
        for v in m.params.0.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0) * 1e-3f64.powi(rng.random_range(0..4));
        }
        m
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = random_model(23, 3, 5, 1);
        let cfg = TrainConfig { learning_rate: 0.1 + 0.2, seed: 99, ..TrainConfig::default() };
        let mut first = Vec::new();
        write_model(&m, Some(&cfg), &mut first).unwrap();
        let (loaded, header) = read_model(&first[..]).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(header.config.as_ref(), Some(&cfg));
        assert_eq!(header.seed, 99);
        let mut second = Vec::new();
        write_model(&loaded, header.config.as_ref(), &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn payload_layout_is_edge_major_le() {
        let m = random_model(4, 2, 2, 2);
        let mut bytes = Vec::new();
        write_model(&m, None, &mut bytes).unwrap();
        let start = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        let payload = &bytes[start..];
        assert_eq!(payload.len(), m.tree.num_edges() * 2 * 8);
        let e3_1 = f64::from_le_bytes(payload[(3 * 2 + 1) * 8..(3 * 2 + 2) * 8].try_into().unwrap());
        assert_eq!(e3_1, m.params.edge(3)[1]);
    }

    #[test]
    fn truncated_payload_rejected() {
        let m = random_model(5, 2, 3, 3);
        let mut bytes = Vec::new();
        write_model(&m, None, &mut bytes).unwrap();
        bytes.pop();
        assert!(matches!(read_model(&bytes[..]), Err(PersistError::Format(_))));
        assert!(read_model(&b"{}"[..]).is_err());
    }

    #[test]
    fn tree_file_round_trip() {
        let tree = LabelTree::rebalance(&[2, 0, 1, 4, 3], 2).unwrap();
        let mut a = Vec::new();
        write_tree(&tree, &mut a).unwrap();
        let back = read_tree(&a[..]).unwrap();
        assert_eq!(back, tree);
        let mut b = Vec::new();
        write_tree(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metric_record_field_names() {
        let r = MetricRecord {
            epoch: 1,
            examples_seen: 10,
            sampled_objective_mean: -1.5,
            test_accuracy_top1: Some(0.5),
            coverage_top_nc: None,
            wall_seconds: 0.25,
        };
        let mut out = Vec::new();
        r.write_line(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.ends_with('\n') && s.contains("\"coverage_topNc\":null"));
        assert_eq!(serde_json::from_str::<MetricRecord>(s.trim()).unwrap(), r);
    }
}
