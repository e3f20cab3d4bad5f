//! Sparse classification datasets in LIBSVM text format.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: label {token:?} is not an integer")]
    NonIntegerLabel { line: usize, token: String },
    #[error("line {line}: duplicate feature index {index}")]
    DuplicateFeature { line: usize, index: usize },
    #[error("line {line}: label {label} is not in the training label dictionary")]
    UnknownLabel { line: usize, label: i64 },
    #[error("dataset is empty")]
    Empty,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    FractionOutOfRange(f64),
    #[error("unigram power {0} must lie in [0, 1]")]
    PowerOutOfRange(f64),
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// One labeled sparse example with 0-based, strictly increasing feature indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<(usize, f64)>,
    pub label: usize,
}

/// Bijection between raw integer labels and dense class ids `0..K`.
///
/// Dense ids follow ascending numeric order of the raw labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDictionary {
    raw: Vec<i64>,
}

impl LabelDictionary {
    /// Builds the dictionary from any collection of raw labels (duplicates allowed).
    pub fn from_raw_labels<I: IntoIterator<Item = i64>>(labels: I) -> Self {
        let mut raw: Vec<i64> = labels.into_iter().collect();
        raw.sort_unstable();
        raw.dedup();
        Self { raw }
    }

    /// Dictionary mapping raw label `k` to id `k` for `k in 0..K`.
    pub fn identity(num_classes: usize) -> Self {
        Self {
            raw: (0..num_classes as i64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn id_of(&self, raw: i64) -> Option<usize> {
        self.raw.binary_search(&raw).ok()
    }

    pub fn raw_of(&self, id: usize) -> Option<i64> {
        self.raw.get(id).copied()
    }

    /// `(raw, id)` pairs in id order.
    pub fn entries(&self) -> impl Iterator<Item = (i64, usize)> + '_ {
        self.raw.iter().enumerate().map(|(id, &r)| (r, id))
    }

    pub fn raw_labels(&self) -> &[i64] {
        &self.raw
    }

    /// Rebuilds from raw labels listed in id order. Fails unless strictly increasing.
    pub fn from_ordered(raw: Vec<i64>) -> Result<Self, DataError> {
        if raw.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid(
                "label dictionary must be strictly increasing".into(),
            ));
        }
        Ok(Self { raw })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_features: usize,
    class_counts: Vec<usize>,
    labels: LabelDictionary,
}

impl Dataset {
    /// Validates and assembles a dataset. `num_features` is raised to cover every index seen.
    pub fn new(
        examples: Vec<Example>,
        labels: LabelDictionary,
        num_features: usize,
    ) -> Result<Self, DataError> {
        let k = labels.len();
        if k == 0 {
            return Err(DataError::Invalid("no classes".into()));
        }
        let mut class_counts = vec![0usize; k];
        let mut d = num_features;
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= k {
                return Err(DataError::Invalid(format!(
                    "example {i}: label {} out of range for {k} classes",
                    ex.label
                )));
            }
            if ex.features.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(DataError::Invalid(format!(
                    "example {i}: feature indices not strictly increasing"
                )));
            }
            if ex.features.iter().any(|(_, v)| !v.is_finite()) {
                return Err(DataError::Invalid(format!(
                    "example {i}: non-finite feature value"
                )));
            }
            if let Some(&(last, _)) = ex.features.last() {
                d = d.max(last + 1);
            }
            class_counts[ex.label] += 1;
        }
        Ok(Self {
            examples,
            num_features: d.max(1),
            class_counts,
            labels,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn label_dictionary(&self) -> &LabelDictionary {
        &self.labels
    }

    /// Same examples with feature dimension raised to at least `d`.
    pub fn with_num_features(mut self, d: usize) -> Self {
        self.num_features = self.num_features.max(d);
        self
    }

    /// Writes the dataset back out in LIBSVM format (raw labels, 1-based indices).
    pub fn write_libsvm<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ex in &self.examples {
            let raw = self.labels.raw_of(ex.label).expect("label in dictionary");
            write!(out, "{raw}")?;
            for &(i, v) in &ex.features {
                write!(out, " {}:{}", i + 1, v)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        let examples: Vec<Example> = idx.iter().map(|&i| self.examples[i].clone()).collect();
        let mut class_counts = vec![0; self.num_classes()];
        for ex in &examples {
            class_counts[ex.label] += 1;
        }
        Dataset {
            examples,
            num_features: self.num_features,
            class_counts,
            labels: self.labels.clone(),
        }
    }
}

struct RawLine {
    label: i64,
    features: Vec<(usize, f64)>,
}

fn parse_line(line_no: usize, line: &str) -> Result<Option<RawLine>, DataError> {
    let content = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    let mut tokens = content.split_whitespace();
    let Some(label_tok) = tokens.next() else {
        return Ok(None);
    };
    let label = label_tok
        .parse::<i64>()
        .map_err(|_| DataError::NonIntegerLabel {
            line: line_no,
            token: label_tok.to_string(),
        })?;
    let features = parse_features(line_no, tokens)?;
    Ok(Some(RawLine { label, features }))
}

/// Parses `idx:val` tokens (1-based indices) into sorted 0-based pairs.
pub(crate) fn parse_features<'a, I: Iterator<Item = &'a str>>(
    line_no: usize,
    tokens: I,
) -> Result<Vec<(usize, f64)>, DataError> {
    let malformed = |reason: String| DataError::Malformed {
        line: line_no,
        reason,
    };
    let mut features = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| malformed(format!("expected idx:val, got {tok:?}")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| malformed(format!("bad feature index {idx:?}")))?;
        if idx == 0 {
            return Err(malformed("feature indices are 1-based".into()));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| malformed(format!("bad feature value {val:?}")))?;
        if !val.is_finite() {
            return Err(malformed(format!("non-finite feature value {val}")));
        }
        features.push((idx - 1, val));
    }
    features.sort_by_key(|&(i, _)| i);
    if let Some(w) = features.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(DataError::DuplicateFeature {
            line: line_no,
            index: w[0].0 + 1,
        });
    }
    Ok(features)
}

/// Parses a single feature line for prediction: `[label] idx:val ...`.
/// A leading token without `:` is treated as a label and ignored.
pub fn parse_feature_line(line_no: usize, line: &str) -> Result<Vec<(usize, f64)>, DataError> {
    let content = line.split('#').next().unwrap_or("");
    let mut tokens = content.split_whitespace().peekable();
    if tokens.peek().is_some_and(|t| !t.contains(':')) {
        tokens.next();
    }
    parse_features(line_no, tokens)
}

fn read_raw<R: BufRead>(reader: R) -> Result<Vec<(usize, RawLine)>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(raw) = parse_line(i + 1, &line)? {
            out.push((i + 1, raw));
        }
    }
    Ok(out)
}

/// Parses LIBSVM text, building the label dictionary from the labels present.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    let raw = read_raw(reader)?;
    if raw.is_empty() {
        return Err(DataError::Empty);
    }
    let labels = LabelDictionary::from_raw_labels(raw.iter().map(|(_, r)| r.label));
    assemble(raw, labels, 0)
}

/// Parses LIBSVM text against an existing dictionary; unknown labels are an error.
pub fn parse_libsvm_with_dictionary<R: BufRead>(
    reader: R,
    labels: &LabelDictionary,
    num_features: usize,
) -> Result<Dataset, DataError> {
    let raw = read_raw(reader)?;
    assemble(raw, labels.clone(), num_features)
}

fn assemble(
    raw: Vec<(usize, RawLine)>,
    labels: LabelDictionary,
    num_features: usize,
) -> Result<Dataset, DataError> {
    let mut examples = Vec::with_capacity(raw.len());
    for (line, r) in raw {
        let label = labels
            .id_of(r.label)
            .ok_or(DataError::UnknownLabel {
                line,
                label: r.label,
            })?;
        examples.push(Example {
            features: r.features,
            label,
        });
    }
    Dataset::new(examples, labels, num_features)
}

pub fn load_libsvm<P: AsRef<Path>>(path: P) -> Result<Dataset, DataError> {
    parse_libsvm(BufReader::new(File::open(path)?))
}

pub fn load_libsvm_with_dictionary<P: AsRef<Path>>(
    path: P,
    labels: &LabelDictionary,
    num_features: usize,
) -> Result<Dataset, DataError> {
    parse_libsvm_with_dictionary(BufReader::new(File::open(path)?), labels, num_features)
}

/// Deterministic shuffled split. The train part gets `round(n * train_fraction)` examples.
pub fn split(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::FractionOutOfRange(train_fraction));
    }
    let n = dataset.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let (train, test) = idx.split_at(n_train.min(n));
    Ok((dataset.subset(train), dataset.subset(test)))
}

/// Add-one smoothed class frequencies raised to `power`, normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassUnigram {
    weights: Vec<f64>,
    power: f64,
}

impl ClassUnigram {
    pub fn from_counts(counts: &[usize], power: f64) -> Result<Self, DataError> {
        if !(0.0..=1.0).contains(&power) {
            return Err(DataError::PowerOutOfRange(power));
        }
        if counts.is_empty() {
            return Err(DataError::Invalid("no classes".into()));
        }
        let raw: Vec<f64> = counts
            .iter()
            .map(|&c| ((c + 1) as f64).powf(power))
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            weights: raw.into_iter().map(|w| w / total).collect(),
            power,
        })
    }

    pub fn uniform(num_classes: usize) -> Self {
        assert!(num_classes > 0, "uniform distribution needs at least one class");
        Self {
            weights: vec![1.0 / num_classes as f64; num_classes],
            power: 0.0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }
}

pub fn class_unigram(dataset: &Dataset, power: f64) -> Result<ClassUnigram, DataError> {
    ClassUnigram::from_counts(dataset.class_counts(), power)
}

/// Mean (densified) feature vector per class, as a `K x d` matrix.
pub fn class_centers(dataset: &Dataset) -> Result<Matrix, DataError> {
    if let Some(k) = dataset.class_counts().iter().position(|&c| c == 0) {
        return Err(DataError::EmptyClass(k));
    }
    let mut centers = Matrix::zeros(dataset.num_classes(), dataset.num_features());
    for ex in dataset.examples() {
        let row = centers.row_mut(ex.label);
        for &(i, v) in &ex.features {
            row[i] += v;
        }
    }
    for (k, &count) in dataset.class_counts().iter().enumerate() {
        let inv = 1.0 / count as f64;
        for v in centers.row_mut(k) {
            *v *= inv;
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Dataset, DataError> {
        parse_libsvm(text.as_bytes())
    }

    #[test]
    fn single_line_single_class() {
        let ds = parse("3 1:1.0\n").unwrap();
        assert_eq!(ds.num_classes(), 1);
        assert_eq!(ds.num_features(), 1);
        assert_eq!(ds.examples()[0].features, vec![(0, 1.0)]);
        assert_eq!(ds.examples()[0].label, 0);
    }

    #[test]
    fn labels_mapped_in_sorted_order() {
        let ds = parse("7 1:2.0\n2 3:1.0\n").unwrap();
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.num_features(), 3);
        assert_eq!(ds.label_dictionary().id_of(2), Some(0));
        assert_eq!(ds.label_dictionary().id_of(7), Some(1));
        assert_eq!(ds.examples()[0].label, 1);
        assert_eq!(ds.class_counts(), &[1, 1]);
    }

    #[test]
    fn unsorted_features_are_sorted() {
        let ds = parse("1 4:1 2:3\n").unwrap();
        assert_eq!(ds.examples()[0].features, vec![(1, 3.0), (3, 1.0)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse("1 1:1\n1 2:x\n") {
            Err(DataError::Malformed { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse("1 1:1\n1.5 2:1\n") {
            Err(DataError::NonIntegerLabel { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse("1 2:1 2:3\n") {
            Err(DataError::DuplicateFeature { line: 1, index: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("1 0:1\n"), Err(DataError::Malformed { .. })));
        assert!(matches!(parse("1 3\n"), Err(DataError::Malformed { .. })));
        assert!(matches!(parse("\n\n"), Err(DataError::Empty)));
    }

    #[test]
    fn blank_lines_and_comments_skipped() {
        let ds = parse("# header\n\n1 1:1 # trailing\n2 2:1\n").unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn unknown_test_label_rejected() {
        let train = parse("1 1:1\n2 1:1\n").unwrap();
        let err = parse_libsvm_with_dictionary("3 1:1\n".as_bytes(), train.label_dictionary(), 0);
        assert!(matches!(err, Err(DataError::UnknownLabel { line: 1, label: 3 })));
    }

    #[test]
    fn dimension_override_takes_max() {
        let train = parse("1 5:1\n2 1:1\n").unwrap();
        let test =
            parse_libsvm_with_dictionary("1 2:1\n".as_bytes(), train.label_dictionary(), 5)
                .unwrap();
        assert_eq!(test.num_features(), 5);
        assert_eq!(train.clone().with_num_features(3).num_features(), 5);
        assert_eq!(train.with_num_features(9).num_features(), 9);
    }

    fn ten_examples() -> Dataset {
        let text: String = (0..10).map(|i| format!("{} {}:1\n", i % 3, i + 1)).collect();
        parse(&text).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = ten_examples();
        let (a, b) = split(&ds, 0.9, 17).unwrap();
        assert_eq!((a.len(), b.len()), (9, 1));
        let (a2, b2) = split(&ds, 0.9, 17).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(a.label_dictionary(), ds.label_dictionary());
        assert_eq!(a.num_features(), ds.num_features());

        let four = parse("1 1:1\n2 1:1\n1 2:1\n2 2:1\n").unwrap();
        let (a, b) = split(&four, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let ds = ten_examples();
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(split(&ds, f, 0), Err(DataError::FractionOutOfRange(_))));
        }
    }

    #[test]
    fn unigram_examples() {
        let u = ClassUnigram::from_counts(&[3, 1], 1.0).unwrap();
        assert!((u.weights()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((u.weights()[1] - 1.0 / 3.0).abs() < 1e-15);

        let u = ClassUnigram::from_counts(&[3, 1], 0.5).unwrap();
        let s = 2.0f64.sqrt();
        assert!((u.weights()[0] - 2.0 / (2.0 + s)).abs() < 1e-15);
        assert!((u.weights()[1] - s / (2.0 + s)).abs() < 1e-15);

        let u = ClassUnigram::from_counts(&[100, 0, 7, 1], 0.0).unwrap();
        assert_eq!(u.weights(), ClassUnigram::uniform(4).weights());

        assert!(ClassUnigram::from_counts(&[1], 1.5).is_err());
    }

    #[test]
    fn centers() {
        let ds = parse("1 1:1\n1 1:3\n2 2:4\n").unwrap();
        let c = class_centers(&ds).unwrap();
        assert_eq!(c.row(0), &[2.0, 0.0]);
        assert_eq!(c.row(1), &[0.0, 4.0]);

        let ds = parse("1 1:1 2:2\n1 1:1 2:2\n").unwrap();
        assert_eq!(class_centers(&ds).unwrap().row(0), &[1.0, 2.0]);
    }

    #[test]
    fn centers_empty_class() {
        let ds = parse("1 1:1\n2 1:1\n3 1:1\n").unwrap();
        let (train, _) = split(&ds, 0.5, 1).unwrap();
        let missing = train.class_counts().iter().position(|&c| c == 0).unwrap();
        match class_centers(&train) {
            Err(DataError::EmptyClass(k)) => assert_eq!(k, missing),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        let line = (
            -5i64..5,
            proptest::collection::btree_map(0usize..20, -1e6f64..1e6, 0..6),
        );
        proptest::collection::vec(line, 1..20).prop_map(|lines| {
            let text: String = lines
                .iter()
                .map(|(l, feats)| {
                    let mut s = l.to_string();
                    for (i, v) in feats {
                        s.push_str(&format!(" {}:{}", i + 1, v));
                    }
                    s.push('\n');
                    s
                })
                .collect();
            parse(&text).unwrap()
        })
    }

    proptest! {
        #[test]
        fn libsvm_round_trip(ds in arb_dataset()) {
            let mut buf = Vec::new();
            ds.write_libsvm(&mut buf).unwrap();
            let back = parse_libsvm(buf.as_slice()).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn unigram_is_a_distribution(
            counts in proptest::collection::vec(0usize..10_000, 1..50),
            power in 0.0f64..=1.0,
        ) {
            let u = ClassUnigram::from_counts(&counts, power).unwrap();
            prop_assert!(u.weights().iter().all(|&w| w > 0.0));
            prop_assert!((u.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn split_is_a_partition(ds in arb_dataset(), frac in 0.05f64..0.95, seed in any::<u64>()) {
            let (a, b) = split(&ds, frac, seed).unwrap();
            prop_assert_eq!(a.len() + b.len(), ds.len());
            let mut all: Vec<String> = a.examples().iter().chain(b.examples())
                .map(|e| format!("{:?}", e)).collect();
            let mut orig: Vec<String> = ds.examples().iter().map(|e| format!("{:?}", e)).collect();
            all.sort();
            orig.sort();
            prop_assert_eq!(all, orig);
        }
    }
}
