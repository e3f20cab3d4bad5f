use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cane::data::{self, class_centers, parse_libsvm, Dataset, Example, LabelDictionary};
use cane::label_tree::{ceil_log, LabelTree};
use cane::model::FlatModel;
use cane::persist;
use cane::search::{evaluate, predict_top_j};
use cane::statlab::coverage_probability;
use cane::trainer::{train_beam_tree, train_beam_tree_with, SamplerKind, TrainConfig};

/// Sparse clustered data: each class owns a few "topic" features plus noise terms.
fn topic_data(k: usize, d: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics: Vec<Vec<usize>> = (0..k).map(|_| (0..6).map(|_| rng.random_range(0..d)).collect()).collect();
    let examples = (0..n)
        .map(|i| {
            let c = i % k;
            let mut f: Vec<(usize, f64)> = topics[c].iter().map(|&j| (j, rng.random_range(0.5..1.0))).collect();
            f.extend((0..4).map(|_| (rng.random_range(0..d), rng.random_range(0.0..0.5))));
            f.sort_by_key(|e| e.0);
            f.dedup_by_key(|e| e.0);
            Example { features: f, label: c }
        })
        .collect();
    Dataset::new(examples, LabelDictionary::from_raw_labels((0..k as i64).map(|v| 1 + 2 * v)), d).unwrap()
}

#[test]
fn clustered_tree_training_end_to_end() {
    let ds = topic_data(105, 400, 105 * 30, 1);
    let (train, test) = data::split(&ds, 0.9, 0).unwrap();
    let tree = LabelTree::build_clustering(&class_centers(&train).unwrap(), 10, 0).unwrap();
    assert_eq!(tree.depth(), ceil_log(105, 10));
    assert_eq!(tree.depth(), 3);
    let cfg = TrainConfig { candidates: 5, noises: 5, learning_rate: 0.5, epochs: 10, ..TrainConfig::default() };
    let mut trace = Vec::new();
    let (model, stats) = train_beam_tree_with(&train, tree, &cfg, |r, _| trace.push(r.sampled_objective_mean)).unwrap();
    assert_eq!(trace.len(), 10);
    assert!(trace[9] > trace[0]);
    assert!(stats.max_updates_per_example <= 15 * 3);
    let report = evaluate(&model, &test, 5);
    assert!(report.accuracy[0] > 0.8, "{report:?}");
    assert!(coverage_probability(&model, &test, 5) >= report.accuracy[0]);
    assert_eq!(evaluate(&model, &test, 105).accuracy[104], 1.0);
}

#[test]
fn training_is_deterministic_and_persists_bit_exactly() {
    let ds = topic_data(20, 60, 400, 2);
    let tree = LabelTree::build_clustering(&class_centers(&ds).unwrap(), 4, 3).unwrap();
    let cfg = TrainConfig { candidates: 3, noises: 2, epochs: 3, branching: 4, seed: 11, ..TrainConfig::default() };
    let (a, _) = train_beam_tree(&ds, tree.clone(), &cfg).unwrap();
    let (b, _) = train_beam_tree(&ds, tree, &cfg).unwrap();
    assert_eq!(a, b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    persist::save_model(&path, &a, Some(&cfg)).unwrap();
    let first = std::fs::read(&path).unwrap();
    let (loaded, header) = persist::load_model(&path).unwrap();
    assert_eq!(loaded, a);
    persist::save_model(&path, &loaded, header.config.as_ref()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    for ex in ds.examples().iter().take(20) {
        assert_eq!(predict_top_j(&loaded, &ex.features, 3), predict_top_j(&a, &ex.features, 3));
    }
}

#[test]
fn zero_power_unigram_trains_like_uniform() {
    let ds = topic_data(12, 40, 240, 4);
    let tree = LabelTree::rebalance(&(0..12).collect::<Vec<_>>(), 3).unwrap();
    let base = TrainConfig { candidates: 2, noises: 3, epochs: 2, branching: 3, ..TrainConfig::default() };
    let uni = TrainConfig { sampler: SamplerKind::Unigram { power: 0.0 }, ..base.clone() };
    let (a, _) = train_beam_tree(&ds, tree.clone(), &base).unwrap();
    let (b, _) = train_beam_tree(&ds, tree, &uni).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn libsvm_labels_survive_split_and_reload() {
    let text = "3 1:1 4:0.5\n-1 2:2\n3 3:1\n7 1:0.25 2:0.25\n-1 4:1\n";
    let ds = parse_libsvm(text.as_bytes()).unwrap();
    assert_eq!(ds.label_dictionary().raw_labels(), &[-1, 3, 7]);
    let (train, test) = data::split(&ds, 0.6, 5).unwrap();
    assert_eq!(train.len() + test.len(), 5);
    let mut buf = Vec::new();
    test.write_libsvm(&mut buf).unwrap();
    let back = data::parse_libsvm_with_dictionary(&buf[..], ds.label_dictionary(), ds.num_features()).unwrap();
    assert_eq!(back.examples(), test.examples());
}

#[test]
fn flat_model_as_depth_one_tree_ranks_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut flat = FlatModel::zeros(9, 4, LabelDictionary::identity(9));
    for v in flat.weights.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    let tree_model = flat.to_tree_model();
    assert_eq!(tree_model.tree.depth(), 1);
    for _ in 0..50 {
        let x: Vec<(usize, f64)> = (0..4).map(|i| (i, rng.random_range(-1.0..1.0))).collect();
        let s = flat.scores(&x);
        let mut want: Vec<usize> = (0..9).collect();
        want.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        assert_eq!(predict_top_j(&tree_model, &x, 9), want);
    }
}
