use cane::data::LabelDictionary;
use cane::matrix::dense_dot;
use cane::model::FlatModel;
use cane::sampling::NoiseSampler;
use cane::statlab::{consistency_experiment, generate_synthetic, Estimator, SyntheticSpec};
use cane::trainer::{in_coefficients, out_coefficients, CandidateSelector, NoiseTerm, TopScores, TrainConfig};

/// At the true parameters, the exact-expectation gradient averaged over a large
/// sample is indistinguishable from zero at the sample's own noise level.
#[test]
fn population_gradient_vanishes_at_truth() {
    let n = 100_000;
    let spec = SyntheticSpec::random(8, 5, n, 0.7, 21).unwrap();
    let (ds, _) = generate_synthetic(&spec, 22);
    let (k, d) = (8, 5);
    let model = FlatModel { weights: spec.weights.clone(), labels: LabelDictionary::identity(k) };
    let sampler = NoiseSampler::uniform(k).unwrap();
    let mut sum = vec![0.0; k * d];
    let mut sum_sq = 0.0;
    for ex in ds.examples() {
        let x = &ex.features;
        let ids = TopScores.select(&model, x, 3);
        let cands: Vec<(usize, f64)> = ids.iter().map(|&c| (c, model.score(x, c))).collect();
        let mut coef = vec![0.0; k];
        if ids.contains(&ex.label) {
            for j in (0..k).filter(|j| !ids.contains(j)) {
                let q = sampler.noise_prob(&ids, j).unwrap();
                let c = in_coefficients(&cands, ex.label, &[NoiseTerm { class: j, score: model.score(x, j), q }]);
                for (class, v) in c.entries {
                    coef[class] += q * v;
                }
            }
        } else {
            let q = sampler.noise_prob(&ids, ex.label).unwrap();
            for (class, v) in out_coefficients(&cands, ex.label, model.score(x, ex.label), q).entries {
                coef[class] += v;
            }
        }
        let xd: Vec<f64> = x.iter().map(|e| e.1).collect();
        let mut sq = 0.0;
        for c in 0..k {
            for i in 0..d {
                let g = coef[c] * xd[i];
                sum[c * d + i] += g;
                sq += g * g;
            }
        }
        sum_sq += sq;
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
    let mean_norm_sq = dense_dot(&mean, &mean);
    let std = (sum_sq / n as f64 - mean_norm_sq).sqrt();
    let bound = 5.0 / (n as f64).sqrt() * std;
    assert!(mean_norm_sq.sqrt() <= bound, "{} > {bound}", mean_norm_sq.sqrt());
}

#[test]
fn softmax_baseline_is_comparably_consistent() {
    let config = TrainConfig { candidates: 3, noises: 3, learning_rate: 1.0, epochs: 20, lr_decay: true, ..TrainConfig::default() };
    let grid = [1_000, 10_000];
    let (mut cane, mut soft) = (0.0, 0.0);
    for s in 0..3u64 {
        let spec = SyntheticSpec::random(8, 5, 0, 0.7, 100 + s).unwrap();
        cane += consistency_experiment(&spec, &config, &grid, s, Estimator::Cane).unwrap()[1].mse;
        soft += consistency_experiment(&spec, &config, &grid, s, Estimator::Softmax).unwrap()[1].mse;
    }
    let ratio = soft / cane;
    assert!((0.5..=2.0).contains(&ratio), "softmax/cane MSE ratio {ratio}");
}

#[test]
fn consistency_is_reproducible() {
    let spec = SyntheticSpec::random(5, 3, 0, 0.7, 1).unwrap();
    let cfg = TrainConfig { candidates: 2, noises: 2, epochs: 2, lr_decay: true, ..TrainConfig::default() };
    let a = consistency_experiment(&spec, &cfg, &[200, 400], 3, Estimator::Cane).unwrap();
    let b = consistency_experiment(&spec, &cfg, &[200, 400], 3, Estimator::Cane).unwrap();
    assert_eq!(a, b);
}
