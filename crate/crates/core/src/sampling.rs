//! Noise sampling from the complement of a candidate set.
//!
//! Draws come from an alias table over the whole vocabulary; draws that hit the
//! candidate set are rejected and redrawn. The reported probability of a noise
//! class is its weight renormalized over the complement.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use thiserror::Error;

use crate::data::ClassUnigram;

/// Redraws allowed per noise before falling back to explicit enumeration.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("candidate set covers every class; no noise classes remain")]
    EmptyComplement,
    #[error("class {0} is a candidate, not a noise class")]
    InCandidates(usize),
    #[error("class {class} out of range for {num_classes} classes")]
    OutOfRange { class: usize, num_classes: usize },
    #[error("noise distribution needs positive finite weights")]
    BadWeights,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    pub class: usize,
    /// Probability of `class` under the complement-renormalized distribution.
    pub q: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseSampler {
    weights: Vec<f64>,
    total: f64,
    alias: WeightedAliasIndex<f64>,
}

/// Candidate ids sorted and deduplicated, with a range check.
fn normalize_candidates(candidates: &[usize], k: usize) -> Result<Vec<usize>, SamplingError> {
    let mut c = candidates.to_vec();
    c.sort_unstable();
    c.dedup();
    if let Some(&bad) = c.iter().find(|&&c| c >= k) {
        return Err(SamplingError::OutOfRange {
            class: bad,
            num_classes: k,
        });
    }
    Ok(c)
}

impl NoiseSampler {
    pub fn new(unigram: &ClassUnigram) -> Result<Self, SamplingError> {
        Self::from_weights(unigram.weights().to_vec())
    }

    pub fn uniform(num_classes: usize) -> Result<Self, SamplingError> {
        Self::new(&ClassUnigram::uniform(num_classes))
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self, SamplingError> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(SamplingError::BadWeights);
        }
        let total = weights.iter().sum();
        let alias = WeightedAliasIndex::new(weights.clone()).map_err(|_| SamplingError::BadWeights)?;
        Ok(Self {
            weights,
            total,
            alias,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total weight outside `sorted` (sorted, deduplicated candidates).
    fn complement_mass(&self, sorted: &[usize]) -> f64 {
        let inside: f64 = sorted.iter().map(|&c| self.weights[c]).sum();
        if inside <= 0.5 * self.total {
            self.total - inside
        } else {
            // Subtracting would cancel most digits; sum the complement directly.
            self.weights
                .iter()
                .enumerate()
                .filter(|(j, _)| sorted.binary_search(j).is_err())
                .map(|(_, w)| w)
                .sum()
        }
    }

    /// `q(j)`: weight of `j` renormalized over the complement of `candidates`.
    pub fn noise_prob(&self, candidates: &[usize], j: usize) -> Result<f64, SamplingError> {
        let k = self.num_classes();
        if j >= k {
            return Err(SamplingError::OutOfRange {
                class: j,
                num_classes: k,
            });
        }
        let sorted = normalize_candidates(candidates, k)?;
        if sorted.len() == k {
            return Err(SamplingError::EmptyComplement);
        }
        if sorted.binary_search(&j).is_ok() {
            return Err(SamplingError::InCandidates(j));
        }
        Ok(self.prob_given_mass(j, self.complement_mass(&sorted)))
    }

    #[inline]
    fn prob_given_mass(&self, j: usize, mass: f64) -> f64 {
        (self.weights[j] / mass).min(1.0)
    }

    /// `count` independent draws, with replacement, from the complement of `candidates`.
    pub fn sample_noises<R: Rng + ?Sized>(
        &self,
        candidates: &[usize],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<NoiseDraw>, SamplingError> {
        let k = self.num_classes();
        let sorted = normalize_candidates(candidates, k)?;
        if sorted.len() == k {
            return Err(SamplingError::EmptyComplement);
        }
        let mass = self.complement_mass(&sorted);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let class = self.draw_one(&sorted, mass, rng);
            out.push(NoiseDraw {
                class,
                q: self.prob_given_mass(class, mass),
            });
        }
        Ok(out)
    }

    fn draw_one<R: Rng + ?Sized>(&self, sorted: &[usize], mass: f64, rng: &mut R) -> usize {
        for _ in 0..MAX_REJECTIONS {
            let j = self.alias.sample(rng);
            if sorted.binary_search(&j).is_err() {
                return j;
            }
        }
        self.draw_by_enumeration(sorted, mass, rng)
    }

    fn draw_by_enumeration<R: Rng + ?Sized>(&self, sorted: &[usize], mass: f64, rng: &mut R) -> usize {
        let mut target = rng.random::<f64>() * mass;
        let mut last = None;
        for (j, &w) in self.weights.iter().enumerate() {
            if sorted.binary_search(&j).is_ok() {
                continue;
            }
            last = Some(j);
            if target < w {
                return j;
            }
            target -= w;
        }
        last.expect("complement is non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_renormalization() {
        let s = NoiseSampler::uniform(10).unwrap();
        let q = s.noise_prob(&[3, 7], 0).unwrap();
        assert!((q - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn single_noise_has_probability_one() {
        let s = NoiseSampler::uniform(4).unwrap();
        assert_eq!(s.noise_prob(&[0, 1, 2], 3).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = s.sample_noises(&[0, 1, 2], 5, &mut rng).unwrap();
        assert!(draws.iter().all(|d| d.class == 3 && d.q == 1.0));
    }

    #[test]
    fn smoothed_unigram_probabilities() {
        let u = ClassUnigram::from_counts(&[4, 2, 2, 2], 1.0).unwrap();
        let s = NoiseSampler::new(&u).unwrap();
        for j in 1..4 {
            assert!((s.noise_prob(&[0], j).unwrap() - 3.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn errors() {
        let s = NoiseSampler::uniform(3).unwrap();
        assert_eq!(s.noise_prob(&[0, 1], 1), Err(SamplingError::InCandidates(1)));
        assert_eq!(s.noise_prob(&[0, 1, 2], 1), Err(SamplingError::EmptyComplement));
        assert!(matches!(s.noise_prob(&[5], 1), Err(SamplingError::OutOfRange { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            s.sample_noises(&[2, 1, 0], 1, &mut rng),
            Err(SamplingError::EmptyComplement)
        );
        assert!(NoiseSampler::from_weights(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn complement_probabilities_sum_to_one() {
        let u = ClassUnigram::from_counts(&[1000, 1, 5, 0, 70, 3, 9, 12], 0.75).unwrap();
        let s = NoiseSampler::new(&u).unwrap();
        for cands in [vec![0], vec![0, 4], vec![1, 2, 3, 5, 6, 7], vec![]] {
            let sum: f64 = (0..8)
                .filter(|j| !cands.contains(j))
                .map(|j| s.noise_prob(&cands, j).unwrap())
                .sum();
            assert!((sum - 1.0).abs() < 1e-12, "{cands:?}: {sum}");
        }
    }

    #[test]
    fn sampled_q_matches_noise_prob_bitwise() {
        let u = ClassUnigram::from_counts(&[5, 1, 2, 8, 0, 3], 0.5).unwrap();
        let s = NoiseSampler::new(&u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cands = [3, 0];
        for d in s.sample_noises(&cands, 200, &mut rng).unwrap() {
            assert!(!cands.contains(&d.class));
            assert_eq!(d.q.to_bits(), s.noise_prob(&cands, d.class).unwrap().to_bits());
        }
    }

    #[test]
    fn uniform_draws_concentrate() {
        let s = NoiseSampler::uniform(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let draws = s.sample_noises(&[2, 5], n, &mut rng).unwrap();
        let mut counts = [0usize; 10];
        for d in draws {
            counts[d.class] += 1;
        }
        let p = 1.0 / 8.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (j, &c) in counts.iter().enumerate() {
            if j == 2 || j == 5 {
                assert_eq!(c, 0);
            } else {
                assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "class {j}: {c}");
            }
        }
    }

    #[test]
    fn power_zero_matches_uniform_sampler() {
        let u = ClassUnigram::from_counts(&[9, 0, 4, 4, 1], 0.0).unwrap();
        let a = NoiseSampler::new(&u).unwrap();
        let b = NoiseSampler::uniform(5).unwrap();
        let mut ra = ChaCha8Rng::seed_from_u64(3);
        let mut rb = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            a.sample_noises(&[1], 500, &mut ra).unwrap(),
            b.sample_noises(&[1], 500, &mut rb).unwrap()
        );
    }

    #[test]
    fn enumeration_fallback_respects_distribution() {
        // Candidates hold almost all the mass, so rejection sampling exhausts its budget.
        let mut w = vec![1e-9; 3];
        w.push(1.0);
        w[0] = 2e-9;
        let s = NoiseSampler::from_weights(w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = s.sample_noises(&[3], 3000, &mut rng).unwrap();
        let zeros = draws.iter().filter(|d| d.class == 0).count() as f64;
        assert!((zeros / 3000.0 - 0.5).abs() < 0.05);
        assert!(draws.iter().all(|d| d.class != 3));
        assert!((s.noise_prob(&[3], 0).unwrap() - 0.5).abs() < 1e-12);
    }
}
