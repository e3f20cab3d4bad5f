//! Sampled candidate-vs-noise log-probabilities and their gradients.
//!
//! All gradients are expressed as coefficients on per-class score gradients:
//! `grad = sum_k coef_k * grad s_k`. The flat and tree trainers turn those
//! coefficients into row or edge updates; the generic `grad_*` functions apply
//! them to arbitrary score gradients.
//!
//! A noise score enters the denominator as `exp(s_j) / q_j`, computed as
//! `exp(s_j - ln q_j)` inside a max-shifted log-sum-exp.

use crate::matrix::log_sum_exp;

/// A noise class with its score and sampling probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTerm {
    pub class: usize,
    pub score: f64,
    pub q: f64,
}

/// Per-class gradient coefficients for one example, plus the sampled log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCoefficients {
    /// Distinct classes in first-seen order: candidates first, then noises.
    pub entries: Vec<(usize, f64)>,
    pub loss: f64,
}

impl ClassCoefficients {
    pub fn coefficient(&self, class: usize) -> f64 {
        self.entries
            .iter()
            .find(|(c, _)| *c == class)
            .map_or(0.0, |e| e.1)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    fn add(&mut self, class: usize, v: f64) {
        match self.entries.iter_mut().find(|(c, _)| *c == class) {
            Some(e) => e.1 += v,
            None => self.entries.push((class, v)),
        }
    }
}

fn log_denominator(candidates: &[(usize, f64)], extra: Option<f64>, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(candidates.iter().map(|c| c.1));
    if let Some(e) = extra {
        buf.push(e);
    }
    log_sum_exp(buf)
}

fn score_of(candidates: &[(usize, f64)], y: usize) -> f64 {
    candidates
        .iter()
        .find(|c| c.0 == y)
        .map(|c| c.1)
        .expect("true class must be among the candidates")
}

// `s_y - log Z` evaluated as `-lse(logits - s_y)`, which keeps precision when
// the true class dominates and the ratio is within rounding of one.
fn relative_log_prob(candidates: &[(usize, f64)], s_y: f64, noise_logit: f64) -> f64 {
    let mut buf: Vec<f64> = candidates.iter().map(|c| c.1 - s_y).collect();
    buf.push(noise_logit - s_y);
    -log_sum_exp(&buf)
}

/// `log[e^{s_y} / (sum_C e^{s_k} + e^{s_j}/q_j)]` for `y` in the candidate set.
pub fn loss_in(candidates: &[(usize, f64)], y: usize, noise_score: f64, q: f64) -> f64 {
    relative_log_prob(candidates, score_of(candidates, y), noise_score - q.ln())
}

/// `log[e^{s_y} / (sum_C e^{s_k} + e^{s_y}/q_y)]` for `y` outside the candidate set.
pub fn loss_out(candidates: &[(usize, f64)], true_score: f64, q: f64) -> f64 {
    relative_log_prob(candidates, true_score, true_score - q.ln())
}

/// Coefficients for the `y in C` branch, averaged over the sampled noises.
///
/// With no noises (the candidates cover every class) this is the softmax over the candidates.
pub fn in_coefficients(candidates: &[(usize, f64)], y: usize, noises: &[NoiseTerm]) -> ClassCoefficients {
    let s_y = score_of(candidates, y);
    let mut out = ClassCoefficients {
        entries: candidates.iter().map(|c| (c.0, 0.0)).collect(),
        loss: 0.0,
    };
    let mut buf = Vec::with_capacity(candidates.len() + 1);
    if noises.is_empty() {
        let log_z = log_denominator(candidates, None, &mut buf);
        for (e, c) in out.entries.iter_mut().zip(candidates) {
            e.1 = -(c.1 - log_z).exp();
        }
        out.loss = s_y - log_z;
    } else {
        let inv_t = 1.0 / noises.len() as f64;
        for n in noises {
            let noise_logit = n.score - n.q.ln();
            let log_z = log_denominator(candidates, Some(noise_logit), &mut buf);
            for (e, c) in out.entries.iter_mut().zip(candidates) {
                e.1 -= inv_t * (c.1 - log_z).exp();
            }
            out.add(n.class, -inv_t * (noise_logit - log_z).exp());
            out.loss += inv_t * relative_log_prob(candidates, s_y, noise_logit);
        }
    }
    out.add(y, 1.0);
    out
}

/// Coefficients for the `y not in C` branch, where `y` stands in as the noise.
pub fn out_coefficients(candidates: &[(usize, f64)], y: usize, true_score: f64, q: f64) -> ClassCoefficients {
    let mut buf = Vec::with_capacity(candidates.len() + 1);
    let y_logit = true_score - q.ln();
    let log_z = log_denominator(candidates, Some(y_logit), &mut buf);
    let mut entries: Vec<(usize, f64)> = candidates
        .iter()
        .map(|c| (c.0, -(c.1 - log_z).exp()))
        .collect();
    entries.push((y, 1.0 - (y_logit - log_z).exp()));
    ClassCoefficients {
        entries,
        loss: relative_log_prob(candidates, true_score, y_logit),
    }
}

fn combine<F>(coefs: &ClassCoefficients, score_grad: F, dim: usize) -> Vec<f64>
where
    F: Fn(usize) -> Vec<f64>,
{
    let mut g = vec![0.0; dim];
    for &(class, c) in &coefs.entries {
        for (gi, v) in g.iter_mut().zip(score_grad(class)) {
            *gi += c * v;
        }
    }
    g
}

/// Gradient of the mean in-branch log-probability over `noises`, given each
/// class's score gradient (a `dim`-vector over the parameters).
pub fn grad_generic_in<F>(
    candidates: &[(usize, f64)],
    y: usize,
    noises: &[NoiseTerm],
    score_grad: F,
    dim: usize,
) -> Vec<f64>
where
    F: Fn(usize) -> Vec<f64>,
{
    combine(&in_coefficients(candidates, y, noises), score_grad, dim)
}

/// Gradient of the out-of-candidates log-probability.
pub fn grad_generic_out<F>(
    candidates: &[(usize, f64)],
    y: usize,
    true_score: f64,
    q: f64,
    score_grad: F,
    dim: usize,
) -> Vec<f64>
where
    F: Fn(usize) -> Vec<f64>,
{
    combine(&out_coefficients(candidates, y, true_score, q), score_grad, dim)
}

/// Full softmax log-likelihood of `y` and per-class coefficients `1{k=y} - p_k`.
pub fn softmax_coefficients(scores: &[f64], y: usize) -> (f64, Vec<f64>) {
    let log_z = log_sum_exp(scores);
    let coefs = scores
        .iter()
        .enumerate()
        .map(|(k, &s)| f64::from(u8::from(k == y)) - (s - log_z).exp())
        .collect();
    (scores[y] - log_z, coefs)
}
