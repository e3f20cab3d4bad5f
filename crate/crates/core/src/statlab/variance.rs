//! Asymptotic precision matrices and the Monte Carlo covariance experiment.
//!
//! Classes are `0..K`; class `K - 1` is the reference whose score is fixed at
//! zero. Matrices are indexed by the non-reference classes `0..K-1`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{draw_label, draw_x, softmax, StatError, SyntheticSpec};

/// Class probabilities at one input, a candidate set and a noise law over the
/// remaining non-reference classes.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceInputs {
    probs: Vec<f64>,
    candidates: Vec<usize>,
    /// `(class, q)` for every non-reference class outside the candidate set.
    noise_q: Vec<(usize, f64)>,
}

impl VarianceInputs {
    pub fn new(probs: Vec<f64>, candidates: Vec<usize>, noise_q: Vec<(usize, f64)>) -> Result<Self, StatError> {
        let k = probs.len();
        let bad = |m: &str| Err(StatError::Invalid(m.into()));
        if k < 2 {
            return bad("need at least two classes");
        }
        if probs.iter().any(|&p| !(p > 0.0 && p.is_finite())) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("probabilities must be positive and sum to one");
        }
        let mut seen = vec![false; k - 1];
        for c in candidates.iter().copied().chain(noise_q.iter().map(|n| n.0)) {
            if c >= k - 1 || seen[c] {
                return bad("candidates and noises must partition the non-reference classes");
            }
            seen[c] = true;
        }
        if seen.iter().any(|s| !s) || noise_q.is_empty() {
            return bad("candidates and noises must partition the non-reference classes");
        }
        if noise_q.iter().any(|n| n.1.is_nan() || n.1 <= 0.0) || (noise_q.iter().map(|n| n.1).sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("noise probabilities must be positive and sum to one");
        }
        Ok(Self { probs, candidates, noise_q })
    }

    /// Uniform noise law over the non-reference classes outside `candidates`.
    pub fn uniform_noise(probs: Vec<f64>, candidates: Vec<usize>) -> Result<Self, StatError> {
        let r = probs.len().saturating_sub(1);
        let noises: Vec<usize> = (0..r).filter(|c| !candidates.contains(c)).collect();
        let q = 1.0 / noises.len().max(1) as f64;
        Self::new(probs, candidates, noises.into_iter().map(|j| (j, q)).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn noise_q(&self) -> &[(usize, f64)] {
        &self.noise_q
    }
}

/// `sum_j q_j [diag(u_j) - u_j u_j^T / D_j]` with `u_j` holding the candidate
/// probabilities and `p_j / q_j` in slot `j`, and `D_j = p_K + sum_C p + p_j / q_j`.
pub fn variance_matrix_m(inputs: &VarianceInputs) -> DMatrix<f64> {
    let p = &inputs.probs;
    let r = p.len() - 1;
    let base = p[r] + inputs.candidates.iter().map(|&c| p[c]).sum::<f64>();
    let mut m = DMatrix::zeros(r, r);
    let mut u = vec![0.0; r];
    for &(j, q) in &inputs.noise_q {
        u.iter_mut().for_each(|v| *v = 0.0);
        for &c in &inputs.candidates {
            u[c] = p[c];
        }
        u[j] = p[j] / q;
        let d = base + u[j];
        for a in 0..r {
            if u[a] == 0.0 {
                continue;
            }
            m[(a, a)] += q * u[a];
            for b in 0..r {
                m[(a, b)] -= q * u[a] * u[b] / d;
            }
        }
    }
    m
}

/// `diag(p) - p p^T` over the non-reference classes.
pub fn variance_matrix_mle(probs: &[f64]) -> DMatrix<f64> {
    let r = probs.len().saturating_sub(1);
    let p = &probs[..r];
    DMatrix::from_fn(r, r, |a, b| if a == b { p[a] - p[a] * p[a] } else { -p[a] * p[b] })
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// `||M - M_mle||_F / ||M_mle||_F`.
pub fn corollary1_gap(inputs: &VarianceInputs) -> f64 {
    let mle = variance_matrix_mle(&inputs.probs);
    (variance_matrix_m(inputs) - &mle).norm() / mle.norm()
}

/// Gap at noise mass `eps`: the noise classes share `eps` in proportion to
/// `direction`, and the candidates plus the reference share `1 - eps` likewise.
pub fn corollary1_limit_check(
    candidates: &[usize],
    noise_q: &[(usize, f64)],
    direction: &[f64],
    eps: f64,
) -> Result<f64, StatError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(StatError::Invalid(format!("noise mass {eps} must lie in (0, 1)")));
    }
    if direction.iter().any(|&w| w.is_nan() || w <= 0.0) {
        return Err(StatError::Invalid("direction weights must be positive".into()));
    }
    let is_noise = |k: usize| noise_q.iter().any(|n| n.0 == k);
    let noise_w: f64 = (0..direction.len()).filter(|&k| is_noise(k)).map(|k| direction[k]).sum();
    let rest_w: f64 = direction.iter().sum::<f64>() - noise_w;
    let probs = direction
        .iter()
        .enumerate()
        .map(|(k, &w)| if is_noise(k) { eps * w / noise_w } else { (1.0 - eps) * w / rest_w })
        .collect();
    let inputs = VarianceInputs::new(probs, candidates.to_vec(), noise_q.to_vec())?;
    Ok(corollary1_gap(&inputs))
}

#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub n: usize,
    pub reps: usize,
    /// Sample covariance of `sqrt(n) (theta_hat - theta*)`.
    pub empirical: DMatrix<f64>,
    /// `[E_x grad M grad^T]^{-1}`.
    pub analytic: DMatrix<f64>,
    /// `[E_x grad M_mle grad^T]^{-1}`.
    pub analytic_mle: DMatrix<f64>,
    pub max_diag_rel_error: f64,
}

/// Number of fresh inputs averaged in the analytic expectation.
pub const ANALYTIC_DRAWS: usize = 10_000;
const NEWTON_ITERATIONS: usize = 30;

/// Candidates used by the experiment: the `count` non-reference classes with
/// the largest true score, which depend on `x` only.
fn true_candidates(spec: &SyntheticSpec, x: &[f64], count: usize) -> Vec<usize> {
    let r = spec.num_classes() - 1;
    let s: Vec<f64> = (0..r).map(|k| crate::matrix::dense_dot(spec.weights.row(k), x)).collect();
    let mut ids: Vec<usize> = (0..r).collect();
    ids.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    ids.truncate(count);
    ids
}

fn precision(spec: &SyntheticSpec, candidates: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>), StatError> {
    let (r, d) = (spec.num_classes() - 1, spec.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(r * d, r * d);
    let mut b = DMatrix::zeros(r * d, r * d);
    let truth = super::TrueLogOdds { weights: spec.weights.clone() };
    for _ in 0..ANALYTIC_DRAWS {
        let x = draw_x(d, &mut rng);
        let p = truth.probabilities(&x);
        let m = variance_matrix_m(&VarianceInputs::uniform_noise(p.clone(), true_candidates(spec, &x, candidates))?);
        let mle = variance_matrix_mle(&p);
        let xx = DMatrix::from_fn(d, d, |i, j| x[i] * x[j]);
        a += m.kronecker(&xx);
        b += mle.kronecker(&xx);
    }
    let scale = 1.0 / ANALYTIC_DRAWS as f64;
    Ok((a * scale, b * scale))
}

// Objective, gradient and Hessian of the empirical estimator with the noise
// expectation enumerated, parameters `theta[k * d + i]` for non-reference k.
fn objective_terms(
    theta: &[f64],
    xs: &[Vec<f64>],
    ys: &[usize],
    cands: &[Vec<usize>],
    r: usize,
) -> (f64, Vec<f64>, DMatrix<f64>) {
    let d = xs[0].len();
    let mut f = 0.0;
    let mut g = vec![0.0; r * d];
    let mut h = DMatrix::zeros(r * d, r * d);
    let mut vars: Vec<usize> = Vec::new();
    let mut logits: Vec<f64> = Vec::new();
    for ((x, &y), c) in xs.iter().zip(ys).zip(cands) {
        let s: Vec<f64> = (0..r).map(|k| crate::matrix::dense_dot(&theta[k * d..(k + 1) * d], x)).collect();
        let noises: Vec<usize> = (0..r).filter(|k| !c.contains(k)).collect();
        let q = 1.0 / noises.len() as f64;
        let covered = y == r || c.contains(&y);
        let terms: Vec<(f64, usize)> = if covered {
            noises.iter().map(|&j| (q, j)).collect()
        } else {
            vec![(1.0, y)]
        };
        for (weight, j) in terms {
            vars.clear();
            vars.extend_from_slice(c);
            vars.push(j);
            logits.clear();
            logits.extend(c.iter().map(|&k| s[k]));
            logits.push(s[j] - q.ln());
            logits.push(0.0);
            let w = softmax(&logits);
            let s_y = if y == r { 0.0 } else { s[y] };
            f += weight * (s_y - crate::matrix::log_sum_exp(&logits));
            for (ai, &ka) in vars.iter().enumerate() {
                let coef = f64::from(u8::from(ka == y)) - w[ai];
                for i in 0..d {
                    g[ka * d + i] += weight * coef * x[i];
                }
                for (bi, &kb) in vars.iter().enumerate() {
                    let hs = if ai == bi { w[ai] - w[ai] * w[ai] } else { -w[ai] * w[bi] };
                    for i in 0..d {
                        for jj in 0..d {
                            h[(ka * d + i, kb * d + jj)] -= weight * hs * x[i] * x[jj];
                        }
                    }
                }
            }
        }
    }
    (f, g, h)
}

fn fit_exact(
    xs: &[Vec<f64>],
    ys: &[usize],
    cands: &[Vec<usize>],
    r: usize,
) -> Result<Vec<f64>, StatError> {
    let d = xs[0].len();
    let mut theta = vec![0.0; r * d];
    for _ in 0..NEWTON_ITERATIONS {
        let (_, g, h) = objective_terms(&theta, xs, ys, cands, r);
        let step = (-h).cholesky().ok_or(StatError::Singular)?.solve(&DMatrix::from_vec(r * d, 1, g));
        let mut size = 0.0f64;
        for (t, s) in theta.iter_mut().zip(step.iter()) {
            *t += s;
            size = size.max(s.abs());
        }
        if size < 1e-12 {
            break;
        }
    }
    Ok(theta)
}

/// Repeats generate-and-fit `reps` times at sample size `spec.n` and compares
/// the sample covariance of `sqrt(n)(theta_hat - theta*)` with the analytic one.
///
/// The fit is the exact maximizer of the empirical objective (noise expectation
/// enumerated, Newton's method), so the only randomness is the sample itself.
/// Candidates are the `candidates` classes with the largest true score and the
/// noise law is uniform over the rest.
pub fn estimator_variance_mc(
    spec: &SyntheticSpec,
    candidates: usize,
    reps: usize,
    seed: u64,
) -> Result<VarianceReport, StatError> {
    let (k, d, n) = (spec.num_classes(), spec.dim(), spec.n);
    if k < 3 || candidates == 0 || candidates + 1 >= k || reps < 2 || n == 0 {
        return Err(StatError::Invalid("need K >= 3, 0 < candidates < K - 1, reps >= 2, n > 0".into()));
    }
    let r = k - 1;
    let truth = super::TrueLogOdds { weights: spec.weights.clone() };
    let theta_star: Vec<f64> = (0..r).flat_map(|c| spec.weights.row(c).to_vec()).collect();
    let deviations: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| draw_x(d, &mut rng)).collect();
            let ys: Vec<usize> = xs.iter().map(|x| draw_label(&truth.probabilities(x), &mut rng)).collect();
            let cands: Vec<Vec<usize>> = xs.iter().map(|x| true_candidates(spec, x, candidates)).collect();
            let theta = fit_exact(&xs, &ys, &cands, r)?;
            Ok(theta.iter().zip(&theta_star).map(|(a, b)| (a - b) * (n as f64).sqrt()).collect())
        })
        .collect::<Result<_, StatError>>()?;

    let dim = r * d;
    let mean: Vec<f64> = (0..dim).map(|i| deviations.iter().map(|v| v[i]).sum::<f64>() / reps as f64).collect();
    let empirical = DMatrix::from_fn(dim, dim, |i, j| {
        deviations.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / (reps - 1) as f64
    });
    let (a, b) = precision(spec, candidates, seed ^ 0x5bd1_e995)?;
    let analytic = a.try_inverse().ok_or(StatError::Singular)?;
    let analytic_mle = b.try_inverse().ok_or(StatError::Singular)?;
    let max_diag_rel_error = (0..dim)
        .map(|i| ((empirical[(i, i)] - analytic[(i, i)]) / analytic[(i, i)]).abs())
        .fold(0.0, f64::max);
    Ok(VarianceReport { n, reps, empirical, analytic, analytic_mle, max_diag_rel_error })
}
