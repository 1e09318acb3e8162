//! Exact t-SNE.
//!
//! Per-point Gaussian bandwidths come from an entropy-matching search, the
//! conditional affinities are symmetrized into a joint distribution `P`, and
//! a Student-t (one degree of freedom) layout is fitted by gradient descent on
//! `KL(P‖Q)` with early exaggeration, momentum and per-coordinate gains. All
//! pairwise terms are computed exactly, so cost is O(n²) per iteration.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{pca_2d, Embedding, EmbeddingError, FeatureMatrix, Method};

/// Allowed gap between achieved and target entropy, in bits.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-4;
pub const MAX_SIGMA_ITERATIONS: usize = 50;
const INIT_STD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearch {
    pub sigma: f64,
    pub entropy_bits: f64,
    pub iterations: usize,
    /// The target entropy was not reached within the iteration budget.
    pub clamped: bool,
    /// `P(j|i)` for each neighbour, in input order.
    pub probabilities: Vec<f64>,
}

fn conditional(sq_distances: &[f64], min_sq: f64, sigma: f64) -> (Vec<f64>, f64) {
    let scale = 2.0 * sigma * sigma;
    let weights: Vec<f64> = sq_distances.iter().map(|d| (-(d - min_sq) / scale).exp()).collect();
    let z: f64 = weights.iter().sum();
    let p: Vec<f64> = weights.into_iter().map(|w| w / z).collect();
    let h = -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>();
    (p, h)
}

/// Finds σ such that the entropy of `P(j|i) ∝ exp(−d²/2σ²)` is `log2(perplexity)` bits.
///
/// Bisects on `ln σ` over sixty nats around the largest distance. If the
/// target is not met within [`MAX_SIGMA_ITERATIONS`] the last midpoint is
/// returned with `clamped` set.
pub fn perplexity_sigma_search(distances: &[f64], perplexity: f64) -> Result<SigmaSearch, EmbeddingError> {
    if distances.len() < 2 {
        return Err(EmbeddingError::InvalidParameter(format!("need at least 2 neighbours, got {}", distances.len())));
    }
    if !(perplexity > 0.0 && perplexity.is_finite()) {
        return Err(EmbeddingError::InvalidPerplexity(perplexity));
    }
    if let Some(bad) = distances.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(EmbeddingError::InvalidParameter(format!("invalid distance {bad}")));
    }
    let max = distances.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(EmbeddingError::ZeroDistances);
    }
    let sq: Vec<f64> = distances.iter().map(|d| d * d).collect();
    let min_sq = sq.iter().copied().fold(f64::INFINITY, f64::min);
    let target = perplexity.log2();

    let (mut lo, mut hi) = (max.ln() - 30.0, max.ln() + 30.0);
    let mut last = None;
    for iteration in 1..=MAX_SIGMA_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let sigma = mid.exp();
        let (p, h) = conditional(&sq, min_sq, sigma);
        if (h - target).abs() < PERPLEXITY_TOLERANCE {
            return Ok(SigmaSearch { sigma, entropy_bits: h, iterations: iteration, clamped: false, probabilities: p });
        }
        if h > target {
            hi = mid;
        } else {
            lo = mid;
        }
        last = Some((sigma, h, p));
    }
    let (sigma, entropy_bits, probabilities) = last.expect("at least one iteration");
    Ok(SigmaSearch { sigma, entropy_bits, iterations: MAX_SIGMA_ITERATIONS, clamped: true, probabilities })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

/// Symmetrized joint affinities `(P(j|i) + P(i|j)) / 2n` as a dense row-major
/// matrix, plus the number of rows whose σ search clamped.
pub fn joint_probabilities(features: &FeatureMatrix, perplexity: f64) -> Result<(Vec<f64>, usize), EmbeddingError> {
    let n = features.len();
    let rows: Vec<Result<SigmaSearch, EmbeddingError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> =
                (0..n).filter(|&j| j != i).map(|j| features.squared_distance(i, j).sqrt()).collect();
            perplexity_sigma_search(&d, perplexity)
        })
        .collect();

    let mut conditional = vec![0.0; n * n];
    let mut clamped = 0;
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        clamped += row.clamped as usize;
        let mut k = 0;
        for j in 0..n {
            if j != i {
                conditional[i * n + j] = row.probabilities[k];
                k += 1;
            }
        }
    }
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / denom;
        }
    }
    Ok((p, clamped))
}

fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let num: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
        })
        .collect();
    let z = num.chunks(n).map(|row| row.iter().sum::<f64>()).sum::<f64>();
    (num, z)
}

/// `KL(P‖Q)` for the layout `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, z) = student_t(y);
    p.iter()
        .zip(&num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

fn initial_layout(features: &FeatureMatrix, seed: u64) -> Result<Vec<[f64; 2]>, EmbeddingError> {
    let pca = pca_2d(features)?;
    let n = pca.points.len() as f64;
    let std = |c: usize| {
        let mean = pca.points.iter().map(|p| p[c]).sum::<f64>() / n;
        (pca.points.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let (s0, s1) = (std(0), std(1));
    let scale = INIT_STD / s0;
    let mut points: Vec<[f64; 2]> = pca.points.iter().map(|p| [p[0] * scale, p[1] * scale]).collect();
    // A flat second axis would never receive a gradient; seed it with noise.
    if s1 <= s0 * 1e-12 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        for p in &mut points {
            p[1] = normal.sample(&mut rng);
        }
    }
    Ok(points)
}

pub fn tsne_2d(features: &FeatureMatrix, params: &TsneParams) -> Result<Embedding, EmbeddingError> {
    let n = features.len();
    if n < 8 {
        return Err(EmbeddingError::TooFewPoints { method: "t-SNE", needed: 8, got: n });
    }
    let positive = |x: f64| x > 0.0;
    if !positive(params.learning_rate) || !positive(params.early_exaggeration) {
        return Err(EmbeddingError::InvalidParameter("learning rate and exaggeration must be positive".into()));
    }
    if !(params.perplexity > 0.0 && params.perplexity.is_finite()) {
        return Err(EmbeddingError::InvalidPerplexity(params.perplexity));
    }
    let perplexity = params.perplexity.min((n as f64 - 1.0) / 3.0);
    let (p, clamped_rows) = joint_probabilities(features, perplexity)?;
    let mut y = initial_layout(features, params.seed)?;
    let kl_initial = kl_divergence(&p, &y);

    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    for iteration in 0..params.iterations {
        let exaggeration = if iteration < params.exaggeration_iterations { params.early_exaggeration } else { 1.0 };
        let momentum = if iteration < params.momentum_switch { params.momentum } else { params.final_momentum };

        let (num, z) = student_t(&y);
        let grads: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let nij = num[i * n + j];
                    let w = (exaggeration * p[i * n + j] - nij / z) * nij;
                    g[0] += w * (y[i][0] - y[j][0]);
                    g[1] += w * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();

        if let Some(i) = grads.iter().position(|g| !g[0].is_finite() || !g[1].is_finite()) {
            let j = (0..n)
                .find(|&j| j != i && !(num[i * n + j].is_finite() && p[i * n + j].is_finite()))
                .unwrap_or(if i == 0 { 1 } else { 0 });
            return Err(EmbeddingError::NonFiniteGradient { i, j });
        }

        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grads[i][c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(MIN_GAIN);
                update[i][c] = momentum * update[i][c] - params.learning_rate * gains[i][c] * grads[i][c];
                y[i][c] += update[i][c];
            }
        }
        let mean = [y.iter().map(|p| p[0]).sum::<f64>() / n as f64, y.iter().map(|p| p[1]).sum::<f64>() / n as f64];
        for point in &mut y {
            point[0] -= mean[0];
            point[1] -= mean[1];
        }
    }
    let kl_final = kl_divergence(&p, &y);

    let mut params_out = BTreeMap::new();
    params_out.insert("perplexity".to_string(), json!(params.perplexity));
    params_out.insert("effective_perplexity".to_string(), json!(perplexity));
    params_out.insert("iterations".to_string(), json!(params.iterations));
    params_out.insert("learning_rate".to_string(), json!(params.learning_rate));
    params_out.insert("early_exaggeration".to_string(), json!(params.early_exaggeration));
    params_out.insert("exaggeration_iterations".to_string(), json!(params.exaggeration_iterations));
    params_out.insert("momentum".to_string(), json!(params.momentum));
    params_out.insert("final_momentum".to_string(), json!(params.final_momentum));
    params_out.insert("momentum_switch".to_string(), json!(params.momentum_switch));
    params_out.insert("seed".to_string(), json!(params.seed));

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("kl_initial".to_string(), kl_initial);
    diagnostics.insert("kl_final".to_string(), kl_final);
    diagnostics.insert("iterations".to_string(), params.iterations as f64);
    diagnostics.insert("clamped_rows".to_string(), clamped_rows as f64);

    Ok(Embedding { method: Method::Tsne, params: params_out, ids: features.sentence_ids.clone(), points: y, diagnostics })
}
