use super::{Embedding, EmbeddingError, FeatureMatrix};

fn neighbour_order(n: usize, i: usize, dist: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(j), j)).collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().map(|(_, j)| j).collect()
}

/// Trustworthiness of an embedding: `1 − 2/(nk(2n−3k−1)) Σᵢ Σ_{j∈Uₖ(i)} (r(i,j) − k)`,
/// where `Uₖ(i)` are the embedded k-nearest neighbours of `i` that are not among
/// its original k-nearest, and `r` is the original-space rank. Distance ties
/// are broken by index.
pub fn trustworthiness(features: &FeatureMatrix, embedding: &Embedding, k: usize) -> Result<f64, EmbeddingError> {
    let n = features.len();
    if embedding.points.len() != n {
        return Err(EmbeddingError::IdMismatch(format!("{} points for {n} feature rows", embedding.points.len())));
    }
    if k == 0 || k >= n {
        return Err(EmbeddingError::InvalidParameter(format!("k = {k} must be in 1..{n}")));
    }
    // When every other point is a neighbour nothing can intrude.
    if k == n - 1 {
        return Ok(1.0);
    }
    if 2 * k >= n {
        return Err(EmbeddingError::InvalidParameter(format!("k = {k} must be below n/2 = {}", n as f64 / 2.0)));
    }

    let mut penalty = 0usize;
    for i in 0..n {
        let original = neighbour_order(n, i, |j| features.squared_distance(i, j));
        let mut rank = vec![0usize; n];
        for (r, &j) in original.iter().enumerate() {
            rank[j] = r + 1;
        }
        let p = embedding.points[i];
        let embedded = neighbour_order(n, i, |j| {
            let q = embedding.points[j];
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
        });
        for &j in &embedded[..k] {
            if rank[j] > k {
                penalty += rank[j] - k;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty as f64)
}
