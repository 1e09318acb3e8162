use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde_json::json;

use super::{Embedding, EmbeddingError, FeatureMatrix, Method};

/// Projects mean-centred features onto the two leading eigenvectors of the
/// sample covariance. Each axis is signed so its largest-magnitude loading is
/// positive. With a single feature column the second coordinate is zero.
pub fn pca_2d(features: &FeatureMatrix) -> Result<Embedding, EmbeddingError> {
    let n = features.len();
    if n < 3 {
        return Err(EmbeddingError::TooFewPoints { method: "PCA", needed: 3, got: n });
    }
    let d = features.dim();
    let mut centered = DMatrix::from_fn(n, d, |i, j| features.vectors[i][j]);
    for j in 0..d {
        let mean = centered.column(j).sum() / n as f64;
        centered.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total_variance = cov.trace();
    if total_variance <= 0.0 {
        return Err(EmbeddingError::ZeroVariance);
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut axes = Vec::with_capacity(2);
    let mut eigenvalues = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        axes.push(v);
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
    }

    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let row = centered.row(i);
        let x = row.dot(&axes[0].transpose());
        let y = axes.get(1).map(|a| row.dot(&a.transpose())).unwrap_or(0.0);
        points.push([x, y]);
    }

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("eigenvalue_1".to_string(), eigenvalues[0]);
    diagnostics.insert("eigenvalue_2".to_string(), eigenvalues.get(1).copied().unwrap_or(0.0));
    diagnostics.insert("explained_variance_ratio".to_string(), eigenvalues.iter().sum::<f64>() / total_variance);

    let mut params = BTreeMap::new();
    params.insert("components".to_string(), json!(2));

    Ok(Embedding { method: Method::Pca, params, ids: features.sentence_ids.clone(), points, diagnostics })
}
