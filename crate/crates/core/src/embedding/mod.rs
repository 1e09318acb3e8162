//! Two-dimensional sentence embeddings.
//!
//! Features default to each sentence's vector of PLL scores across models.
//! [`pca_2d`] and [`tsne_2d`] reduce them to 2-D; precomputed coordinates can
//! be loaded as a `user` embedding through the same JSON schema.

mod pca;
mod trust;
mod tsne;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::Corpus;
use crate::scoring::ScoreMatrix;

pub use pca::pca_2d;
pub use trust::trustworthiness;
pub use tsne::{
    joint_probabilities, kl_divergence, perplexity_sigma_search, tsne_2d, SigmaSearch, TsneParams,
    MAX_SIGMA_ITERATIONS, PERPLEXITY_TOLERANCE,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("need at least {needed} points for {method}, got {got}{}", if *.method == "t-SNE" { "; use PCA for small inputs" } else { "" })]
    TooFewPoints { method: &'static str, needed: usize, got: usize },
    #[error("feature rows have inconsistent length: row {row} has {got}, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("feature matrix has no columns")]
    NoColumns,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("features have zero variance")]
    ZeroVariance,
    #[error("all distances are zero")]
    ZeroDistances,
    #[error("perplexity must be positive and finite, got {0}")]
    InvalidPerplexity(f64),
    #[error("non-finite gradient between points {i} and {j}")]
    NonFiniteGradient { i: usize, j: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("embedding ids do not match the corpus: {0}")]
    IdMismatch(String),
    #[error("no complete model scores to build features from")]
    NoModels,
}

/// Row-per-sentence feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub sentence_ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(sentence_ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, EmbeddingError> {
        if sentence_ids.len() != vectors.len() {
            return Err(EmbeddingError::IdMismatch(format!("{} ids for {} rows", sentence_ids.len(), vectors.len())));
        }
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        if dim == 0 && !vectors.is_empty() {
            return Err(EmbeddingError::NoColumns);
        }
        for (row, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(EmbeddingError::Ragged { row, got: v.len(), expected: dim });
            }
            if let Some(col) = v.iter().position(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite { row, col });
            }
        }
        Ok(FeatureMatrix { sentence_ids, vectors })
    }

    /// PLL vectors across the given models, in corpus order.
    pub fn from_scores(matrix: &ScoreMatrix, corpus: &Corpus, model_ids: &[&str]) -> Result<Self, EmbeddingError> {
        if model_ids.is_empty() {
            return Err(EmbeddingError::NoModels);
        }
        let mut ids = Vec::with_capacity(corpus.len());
        let mut vectors = Vec::with_capacity(corpus.len());
        for id in corpus.ids() {
            let row: Option<Vec<f64>> = model_ids.iter().map(|m| matrix.pll(id, m)).collect();
            let row = row.ok_or_else(|| EmbeddingError::IdMismatch(format!("sentence {id} is not scored by every model")))?;
            ids.push(id.to_string());
            vectors.push(row);
        }
        FeatureMatrix::new(ids, vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map(Vec::len).unwrap_or(0)
    }

    /// Z-scores every column; constant columns become zero.
    pub fn standardized(&self) -> FeatureMatrix {
        let n = self.len() as f64;
        let mut out = self.clone();
        for c in 0..self.dim() {
            let mean = self.vectors.iter().map(|v| v[c]).sum::<f64>() / n;
            let var = self.vectors.iter().map(|v| (v[c] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            for row in &mut out.vectors {
                row[c] = if sd > 0.0 { (row[c] - mean) / sd } else { 0.0 };
            }
        }
        out
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        self.vectors[i].iter().zip(&self.vectors[j]).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Tsne,
    User,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Tsne => "tsne",
            Method::User => "user",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = EmbeddingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pca" => Ok(Method::Pca),
            "tsne" | "t-sne" => Ok(Method::Tsne),
            "user" => Ok(Method::User),
            other => Err(EmbeddingError::InvalidParameter(format!("unknown method {other}"))),
        }
    }
}

/// Import/export schema: `{"method", "params", "ids", "points"}` plus optional diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub method: Method,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    pub ids: Vec<String>,
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
}

impl Embedding {
    /// Precomputed coordinates supplied by the user.
    pub fn user(ids: Vec<String>, points: Vec<[f64; 2]>) -> Result<Self, EmbeddingError> {
        let e = Embedding { method: Method::User, params: BTreeMap::new(), ids, points, diagnostics: BTreeMap::new() };
        e.check_shape()?;
        Ok(e)
    }

    pub fn check_shape(&self) -> Result<(), EmbeddingError> {
        if self.ids.len() != self.points.len() {
            return Err(EmbeddingError::IdMismatch(format!("{} ids for {} points", self.ids.len(), self.points.len())));
        }
        if let Some(row) = self.points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(EmbeddingError::NonFinite { row, col: 0 });
        }
        Ok(())
    }

    /// The id set must equal the corpus ids exactly.
    pub fn check_against(&self, corpus: &Corpus) -> Result<(), EmbeddingError> {
        self.check_shape()?;
        let ids: BTreeSet<&str> = self.ids.iter().map(String::as_str).collect();
        if ids.len() != self.ids.len() {
            return Err(EmbeddingError::IdMismatch("duplicate ids".into()));
        }
        if let Some(extra) = ids.iter().find(|id| !corpus.contains(id)) {
            return Err(EmbeddingError::IdMismatch(format!("unknown id {extra}")));
        }
        if let Some(missing) = corpus.ids().find(|id| !ids.contains(id)) {
            return Err(EmbeddingError::IdMismatch(format!("missing id {missing}")));
        }
        Ok(())
    }

    pub fn point(&self, id: &str) -> Option<[f64; 2]> {
        self.ids.iter().position(|x| x == id).map(|i| self.points[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("embedding serializes")
    }
}
