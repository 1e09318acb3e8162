//! Pseudo-log-likelihood scoring.
//!
//! A sentence's PLL is the mean, over token positions, of the log-probability
//! the model assigns to the token when that position alone is masked. Models
//! plug in through [`TokenLogProbProvider`]; anything that can answer a single
//! masked-position query implements [`MaskedTokenModel`] and gets the provider
//! for free.

mod ngram;
mod remote;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Corpus;

pub use ngram::{NgramMaskedModel, BOS, EOS, UNK};
pub use remote::{remote_score, RemoteConfig, RemoteScorer, ScoreRequest, ScoreResponse, ScoreResult, TOKEN_LOGPROBS_PATH};
pub use tokenize::{is_punctuation, is_punctuation_token, tokenize, TokenSequence};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScoringError {
    #[error("text is empty after trimming")]
    EmptyText,
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("provider failed{}: {cause}", .position.map(|p| format!(" at position {p}")).unwrap_or_default())]
    Provider { position: Option<usize>, cause: String },
    #[error("protocol error for sentence {sentence:?}: {reason}")]
    Protocol { sentence: String, reason: String },
    #[error("scorer endpoint {endpoint} unreachable: {cause}")]
    Transport { endpoint: String, cause: String },
    #[error("model {0} cannot score new text")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub log_prob: f64,
}

/// Mean token log-probability plus the per-token values it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pll {
    pub pll: f64,
    pub token_scores: Vec<TokenScore>,
}

impl Pll {
    /// Checks every log-probability and averages them.
    pub fn from_token_scores(token_scores: Vec<TokenScore>) -> Result<Self, String> {
        if token_scores.is_empty() {
            return Err("no token scores".into());
        }
        if let Some((i, bad)) = token_scores
            .iter()
            .enumerate()
            .find(|(_, t)| !t.log_prob.is_finite() || t.log_prob > 0.0)
        {
            return Err(format!("log-prob {} at position {i} is not a finite value <= 0", bad.log_prob));
        }
        let pll = token_scores.iter().map(|t| t.log_prob).sum::<f64>() / token_scores.len() as f64;
        Ok(Pll { pll, token_scores })
    }

    pub fn into_sentence_score(self, sentence_id: impl Into<String>, model_id: impl Into<String>) -> SentenceScore {
        SentenceScore { sentence_id: sentence_id.into(), model_id: model_id.into(), pll: self.pll, token_scores: self.token_scores }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub sentence_id: String,
    pub model_id: String,
    pub pll: f64,
    pub token_scores: Vec<TokenScore>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PllOptions {
    /// Leave punctuation-only tokens out of the mean.
    #[serde(default)]
    pub exclude_punctuation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Parallel,
    Serial,
}

/// Source of per-token masked log-probabilities for whole sentences.
pub trait TokenLogProbProvider: Send + Sync {
    /// One token-score list per input text, in input order. All-or-nothing.
    fn token_log_probs(&self, texts: &[&str]) -> Result<Vec<Vec<TokenScore>>, ScoringError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }

    /// Number of sentences handed to one `token_log_probs` call by [`score_corpus`].
    fn batch_size(&self) -> usize {
        1
    }
}

/// A model that answers "log P(token at `position` | everything else)".
pub trait MaskedTokenModel: Send + Sync {
    fn masked_log_prob(&self, tokens: &TokenSequence, position: usize) -> Result<f64, ScoringError>;
}

impl<M: MaskedTokenModel> TokenLogProbProvider for M {
    fn token_log_probs(&self, texts: &[&str]) -> Result<Vec<Vec<TokenScore>>, ScoringError> {
        texts
            .iter()
            .map(|text| {
                let seq = tokenize(text)?;
                (0..seq.len())
                    .map(|i| {
                        let log_prob = self.masked_log_prob(&seq, i)?;
                        if !log_prob.is_finite() || log_prob > 0.0 {
                            return Err(ScoringError::Provider {
                                position: Some(i),
                                cause: format!("invalid log-probability {log_prob}"),
                            });
                        }
                        Ok(TokenScore { token: seq.tokens[i].clone(), log_prob })
                    })
                    .collect()
            })
            .collect()
    }

    fn batch_size(&self) -> usize {
        32
    }
}

fn finish_pll(text: &str, mut token_scores: Vec<TokenScore>, options: &PllOptions) -> Result<Pll, ScoringError> {
    if options.exclude_punctuation {
        token_scores.retain(|t| !is_punctuation_token(&t.token));
    }
    Pll::from_token_scores(token_scores)
        .map_err(|reason| ScoringError::Protocol { sentence: text.to_string(), reason })
}

/// Scores one sentence with default options.
pub fn pll_score(provider: &dyn TokenLogProbProvider, text: &str) -> Result<Pll, ScoringError> {
    pll_score_with(provider, text, &PllOptions::default())
}

pub fn pll_score_with(provider: &dyn TokenLogProbProvider, text: &str, options: &PllOptions) -> Result<Pll, ScoringError> {
    if text.trim().is_empty() {
        return Err(ScoringError::EmptyText);
    }
    let mut results = provider.token_log_probs(&[text])?;
    if results.len() != 1 {
        return Err(ScoringError::Protocol {
            sentence: text.to_string(),
            reason: format!("expected 1 result, got {}", results.len()),
        });
    }
    finish_pll(text, results.pop().expect("one result"), options)
}

/// Scores many texts, honouring the provider's batch size and concurrency.
/// Returns per-text results in input order.
pub fn pll_scores(
    provider: &dyn TokenLogProbProvider,
    texts: &[&str],
    options: &PllOptions,
) -> Vec<Result<Pll, ScoringError>> {
    let batch = provider.batch_size().max(1);
    let run = |chunk: &[&str]| -> Vec<Result<Pll, ScoringError>> {
        match provider.token_log_probs(chunk) {
            Ok(lists) if lists.len() == chunk.len() => {
                chunk.iter().zip(lists).map(|(text, list)| finish_pll(text, list, options)).collect()
            }
            Ok(lists) => {
                let err = ScoringError::Protocol {
                    sentence: chunk[0].to_string(),
                    reason: format!("expected {} results, got {}", chunk.len(), lists.len()),
                };
                vec![Err(err); chunk.len()]
            }
            Err(err) => vec![Err(err); chunk.len()],
        }
    };
    match provider.concurrency() {
        Concurrency::Parallel => texts.par_chunks(batch).flat_map_iter(run).collect(),
        Concurrency::Serial => texts.chunks(batch).flat_map(run).collect(),
    }
}

/// Where a model's scores come from; kept with the scores so probes can be
/// scored later by the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSource {
    Builtin {
        alpha: f64,
        #[serde(default)]
        options: PllOptions,
    },
    Remote {
        endpoint: String,
        #[serde(default)]
        options: PllOptions,
    },
    /// Precomputed scores with no live model behind them.
    Frozen,
}

impl ModelSource {
    pub fn options(&self) -> PllOptions {
        match self {
            ModelSource::Builtin { options, .. } | ModelSource::Remote { options, .. } => *options,
            ModelSource::Frozen => PllOptions::default(),
        }
    }
}

/// All scores of one model. Sentences still waiting for a score sit in `pending`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model_id: String,
    pub source: ModelSource,
    pub scores: BTreeMap<String, SentenceScore>,
    #[serde(default)]
    pub pending: BTreeSet<String>,
}

impl ModelScores {
    pub fn is_partial(&self) -> bool {
        !self.pending.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("model {0} is already registered")]
    DuplicateModel(String),
    #[error("model {model} scores unknown sentence {sentence}")]
    UnknownSentence { model: String, sentence: String },
    #[error("model {model} is missing sentences without marking them pending: {}", .missing.join(", "))]
    Incomplete { model: String, missing: Vec<String> },
}

/// Per-sentence, per-model scores. Models keep registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    models: Vec<ModelScores>,
}

impl ScoreMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn model_ids(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.model_id.as_str()).collect()
    }

    pub fn models(&self) -> &[ModelScores] {
        &self.models
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelScores> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn contains_model(&self, model_id: &str) -> bool {
        self.model(model_id).is_some()
    }

    pub fn get(&self, sentence_id: &str, model_id: &str) -> Option<&SentenceScore> {
        self.model(model_id)?.scores.get(sentence_id)
    }

    pub fn pll(&self, sentence_id: &str, model_id: &str) -> Option<f64> {
        self.get(sentence_id, model_id).map(|s| s.pll)
    }

    pub fn insert(&mut self, fragment: ModelScores) -> Result<(), MatrixError> {
        if self.contains_model(&fragment.model_id) {
            return Err(MatrixError::DuplicateModel(fragment.model_id));
        }
        self.models.push(fragment);
        Ok(())
    }

    pub fn remove(&mut self, model_id: &str) -> Option<ModelScores> {
        let pos = self.models.iter().position(|m| m.model_id == model_id)?;
        Some(self.models.remove(pos))
    }

    /// Models whose every sentence is scored.
    pub fn complete_model_ids(&self) -> Vec<&str> {
        self.models.iter().filter(|m| !m.is_partial()).map(|m| m.model_id.as_str()).collect()
    }

    /// Every model either covers exactly the corpus or lists what is pending.
    pub fn check_against(&self, corpus: &Corpus) -> Result<(), MatrixError> {
        for m in &self.models {
            if let Some(unknown) = m.scores.keys().chain(m.pending.iter()).find(|id| !corpus.contains(id)) {
                return Err(MatrixError::UnknownSentence { model: m.model_id.clone(), sentence: unknown.clone() });
            }
            let missing: Vec<String> = corpus
                .ids()
                .filter(|id| !m.scores.contains_key(*id) && !m.pending.contains(*id))
                .map(str::to_string)
                .collect();
            if !missing.is_empty() {
                return Err(MatrixError::Incomplete { model: m.model_id.clone(), missing });
            }
        }
        Ok(())
    }

    /// Applies `f` to every PLL of one model (token log-probs are left alone).
    pub fn map_model_plls(&self, model_id: &str, f: impl Fn(f64) -> f64) -> ScoreMatrix {
        let mut out = self.clone();
        if let Some(m) = out.models.iter_mut().find(|m| m.model_id == model_id) {
            for s in m.scores.values_mut() {
                s.pll = f(s.pll);
            }
        }
        out
    }
}

/// Scoring a corpus failed; nothing was committed.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("scoring model {model_id} failed for {} of {} sentences (first: {cause})", .failed.len(), .failed.len() + .completed.len())]
pub struct ScoreCorpusError {
    pub model_id: String,
    pub completed: Vec<String>,
    pub failed: Vec<(String, String)>,
    pub cause: ScoringError,
}

/// Scores every record of `corpus`, producing one model's fragment of the matrix.
pub fn score_corpus(
    provider: &dyn TokenLogProbProvider,
    corpus: &Corpus,
    model_id: &str,
    source: ModelSource,
) -> Result<ModelScores, Box<ScoreCorpusError>> {
    let options = source.options();
    let texts = corpus.texts();
    let results = pll_scores(provider, &texts, &options);

    let mut scores = BTreeMap::new();
    let mut completed = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (record, result) in corpus.records().iter().zip(results) {
        match result {
            Ok(pll) => {
                completed.push(record.id.clone());
                scores.insert(record.id.clone(), pll.into_sentence_score(&record.id, model_id));
            }
            Err(err) => {
                failed.push((record.id.clone(), err.to_string()));
                first_error.get_or_insert(err);
            }
        }
    }
    if let Some(cause) = first_error {
        return Err(Box::new(ScoreCorpusError { model_id: model_id.to_string(), completed, failed, cause }));
    }
    Ok(ModelScores { model_id: model_id.to_string(), source, scores, pending: BTreeSet::new() })
}

/// On-disk score file: one model, one entry per sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub model_id: String,
    pub scores: Vec<ScoreFileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFileEntry {
    pub id: String,
    pub pll: f64,
    pub token_log_probs: Vec<f64>,
}

impl ScoreFile {
    /// Entries follow corpus order when a corpus is given, id order otherwise.
    pub fn from_model_scores(scores: &ModelScores, corpus: Option<&Corpus>) -> Self {
        let entry = |s: &SentenceScore| ScoreFileEntry {
            id: s.sentence_id.clone(),
            pll: s.pll,
            token_log_probs: s.token_scores.iter().map(|t| t.log_prob).collect(),
        };
        let entries = match corpus {
            Some(c) => c.ids().filter_map(|id| scores.scores.get(id)).map(entry).collect(),
            None => scores.scores.values().map(entry).collect(),
        };
        ScoreFile { model_id: scores.model_id.clone(), scores: entries }
    }

    /// Token strings are not part of the file format and come back empty.
    pub fn into_model_scores(self, source: ModelSource) -> ModelScores {
        let model_id = self.model_id;
        let scores = self
            .scores
            .into_iter()
            .map(|e| {
                let score = SentenceScore {
                    sentence_id: e.id.clone(),
                    model_id: model_id.clone(),
                    pll: e.pll,
                    token_scores: e
                        .token_log_probs
                        .into_iter()
                        .map(|log_prob| TokenScore { token: String::new(), log_prob })
                        .collect(),
                };
                (e.id, score)
            })
            .collect();
        ModelScores { model_id, source, scores, pending: BTreeSet::new() }
    }
}
