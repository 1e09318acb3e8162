//! Client for remote token-logprob servers.
//!
//! `POST {endpoint}/v1/token-logprobs` with `{"model", "sentences"}`; the
//! server tokenizes and returns `{"results": [{"tokens", "log_probs"}]}` in
//! request order.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Concurrency, PllOptions, ScoringError, SentenceScore, TokenLogProbProvider, TokenScore};

pub const TOKEN_LOGPROBS_PATH: &str = "/v1/token-logprobs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub timeout: Duration,
    pub retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            batch_size: 16,
            timeout: Duration::from_secs(30),
            retries: 2,
            backoff: Duration::from_millis(200),
        }
    }

    pub fn url(&self) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), TOKEN_LOGPROBS_PATH)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub tokens: Vec<String>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<ScoreResult>,
}

#[derive(Debug, Clone)]
pub struct RemoteScorer {
    config: RemoteConfig,
    model_id: String,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig, model_id: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteScorer { config, model_id: model_id.into(), agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post_once(&self, request: &ScoreRequest) -> Result<ScoreResponse, Attempt> {
        let mut response = self
            .agent
            .post(&self.config.url())
            .send_json(request)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        response
            .body_mut()
            .read_json::<ScoreResponse>()
            .map_err(|e| Attempt::Malformed(e.to_string()))
    }

    fn post_batch(&self, sentences: &[&str]) -> Result<Vec<Vec<TokenScore>>, ScoringError> {
        let request = ScoreRequest {
            model: self.model_id.clone(),
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
        };
        let mut attempt = 0;
        let response = loop {
            match self.post_once(&request) {
                Ok(response) => break response,
                Err(Attempt::Retry(_)) if attempt < self.config.retries => {
                    thread::sleep(self.config.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
                Err(Attempt::Retry(cause)) | Err(Attempt::Fatal(cause)) => {
                    return Err(ScoringError::Transport { endpoint: self.config.endpoint.clone(), cause });
                }
                Err(Attempt::Malformed(reason)) => {
                    return Err(ScoringError::Protocol { sentence: sentences[0].to_string(), reason });
                }
            }
        };
        check_response(sentences, response)
    }
}

enum Attempt {
    Retry(String),
    Fatal(String),
    Malformed(String),
}

/// Validates a server response against the sentences it answers.
pub(crate) fn check_response(sentences: &[&str], response: ScoreResponse) -> Result<Vec<Vec<TokenScore>>, ScoringError> {
    if response.results.len() != sentences.len() {
        return Err(ScoringError::Protocol {
            sentence: sentences.get(response.results.len()).or(sentences.last()).unwrap_or(&"").to_string(),
            reason: format!("expected {} results, got {}", sentences.len(), response.results.len()),
        });
    }
    sentences
        .iter()
        .zip(response.results)
        .map(|(sentence, result)| {
            let fail = |reason: String| ScoringError::Protocol { sentence: sentence.to_string(), reason };
            if result.tokens.len() != result.log_probs.len() {
                return Err(fail(format!(
                    "{} tokens but {} log-probs",
                    result.tokens.len(),
                    result.log_probs.len()
                )));
            }
            if result.tokens.is_empty() {
                return Err(fail("no tokens".into()));
            }
            if let Some(bad) = result.log_probs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
                return Err(fail(format!("log-prob {bad} is not a finite value <= 0")));
            }
            Ok(result
                .tokens
                .into_iter()
                .zip(result.log_probs)
                .map(|(token, log_prob)| TokenScore { token, log_prob })
                .collect())
        })
        .collect()
}

impl TokenLogProbProvider for RemoteScorer {
    fn token_log_probs(&self, texts: &[&str]) -> Result<Vec<Vec<TokenScore>>, ScoringError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            out.extend(self.post_batch(chunk)?);
        }
        Ok(out)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size.max(1)
    }
}

/// Scores `texts` against a remote server; PLLs are computed here as the mean
/// of the served log-probs. Results follow input order; any failure fails the call.
pub fn remote_score(config: &RemoteConfig, model_id: &str, texts: &[&str]) -> Result<Vec<SentenceScore>, ScoringError> {
    let scorer = RemoteScorer::new(config.clone(), model_id);
    let lists = scorer.token_log_probs(texts)?;
    let options = PllOptions::default();
    texts
        .iter()
        .zip(lists)
        .enumerate()
        .map(|(i, (text, list))| {
            super::finish_pll(text, list, &options).map(|p| p.into_sentence_score(i.to_string(), model_id))
        })
        .collect()
}
