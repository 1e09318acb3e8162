//! Interactive analysis state: the project bundle, its filter set, probe
//! sentences and view settings.

mod filter;
mod persist;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Corpus;
use crate::embedding::Embedding;
use crate::scoring::{
    pll_score_with, ModelScores, ModelSource, NgramMaskedModel, RemoteConfig, RemoteScorer, ScoreMatrix,
    ScoringError, SentenceScore, TokenLogProbProvider,
};

pub use filter::{apply_filters, point_in_polygon, AxisFilter, FilterSet, Selection};
pub use persist::{integrity_problems, load_project, save_project, save_project_gzip, ProjectError, FORMAT_VERSION};

pub const PROBE_PREFIX: &str = "probe:";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SessionError {
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("model {0} is not scored")]
    UnscoredModel(String),
    #[error("lasso filter needs an active embedding")]
    NoActiveEmbedding,
    #[error("probe rejected: model {model}: {cause}")]
    ProbeRejected { model: String, cause: ScoringError },
    #[error("no provider for model {0}")]
    MissingProvider(String),
    #[error("unknown probe {0}")]
    UnknownProbe(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSentence {
    pub id: String,
    pub text: String,
    /// One score per project model, in model registration order.
    pub scores: Vec<SentenceScore>,
}

impl ProbeSentence {
    pub fn pll(&self, model_id: &str) -> Option<f64> {
        self.scores.iter().find(|s| s.model_id == model_id).map(|s| s.pll)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewSettings {
    /// Categories highlighted in colour.
    pub highlight: Vec<String>,
    pub split_by_group: bool,
    pub visible_columns: Vec<String>,
    /// Key into `Project::embeddings`.
    pub active_embedding: Option<String>,
}

/// Everything needed to restore an analysis session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Project {
    pub version: u32,
    pub corpus: Corpus,
    pub scores: ScoreMatrix,
    /// Keyed by method name.
    pub embeddings: BTreeMap<String, Embedding>,
    pub filters: FilterSet,
    pub probes: Vec<ProbeSentence>,
    pub view_settings: ViewSettings,
}

impl Project {
    pub fn new(corpus: Corpus) -> Self {
        Project {
            version: FORMAT_VERSION,
            corpus,
            scores: ScoreMatrix::new(),
            embeddings: BTreeMap::new(),
            filters: FilterSet::default(),
            probes: Vec::new(),
            view_settings: ViewSettings::default(),
        }
    }

    pub fn active_embedding(&self) -> Option<&Embedding> {
        self.view_settings.active_embedding.as_ref().and_then(|k| self.embeddings.get(k))
    }

    /// Stores an embedding under its method name and makes it active.
    pub fn set_embedding(&mut self, embedding: Embedding) {
        let key = embedding.method.as_str().to_string();
        self.embeddings.insert(key.clone(), embedding);
        self.view_settings.active_embedding = Some(key);
    }

    pub fn probe(&self, id: &str) -> Option<&ProbeSentence> {
        self.probes.iter().find(|p| p.id == id)
    }

    /// Next free probe id: one past the highest existing index.
    pub fn next_probe_id(&self) -> String {
        let next = self
            .probes
            .iter()
            .filter_map(|p| p.id.strip_prefix(PROBE_PREFIX)?.parse::<u64>().ok())
            .max()
            .map_or(1, |m| m + 1);
        format!("{PROBE_PREFIX}{next}")
    }

    /// Scores `text` on every project model and appends it as a probe. Nothing
    /// changes unless every model succeeds.
    pub fn add_probe(&mut self, text: &str, providers: &Providers) -> Result<ProbeSentence, SessionError> {
        let probe = self.score_probe(text, providers)?;
        self.probes.push(probe.clone());
        Ok(probe)
    }

    /// Builds the probe without attaching it.
    pub fn score_probe(&self, text: &str, providers: &Providers) -> Result<ProbeSentence, SessionError> {
        let id = self.next_probe_id();
        let mut scores = Vec::new();
        for model in self.scores.models() {
            let provider =
                providers.get(&model.model_id).ok_or_else(|| SessionError::MissingProvider(model.model_id.clone()))?;
            let pll = pll_score_with(provider.as_ref(), text, &model.source.options())
                .map_err(|cause| SessionError::ProbeRejected { model: model.model_id.clone(), cause })?;
            scores.push(pll.into_sentence_score(&id, &model.model_id));
        }
        Ok(ProbeSentence { id, text: text.to_string(), scores })
    }

    pub fn remove_probe(&mut self, id: &str) -> Result<ProbeSentence, SessionError> {
        let pos = self.probes.iter().position(|p| p.id == id).ok_or_else(|| SessionError::UnknownProbe(id.to_string()))?;
        Ok(self.probes.remove(pos))
    }

    /// Scores the existing probes with a newly added model.
    pub fn score_probes_for(
        &self,
        model: &ModelScores,
        provider: &dyn TokenLogProbProvider,
    ) -> Result<Vec<SentenceScore>, SessionError> {
        self.probes
            .iter()
            .map(|p| {
                pll_score_with(provider, &p.text, &model.source.options())
                    .map(|pll| pll.into_sentence_score(&p.id, &model.model_id))
                    .map_err(|cause| SessionError::ProbeRejected { model: model.model_id.clone(), cause })
            })
            .collect()
    }
}

pub type Providers = BTreeMap<String, Arc<dyn TokenLogProbProvider>>;

/// Frozen models have nothing to run.
#[derive(Debug)]
pub struct FrozenProvider(pub String);

impl TokenLogProbProvider for FrozenProvider {
    fn token_log_probs(&self, _: &[&str]) -> Result<Vec<Vec<crate::scoring::TokenScore>>, ScoringError> {
        Err(ScoringError::Unavailable(self.0.clone()))
    }
}

/// Instantiates the provider behind a model. Builtin models are trained on the
/// corpus texts, so the same corpus always yields the same model.
pub fn build_provider(
    model_id: &str,
    source: &ModelSource,
    corpus: &Corpus,
    remote_defaults: &RemoteConfig,
) -> Result<Arc<dyn TokenLogProbProvider>, ScoringError> {
    Ok(match source {
        ModelSource::Builtin { alpha, .. } => Arc::new(NgramMaskedModel::train(&corpus.texts(), *alpha)?),
        ModelSource::Remote { endpoint, .. } => {
            let config = RemoteConfig { endpoint: endpoint.clone(), ..remote_defaults.clone() };
            Arc::new(RemoteScorer::new(config, model_id))
        }
        ModelSource::Frozen => Arc::new(FrozenProvider(model_id.to_string())),
    })
}

/// Providers for every model in the project.
pub fn project_providers(project: &Project, remote_defaults: &RemoteConfig) -> Result<Providers, ScoringError> {
    project
        .scores
        .models()
        .iter()
        .map(|m| Ok((m.model_id.clone(), build_provider(&m.model_id, &m.source, &project.corpus, remote_defaults)?)))
        .collect()
}
