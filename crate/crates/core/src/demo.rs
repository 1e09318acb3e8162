//! Bundled demo project: a small paired-sentence set with frozen scores for
//! three models and two probe sentences. Scores are illustrative values, not
//! recomputed by any model.

use serde::Deserialize;

use crate::dataset::{parse_dataset_str, Corpus, Format};
use crate::embedding::{tsne_2d, FeatureMatrix, TsneParams};
use crate::scoring::{ModelSource, ScoreFile, SentenceScore, TokenScore};
use crate::session::{ProbeSentence, Project, PROBE_PREFIX};

pub const DATASET: &str = include_str!("../fixtures/demo_dataset.jsonl");
pub const SCORES: &str = include_str!("../fixtures/demo_scores.json");
pub const PROBES: &str = include_str!("../fixtures/demo_probes.json");

#[derive(Deserialize)]
struct FrozenProbe {
    text: String,
    scores: std::collections::BTreeMap<String, f64>,
}

pub fn corpus() -> Corpus {
    parse_dataset_str(DATASET, Format::Jsonl).expect("demo dataset parses")
}

pub fn score_files() -> Vec<ScoreFile> {
    serde_json::from_str(SCORES).expect("demo scores parse")
}

/// Corpus, frozen scores, a t-SNE layout of the score vectors and the probes.
pub fn project() -> Project {
    let mut project = Project::new(corpus());
    for file in score_files() {
        project.scores.insert(file.into_model_scores(ModelSource::Frozen)).expect("distinct demo models");
    }
    let model_ids = project.scores.model_ids();
    let probes: Vec<FrozenProbe> = serde_json::from_str(PROBES).expect("demo probes parse");
    for (i, probe) in probes.into_iter().enumerate() {
        let id = format!("{PROBE_PREFIX}{}", i + 1);
        let scores = model_ids
            .iter()
            .map(|m| {
                let pll = probe.scores[*m];
                SentenceScore {
                    sentence_id: id.clone(),
                    model_id: m.to_string(),
                    pll,
                    token_scores: vec![TokenScore { token: String::new(), log_prob: pll }],
                }
            })
            .collect();
        project.probes.push(ProbeSentence { id, text: probe.text, scores });
    }

    let features = FeatureMatrix::from_scores(&project.scores, &project.corpus, &model_ids).expect("demo is fully scored");
    let embedding = tsne_2d(&features, &TsneParams::default()).expect("demo t-SNE");
    project.set_embedding(embedding);
    project
}
