use std::collections::BTreeSet;

use indexmap::IndexMap;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereoscope_core::dataset::{parse_dataset_str, Corpus, Format, Group, SentenceRecord};
use stereoscope_core::demo;
use stereoscope_core::embedding::Embedding;
use stereoscope_core::scoring::{ModelScores, ModelSource, NgramMaskedModel, PllOptions, SentenceScore};
use stereoscope_core::session::{
    apply_filters, integrity_problems, load_project, project_providers, save_project, save_project_gzip, FilterSet,
    Project, ProjectError, Providers, SessionError,
};

const MODELS: [&str; 3] = ["a", "b", "c"];
const CATEGORIES: [&str; 4] = ["gender", "age", "religion", "disability"];

/// A project of `n` sentences with random scores and a random user layout.
fn random_project(n: usize, seed: u64) -> Project {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<SentenceRecord> = (0..n)
        .map(|i| SentenceRecord {
            id: format!("s{i}"),
            pair_id: format!("p{}", i / 2),
            group: if i % 2 == 0 { Group::Stereotype } else { Group::Base },
            category: CATEGORIES[(i / 2) % 4].to_string(),
            text: format!("sentence {i}"),
            paraphrase_of: None,
            extra: IndexMap::new(),
        })
        .collect();
    let corpus = Corpus::new(records, Vec::new()).unwrap();
    let mut project = Project::new(corpus);
    for m in MODELS {
        let scores = project
            .corpus
            .ids()
            .map(|id| {
                let pll = -(rng.random::<f64>() * 6.0 + 1.0);
                (id.to_string(), SentenceScore { sentence_id: id.into(), model_id: m.into(), pll, token_scores: Vec::new() })
            })
            .collect();
        project.scores.insert(ModelScores { model_id: m.into(), source: ModelSource::Frozen, scores, pending: Default::default() }).unwrap();
    }
    let ids: Vec<String> = project.corpus.ids().map(str::to_string).collect();
    let points = (0..n).map(|_| [rng.random::<f64>() * 10.0 - 5.0, rng.random::<f64>() * 10.0 - 5.0]).collect();
    project.set_embedding(Embedding::user(ids, points).unwrap());
    project
}

/// Ray casting written independently: count edges crossed by a ray to +x,
/// after testing edges for collinear containment.
fn inside(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut crossings = 0;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let within = p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1]);
        if cross == 0.0 && within {
            return true;
        }
        let (lo, hi) = if a[1] <= b[1] { (a, b) } else { (b, a) };
        if p[1] >= lo[1] && p[1] < hi[1] {
            let x = lo[0] + (p[1] - lo[1]) / (hi[1] - lo[1]) * (hi[0] - lo[0]);
            if x > p[0] {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

fn brute_force(project: &Project, filters: &FilterSet) -> Vec<String> {
    let embedding = project.active_embedding().unwrap();
    project
        .corpus
        .records()
        .iter()
        .filter(|r| {
            filters.axis_filters.iter().all(|f| {
                let v = project.scores.pll(&r.id, &f.model_id).unwrap();
                f.min <= v && v <= f.max
            })
        })
        .filter(|r| filters.category_filter.as_ref().is_none_or(|c| c.contains(&r.category)))
        .filter(|r| filters.lasso.as_ref().is_none_or(|poly| inside(embedding.point(&r.id).unwrap(), poly)))
        .map(|r| r.id.clone())
        .collect()
}

fn filter_set() -> impl Strategy<Value = FilterSet> {
    let axis = (prop::sample::select(MODELS.to_vec()), -7.5f64..-0.5, 0.0f64..4.0);
    let categories = prop::collection::btree_set(prop::sample::select(CATEGORIES.to_vec()), 0..4);
    let polygon = prop::collection::vec((-6.0f64..6.0, -6.0f64..6.0), 3..9);
    (
        prop::collection::vec(axis, 0..3),
        prop::option::of(categories),
        prop::option::of(polygon),
    )
        .prop_map(|(axes, cats, poly)| {
            let mut f = FilterSet::default();
            for (m, lo, width) in axes {
                f.set_axis_filter(m, lo, lo + width);
            }
            f.category_filter = cats.map(|c| c.into_iter().map(str::to_string).collect());
            f.lasso = poly.map(|p| p.into_iter().map(|(x, y)| [x, y]).collect());
            f
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filters_match_brute_force(filters in filter_set(), seed in 0u64..4) {
        let project = random_project(1000, seed);
        let selection = apply_filters(&project, &filters).unwrap();
        prop_assert_eq!(&selection.ids, &brute_force(&project, &filters));

        // Dropping any one predicate can only grow the selection.
        let ids: BTreeSet<&String> = selection.ids.iter().collect();
        let mut looser = Vec::new();
        for i in 0..filters.axis_filters.len() {
            let mut f = filters.clone();
            f.axis_filters.remove(i);
            looser.push(f);
        }
        looser.push(FilterSet { category_filter: None, ..filters.clone() });
        looser.push(FilterSet { lasso: None, ..filters.clone() });
        for f in looser {
            let wider: BTreeSet<String> = apply_filters(&project, &f).unwrap().ids.into_iter().collect();
            prop_assert!(ids.iter().all(|id| wider.contains(*id)));
        }
    }

    #[test]
    fn record_order_does_not_change_selection(filters in filter_set(), seed in any::<u64>()) {
        let project = random_project(200, 1);
        let mut records = project.corpus.records().to_vec();
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut shuffled = project.clone();
        shuffled.corpus = Corpus::new(records, Vec::new()).unwrap();
        let a: BTreeSet<String> = apply_filters(&project, &filters).unwrap().ids.into_iter().collect();
        let b: BTreeSet<String> = apply_filters(&shuffled, &filters).unwrap().ids.into_iter().collect();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn narrative_brush_on_one_axis() {
    let p = demo::project();
    let mut f = FilterSet::default();
    f.set_axis_filter("ALBERT", -5.0, -4.0);
    let s = apply_filters(&p, &f).unwrap();
    let expected: Vec<String> = p
        .corpus
        .records()
        .iter()
        .filter(|r| (-5.0..=-4.0).contains(&p.scores.pll(&r.id, "ALBERT").unwrap()))
        .map(|r| r.id.clone())
        .collect();
    assert!(!expected.is_empty());
    assert_eq!(s.ids, expected);
    assert_eq!(s.provenance, ["axis:ALBERT"]);
    assert_eq!(apply_filters(&p, &FilterSet::default()).unwrap().ids.len(), p.corpus.len());
}

#[test]
fn probe_only_selects_probes() {
    let p = demo::project();
    let mut f = FilterSet { probe_only: true, ..FilterSet::default() };
    assert_eq!(apply_filters(&p, &f).unwrap().ids, ["probe:1", "probe:2"]);
    f.set_axis_filter("RoBERTa", -1.6, -1.4);
    assert_eq!(apply_filters(&p, &f).unwrap().ids, ["probe:1"]);
}

#[test]
fn invalid_filters_rejected() {
    let p = demo::project();
    let mut f = FilterSet::default();
    f.set_axis_filter("BERT", -1.0, -2.0);
    assert!(matches!(apply_filters(&p, &f), Err(SessionError::InvalidFilter(_))));
    let mut f = FilterSet::default();
    f.set_axis_filter("GPT", -3.0, -2.0);
    assert_eq!(apply_filters(&p, &f), Err(SessionError::UnscoredModel("GPT".into())));
    let mut bare = p.clone();
    bare.embeddings.clear();
    bare.view_settings.active_embedding = None;
    let f = FilterSet { lasso: Some(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), ..FilterSet::default() };
    assert_eq!(apply_filters(&bare, &f), Err(SessionError::NoActiveEmbedding));
}

#[test]
fn demo_project_round_trips() {
    let mut p = demo::project();
    p.filters.set_axis_filter("ALBERT", -5.0, -4.0);
    p.view_settings.highlight = vec!["gender".into()];
    p.view_settings.split_by_group = true;
    let bytes = save_project(&p);
    assert_eq!(load_project(&bytes).unwrap(), p);
    assert_eq!(load_project(&save_project_gzip(&p)).unwrap(), p);
    assert_eq!(save_project(&load_project(&bytes).unwrap()), bytes);
}

#[test]
fn corrupted_files_are_rejected() {
    let p = demo::project();
    let bytes = save_project(&p);
    for cut in [1, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(load_project(&bytes[..cut]), Err(ProjectError::Integrity(_))));
    }
    let gz = save_project_gzip(&p);
    assert!(matches!(load_project(&gz[..gz.len() / 2]), Err(ProjectError::Integrity(_))));

    let text = String::from_utf8(bytes.clone()).unwrap();
    let tampered = text.replacen("-6.6", "-6.5", 1);
    assert_ne!(tampered, text);
    assert!(matches!(load_project(tampered.as_bytes()), Err(ProjectError::Integrity(_))));

    let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    value["version"] = 99.into();
    assert_eq!(load_project(value.to_string().as_bytes()), Err(ProjectError::Version { found: 99 }));
}

/// Re-signs a hand-edited payload so only the later checks can object.
fn resign(mut value: serde_json::Value) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    value.as_object_mut().unwrap().remove("checksum");
    let sum = hex::encode(Sha256::digest(value.to_string().as_bytes()));
    value["checksum"] = sum.into();
    value.to_string().into_bytes()
}

#[test]
fn schema_and_reference_problems_are_reported() {
    let p = demo::project();
    let mut value: serde_json::Value = serde_json::from_slice(&save_project(&p)).unwrap();
    value["surprise"] = true.into();
    assert!(matches!(load_project(&resign(value)), Err(ProjectError::Schema { version: 1, .. })));

    let mut broken = p.clone();
    broken.view_settings.highlight = vec!["astrology".into()];
    let value: serde_json::Value = serde_json::from_slice(&save_project(&broken)).unwrap();
    match load_project(&resign(value)) {
        Err(ProjectError::Referential(problems)) => assert!(problems.iter().any(|m| m.contains("astrology"))),
        other => panic!("{other:?}"),
    }
    assert!(integrity_problems(&p).is_empty());
}

fn builtin_project() -> (Project, Providers) {
    let corpus = demo::corpus();
    let model = NgramMaskedModel::train(&corpus.texts(), 1.0).unwrap();
    let source = ModelSource::Builtin { alpha: 1.0, options: PllOptions::default() };
    let scores = stereoscope_core::scoring::score_corpus(&model, &corpus, "ngram", source).unwrap();
    let mut project = Project::new(corpus);
    project.scores.insert(scores).unwrap();
    let providers = project_providers(&project, &stereoscope_core::scoring::RemoteConfig::new("http://unused")).unwrap();
    (project, providers)
}

#[test]
fn probe_add_remove_restores_bytes() {
    let (mut p, providers) = builtin_project();
    let before = save_project(&p);
    let probe = p.add_probe("women don't know how to drive.", &providers).unwrap();
    assert_eq!(probe.id, "probe:1");
    assert_eq!(probe.scores.len(), 1);
    let again = p.add_probe("women don't know how to drive.", &providers).unwrap();
    assert_eq!(again.id, "probe:2");
    assert_eq!(again.scores[0].pll, probe.scores[0].pll);
    p.remove_probe("probe:2").unwrap();
    p.remove_probe("probe:1").unwrap();
    assert_eq!(save_project(&p), before);
}

#[test]
fn failed_probe_leaves_project_unchanged() {
    let mut p = demo::project();
    let providers = project_providers(&p, &stereoscope_core::scoring::RemoteConfig::new("http://unused")).unwrap();
    let before = p.clone();
    assert!(matches!(p.add_probe("a new sentence", &providers), Err(SessionError::ProbeRejected { .. })));
    assert_eq!(p, before);
    let (mut q, providers) = builtin_project();
    assert!(q.add_probe("   ", &providers).is_err());
    assert!(q.probes.is_empty());
}

#[test]
fn empty_project_round_trips() {
    let corpus = parse_dataset_str(
        "{\"id\":\"a\",\"pair_id\":\"p\",\"group\":\"base\",\"text\":\"x\"}\n{\"id\":\"b\",\"pair_id\":\"p\",\"group\":\"stereotype\",\"text\":\"y\"}",
        Format::Jsonl,
    )
    .unwrap();
    let p = Project::new(corpus);
    assert_eq!(load_project(&save_project(&p)).unwrap(), p);
}
