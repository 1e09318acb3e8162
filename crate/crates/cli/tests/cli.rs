mod common;

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use common::{mock_log_probs, MockServer, Mode};
use serde_json::{json, Value};
use stereoscope_core::dataset::{parse_dataset_str, Format};
use stereoscope_core::demo;
use stereoscope_core::embedding::Embedding;
use stereoscope_core::scoring::{pll_score, NgramMaskedModel, ScoreFile};

fn stereoscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereoscope")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn demo_data(dir: &Path) -> PathBuf {
    write(dir, "demo.jsonl", demo::DATASET)
}

fn score_file(path: &Path) -> ScoreFile {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn score_builtin_is_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = demo_data(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = stereoscope(&["score", "--data", path_str(&data), "--out", path_str(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let file = score_file(&a);
    let corpus = demo::corpus();
    assert_eq!(file.model_id, "builtin");
    let ids: Vec<&str> = file.scores.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, corpus.ids().collect::<Vec<_>>());
    let model = NgramMaskedModel::train(&corpus.texts(), 1.0).unwrap();
    for (entry, record) in file.scores.iter().zip(corpus.records()) {
        assert_eq!(entry.pll, pll_score(&model, &record.text).unwrap().pll);
        let mean = entry.token_log_probs.iter().sum::<f64>() / entry.token_log_probs.len() as f64;
        assert!((mean - entry.pll).abs() < 1e-12);
    }
}

#[test]
fn score_remote_uses_served_log_probs() {
    let server = MockServer::start(Mode::Good);
    let dir = tempfile::tempdir().unwrap();
    let data = demo_data(dir.path());
    let out = dir.path().join("remote.json");
    let o = stereoscope(&[
        "score", "--data", path_str(&data), "--scorer", "remote", "--endpoint", &server.url, "--model-id", "mock",
        "--batch-size", "10", "--out", path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(server.hits(), 5);
    let file = score_file(&out);
    assert_eq!(file.model_id, "mock");
    for (entry, record) in file.scores.iter().zip(demo::corpus().records()) {
        let (_, lp) = mock_log_probs(&record.text);
        assert_eq!(entry.token_log_probs, lp);
        assert!((entry.pll - lp.iter().sum::<f64>() / lp.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn failed_scoring_leaves_no_file() {
    let server = MockServer::start(Mode::Positive("women".into()));
    let dir = tempfile::tempdir().unwrap();
    let data = demo_data(dir.path());
    let out = dir.path().join("partial.json");
    let o = stereoscope(&[
        "score", "--data", path_str(&data), "--scorer", "remote", "--endpoint", &server.url, "--model-id", "m",
        "--out", path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("protocol"), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    let o = stereoscope(&["score", "--data", path_str(&data), "--scorer", "remote", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = stereoscope(&["score", "--data", "/nonexistent.jsonl", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

const FOUR_PAIRS: &str = "id,pair_id,group,category,text
b1,p1,base,gender,men can cook
s1,p1,stereotype,gender,women can cook
b2,p2,base,gender,the rich are kind
s2,p2,stereotype,gender,the poor are kind
b3,p3,base,age,young people drive
s3,p3,stereotype,age,old people drive
b4,p4,base,age,he is tall
s4,p4,stereotype,age,she is tall
";

fn frozen_scores(dir: &Path, name: &str, model: &str, plls: &[(&str, f64)]) -> PathBuf {
    let scores: Vec<Value> = plls.iter().map(|(id, p)| json!({"id": id, "pll": p, "token_log_probs": [p]})).collect();
    write(dir, name, &json!({"model_id": model, "scores": scores}).to_string())
}

#[test]
fn report_engineered_rate() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "pairs.csv", FOUR_PAIRS);
    let deltas = frozen_scores(
        dir.path(),
        "m.json",
        "m",
        &[("b1", -3.0), ("s1", -2.0), ("b2", -4.0), ("s2", -1.0), ("b3", -1.0), ("s3", -2.0), ("b4", -2.0), ("s4", -2.0)],
    );
    let ties = frozen_scores(
        dir.path(),
        "t.json",
        "ties",
        &[("b1", -1.0), ("s1", -1.0), ("b2", -1.0), ("s2", -1.0), ("b3", -1.0), ("s3", -1.0), ("b4", -1.0), ("s4", -1.0)],
    );
    let prefix = dir.path().join("bias");
    let o = stereoscope(&[
        "report", "--data", path_str(&data), "--scores", path_str(&deltas), path_str(&ties), "--out", path_str(&prefix),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("m ") && l.contains("overall") && l.contains("0.6250")), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("ties ") && l.contains("overall") && l.contains("0.5000")), "{stdout}");

    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("bias.json")).unwrap()).unwrap();
    assert_eq!(report["reports"][0]["overall"]["preference_rate"], 0.625);
    assert_eq!(report["reports"][0]["per_category"]["gender"]["preference_rate"], 1.0);
    assert_eq!(report["reports"][0]["per_category"]["age"]["preference_rate"], 0.25);
    assert_eq!(report["reports"][1]["overall"]["preference_rate"], 0.5);
    let csv = std::fs::read_to_string(dir.path().join("bias.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "m,overall,0.625,4,0.75"), "{csv}");
}

#[test]
fn report_missing_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "pairs.csv", FOUR_PAIRS);
    let prefix = dir.path().join("bias");
    let o = stereoscope(&["report", "--data", path_str(&data), "--scores", "/no/such/file.json", "--out", path_str(&prefix)]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("/no/such/file.json"), "{stderr}");
    assert!(!dir.path().join("bias.csv").exists() && !dir.path().join("bias.json").exists());

    let partial = frozen_scores(dir.path(), "p.json", "m", &[("b1", -1.0)]);
    let o = stereoscope(&["report", "--data", path_str(&data), "--scores", path_str(&partial)]);
    assert_eq!(o.status.code(), Some(2));
}

fn demo_score_files(dir: &Path) -> Vec<PathBuf> {
    demo::score_files()
        .iter()
        .map(|f| write(dir, &format!("{}.json", f.model_id), &serde_json::to_string(f).unwrap()))
        .collect()
}

#[test]
fn embed_pca_and_tsne() {
    let dir = tempfile::tempdir().unwrap();
    let files = demo_score_files(dir.path());
    let mut args: Vec<&str> = vec!["embed", "--scores"];
    args.extend(files.iter().map(|p| path_str(p)));

    let pca = dir.path().join("pca.json");
    let mut pca_args = args.clone();
    pca_args.extend(["--method", "pca", "--out", path_str(&pca)]);
    let o = stereoscope(&pca_args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let e: Embedding = serde_json::from_slice(&std::fs::read(&pca).unwrap()).unwrap();
    e.check_against(&demo::corpus()).unwrap();

    let outs = [dir.path().join("t1.json"), dir.path().join("t2.json")];
    for out in &outs {
        let mut a = args.clone();
        a.extend(["--method", "tsne", "--seed", "7", "--iterations", "300", "--out", path_str(out)]);
        let o = stereoscope(&a);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&outs[0]).unwrap(), std::fs::read(&outs[1]).unwrap());
}

#[test]
fn embed_tsne_too_small() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = parse_dataset_str(FOUR_PAIRS, Format::Csv).unwrap();
    let plls: Vec<(&str, f64)> = corpus.ids().take(7).enumerate().map(|(i, id)| (id, -(i as f64))).collect();
    let scores = frozen_scores(dir.path(), "m.json", "m", &plls);
    let out = dir.path().join("e.json");
    let o = stereoscope(&["embed", "--scores", path_str(&scores), "--method", "tsne", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PCA"));
    assert!(!out.exists());
}

struct Served(Child);

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts `serve` on an ephemeral port and returns the base URL it prints.
fn serve(extra: &[&str]) -> (Served, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_stereoscope"))
        .args(["serve", "--port", "0"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("listening line").to_string();
    (Served(child), url)
}

#[test]
fn serve_answers_health_and_preloads_demo() {
    let (_child, url) = serve(&["--demo"]);
    let mut health = ureq::get(&format!("{url}/api/health")).call().unwrap();
    assert_eq!(health.status(), 200);
    assert_eq!(health.body_mut().read_json::<Value>().unwrap()["status"], "ok");
    let mut list = ureq::get(&format!("{url}/api/projects")).call().unwrap();
    let list: Value = list.body_mut().read_json().unwrap();
    assert_eq!(list["projects"].as_array().unwrap().len(), 1);
    let mut models = ureq::get(&format!("{url}/api/projects/prj-1/models")).call().unwrap();
    let models: Value = models.body_mut().read_json().unwrap();
    let ids: Vec<&str> = models["models"].as_array().unwrap().iter().map(|m| m["model_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["BERT", "RoBERTa", "ALBERT"]);

    let (_plain, url) = serve(&[]);
    let mut list = ureq::get(&format!("{url}/api/projects")).call().unwrap();
    assert_eq!(list.body_mut().read_json::<Value>().unwrap()["projects"], json!([]));
}

#[test]
fn serve_occupied_port() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = stereoscope(&["serve", "--port", &port]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(&port));
}

#[test]
fn embedding_file_loads_into_service() {
    let dir = tempfile::tempdir().unwrap();
    let files = demo_score_files(dir.path());
    let out = dir.path().join("pca.json");
    let mut args: Vec<&str> = vec!["embed", "--method", "pca", "--out", path_str(&out), "--scores"];
    args.extend(files.iter().map(|p| path_str(p)));
    assert!(stereoscope(&args).status.success());
    let e: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();

    let (_child, url) = serve(&["--demo"]);
    let body = json!({"method": "user", "ids": e["ids"], "points": e["points"]});
    let mut resp = ureq::post(&format!("{url}/api/projects/prj-1/embedding")).send_json(&body).unwrap();
    let got: Value = resp.body_mut().read_json().unwrap();
    assert_eq!(got["points"], e["points"]);
}
