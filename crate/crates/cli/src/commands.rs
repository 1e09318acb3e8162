use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use stereoscope_core::analytics::{bias_reports_to_csv, stereotype_preference_rate, BiasReport, OVERALL};
use stereoscope_core::dataset::{parse_dataset, validate, Corpus, Format, Severity};
use stereoscope_core::embedding::{pca_2d, tsne_2d, FeatureMatrix, TsneParams};
use stereoscope_core::scoring::{
    score_corpus, ModelSource, NgramMaskedModel, PllOptions, RemoteConfig, RemoteScorer, ScoreFile, ScoreMatrix,
    TokenLogProbProvider,
};
use stereoscope_service::{AppState, Server, ServiceConfig};

use crate::output::{with_suffix, write_all_or_nothing, write_file};
use crate::{CliError, DataArgs, DataFormat, EmbedArgs, EmbedMethod, ReportArgs, ScoreArgs, ScorerKind, ServeArgs};

fn check_out_dir(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(CliError::Input(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn load_corpus(args: &DataArgs) -> Result<Corpus, CliError> {
    let format = match args.format {
        Some(DataFormat::Csv) => Format::Csv,
        Some(DataFormat::Jsonl) => Format::Jsonl,
        None if args.data.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => Format::Csv,
        None => Format::Jsonl,
    };
    let file = fs::File::open(&args.data)
        .map_err(|e| CliError::Input(format!("cannot read dataset {}: {e}", args.data.display())))?;
    let corpus = parse_dataset(file, format).map_err(|e| CliError::Input(format!("{}: {e}", args.data.display())))?;
    let mut errors = Vec::new();
    for d in validate(&corpus) {
        let line = match &d.record_id {
            Some(id) => format!("{id}: {}", d.message),
            None => d.message.clone(),
        };
        match d.severity {
            Severity::Error => errors.push(line),
            Severity::Warning => eprintln!("warning: {line}"),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Input(format!("{} is not a valid dataset:\n  {}", args.data.display(), errors.join("\n  "))));
    }
    Ok(corpus)
}

fn read_score_file(path: &Path) -> Result<ScoreFile, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read score file {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("score file {} is malformed: {e}", path.display())))
}

fn read_score_files(paths: &[PathBuf]) -> Result<ScoreMatrix, CliError> {
    let mut matrix = ScoreMatrix::new();
    for path in paths {
        let file = read_score_file(path)?;
        matrix
            .insert(file.into_model_scores(ModelSource::Frozen))
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(matrix)
}

fn to_json(value: &impl serde::Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
    bytes.push(b'\n');
    bytes
}

pub fn score(args: ScoreArgs) -> Result<(), CliError> {
    check_out_dir(&args.out)?;
    let corpus = load_corpus(&args.data)?;
    let options = PllOptions { exclude_punctuation: args.exclude_punctuation };
    let (model_id, source, provider): (String, ModelSource, Box<dyn TokenLogProbProvider>) = match args.scorer {
        ScorerKind::Builtin => {
            let model = NgramMaskedModel::train(&corpus.texts(), args.alpha).map_err(|e| CliError::Input(e.to_string()))?;
            let id = args.model_id.unwrap_or_else(|| "builtin".into());
            (id, ModelSource::Builtin { alpha: args.alpha, options }, Box::new(model))
        }
        ScorerKind::Remote => {
            let endpoint =
                args.endpoint.ok_or_else(|| CliError::Input("--endpoint is required with --scorer remote".into()))?;
            let id = args.model_id.ok_or_else(|| CliError::Input("--model-id is required with --scorer remote".into()))?;
            if args.batch_size == 0 {
                return Err(CliError::Input("--batch-size must be at least 1".into()));
            }
            let config = RemoteConfig {
                batch_size: args.batch_size,
                timeout: Duration::from_secs(args.timeout),
                retries: args.retries,
                ..RemoteConfig::new(endpoint.clone())
            };
            let scorer = RemoteScorer::new(config, id.clone());
            (id, ModelSource::Remote { endpoint, options }, Box::new(scorer))
        }
    };

    let scores = score_corpus(provider.as_ref(), &corpus, &model_id, source).map_err(|e| {
        let mut message = e.to_string();
        for (id, cause) in e.failed.iter().take(5) {
            let _ = write!(message, "\n  {id}: {cause}");
        }
        if e.failed.len() > 5 {
            let _ = write!(message, "\n  ... and {} more", e.failed.len() - 5);
        }
        CliError::Failure(message)
    })?;
    let file = ScoreFile::from_model_scores(&scores, Some(&corpus));
    write_file(&args.out, &to_json(&file))?;
    println!("scored {} sentences with {model_id} -> {}", file.scores.len(), args.out.display());
    Ok(())
}

fn report_table(reports: &[BiasReport]) -> String {
    let mut out = format!("{:<16} {:<20} {:>15} {:>8} {:>12}\n", "model", "category", "preference_rate", "pairs", "mean_delta");
    for report in reports {
        let rows = report.per_category.iter().map(|(c, s)| (c.as_str(), s)).chain([(OVERALL, &report.overall)]);
        for (category, stats) in rows {
            let _ = writeln!(
                out,
                "{:<16} {:<20} {:>15.4} {:>8} {:>12.4}",
                report.model_id, category, stats.preference_rate, stats.n_pairs, stats.mean_delta
            );
        }
    }
    out
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    if let Some(prefix) = &args.out {
        check_out_dir(prefix)?;
    }
    let corpus = load_corpus(&args.data)?;
    let matrix = read_score_files(&args.scores)?;
    matrix.check_against(&corpus).map_err(|e| CliError::Input(e.to_string()))?;
    let reports = matrix
        .model_ids()
        .into_iter()
        .map(|m| stereotype_preference_rate(&matrix, &corpus, m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(e.to_string()))?;

    if let Some(prefix) = &args.out {
        let csv = with_suffix(prefix, "csv");
        let json = with_suffix(prefix, "json");
        write_all_or_nothing(&[
            (csv.clone(), bias_reports_to_csv(&reports).into_bytes()),
            (json.clone(), to_json(&serde_json::json!({ "reports": reports }))),
        ])?;
        eprintln!("wrote {} and {}", csv.display(), json.display());
    }
    print!("{}", report_table(&reports));
    Ok(())
}

/// One feature column per score file, rows in the first file's order. Every
/// file must cover the same sentences.
fn feature_matrix(paths: &[PathBuf]) -> Result<FeatureMatrix, CliError> {
    let files = paths.iter().map(|p| read_score_file(p)).collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<String> = files[0].scores.iter().map(|e| e.id.clone()).collect();
    let id_set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    if id_set.len() != ids.len() {
        return Err(CliError::Input(format!("{} lists a sentence more than once", paths[0].display())));
    }
    let mut columns = Vec::with_capacity(files.len());
    for (path, file) in paths.iter().zip(&files) {
        let map: std::collections::BTreeMap<&str, f64> = file.scores.iter().map(|e| (e.id.as_str(), e.pll)).collect();
        if map.len() != file.scores.len() || map.keys().copied().collect::<BTreeSet<_>>() != id_set {
            return Err(CliError::Input(format!(
                "{} does not score the same sentences as {}",
                path.display(),
                paths[0].display()
            )));
        }
        columns.push(map);
    }
    let vectors = ids.iter().map(|id| columns.iter().map(|c| c[id.as_str()]).collect()).collect();
    FeatureMatrix::new(ids, vectors).map_err(|e| CliError::Input(e.to_string()))
}

pub fn embed(args: EmbedArgs) -> Result<(), CliError> {
    check_out_dir(&args.out)?;
    let mut features = feature_matrix(&args.scores)?;
    if args.standardize {
        features = features.standardized();
    }
    let embedding = match args.method {
        EmbedMethod::Pca => pca_2d(&features),
        EmbedMethod::Tsne => {
            let params =
                TsneParams { perplexity: args.perplexity, iterations: args.iterations, seed: args.seed, ..TsneParams::default() };
            tsne_2d(&features, &params)
        }
    }
    .map_err(|e| CliError::Failure(e.to_string()))?;
    write_file(&args.out, &to_json(&embedding))?;
    println!("embedded {} sentences with {} -> {}", embedding.ids.len(), embedding.method.as_str(), args.out.display());
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Input(format!("invalid listen address {}:{}: {e}", args.host, args.port)))?;
    let config = ServiceConfig {
        port: args.port,
        data_dir: args.data_dir,
        cors_origins: args.cors.into_iter().filter(|o| !o.is_empty()).collect(),
        workers: args.workers,
        ..ServiceConfig::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Failure(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let mut state = AppState::new(config);
        let skipped = state.load_data_dir().map_err(|e| CliError::Failure(format!("cannot open data directory: {e}")))?;
        for s in skipped {
            eprintln!("warning: skipped unreadable project {s}");
        }
        if args.demo {
            state = state.with_demo();
        }
        let server = Server::bind(Arc::new(state), addr)
            .await
            .map_err(|e| CliError::Failure(format!("cannot listen on {addr}: {e}")))?;
        let bound = server.local_addr().map_err(|e| CliError::Failure(e.to_string()))?;
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
        server
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Failure(format!("server error: {e}")))
    })
}
