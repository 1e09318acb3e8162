//! `stereoscope` command-line tool: batch scoring, bias reports, embeddings
//! and the HTTP service.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unreadable input; nothing was attempted.
    #[error("{0}")]
    Input(String),
    /// The work itself failed.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stereoscope", version, about = "Inspect social bias in masked language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every sentence of a dataset with one model.
    Score(ScoreArgs),
    /// Compute stereotype preference rates from score files.
    Report(ReportArgs),
    /// Project score vectors into two dimensions.
    Embed(EmbedArgs),
    /// Run the HTTP service until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerKind {
    Builtin,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedMethod {
    Pca,
    Tsne,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset file (JSONL or CSV).
    #[arg(long)]
    data: PathBuf,
    /// Dataset format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    format: Option<DataFormat>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "builtin")]
    scorer: ScorerKind,
    /// Base URL of a remote scorer.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name; required for remote scorers.
    #[arg(long)]
    model_id: Option<String>,
    /// Laplace smoothing constant of the builtin model.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Leave punctuation tokens out of the PLL mean.
    #[arg(long)]
    exclude_punctuation: bool,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Score file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Score files, one per model.
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    /// Output prefix; writes `<prefix>.csv` and `<prefix>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Score files; each contributes one feature column.
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "pca")]
    method: EmbedMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Scale each feature column to zero mean and unit variance first.
    #[arg(long)]
    standardize: bool,
    /// Embedding file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "STEREOSCOPE_PORT", default_value_t = stereoscope_service::DEFAULT_PORT)]
    port: u16,
    #[arg(long, env = "STEREOSCOPE_HOST", default_value = "127.0.0.1")]
    host: String,
    /// Directory where projects are stored and reloaded from.
    #[arg(long, env = "STEREOSCOPE_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Preload the bundled demo project.
    #[arg(long)]
    demo: bool,
    /// Browser origins allowed to call the API.
    #[arg(long, env = "STEREOSCOPE_CORS", value_delimiter = ',')]
    cors: Vec<String>,
    /// Scoring jobs allowed to run at once.
    #[arg(long, default_value_t = 2)]
    workers: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(args) => commands::score(args),
        Command::Report(args) => commands::report(args),
        Command::Embed(args) => commands::embed(args),
        Command::Serve(args) => commands::serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
