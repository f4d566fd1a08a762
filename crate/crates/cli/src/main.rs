//! `restoretime`: synth, ingest, cluster, train, predict, eval and replay.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use restoretime::kv::KvFile;
use restoretime::ErrorKind;

#[derive(Parser, Debug)]
#[command(name = "restoretime", version, about = "Outage restoration time prediction pipeline")]
struct Cli {
    /// `key = value` settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed every stage derives its own stream from.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic outage dataset with hourly weather and true labels.
    Synth(SynthArgs),
    /// Parse, clean and weather-join raw outage and weather CSVs.
    Ingest(IngestArgs),
    /// Cluster cleaned outages and write the clustering artifacts.
    Cluster(ClusterArgs),
    /// Fit the routing map and per-cluster regressors on a clustered dataset.
    Train(TrainArgs),
    /// Route unseen cleaned outages and predict their restoration times.
    Predict(PredictArgs),
    /// Run the full split / cluster / route / compare experiment with a manifest.
    Eval(EvalArgs),
    /// Re-run an experiment from its manifest and check every metric matches.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Exact number of rows instead of a Poisson total.
    #[arg(long)]
    rows: Option<usize>,
    /// Length of the simulated period.
    #[arg(long)]
    days: Option<usize>,
    /// Share of rows corrupted so that cleaning rejects them.
    #[arg(long)]
    corrupt_fraction: Option<f64>,
    /// Share of days that are storm bursts; 0 disables bursts.
    #[arg(long)]
    burst_probability: Option<f64>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    outages: PathBuf,
    #[arg(long)]
    weather: PathBuf,
    /// Column-name map and timestamp settings for the outage export.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Restoration times at or above this many minutes are rejected.
    #[arg(long)]
    ceiling_min: Option<f64>,
    /// Source timezone as an offset, e.g. -05:00 (overrides the schema map).
    #[arg(long)]
    timezone: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Default)]
struct PipelineFlags {
    /// Comma-separated feature names in column order.
    #[arg(long)]
    features: Option<String>,
    /// `ordinal` or `onehot` for the cause codes.
    #[arg(long)]
    code_encoding: Option<String>,
    /// Offset of local time from UTC for calendar features.
    #[arg(long)]
    timezone: Option<String>,
    /// Candidate cluster counts, inclusive, e.g. 2..8.
    #[arg(long)]
    k_range: Option<String>,
    /// Density radius for atom selection, or `auto`.
    #[arg(long)]
    xi: Option<String>,
    #[arg(long)]
    target_atoms: Option<usize>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    #[arg(long)]
    s_nonzeros: Option<usize>,
    /// `landmark` or `reference`.
    #[arg(long)]
    spectral_path: Option<String>,
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    tsne_iters: Option<usize>,
    #[arg(long)]
    tsne_max_points: Option<usize>,
    /// Hidden layer sizes, e.g. 8 or 10,5.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Train the transfer chain (true or false).
    #[arg(long)]
    transfer: Option<String>,
    /// Percent of learning rows removed before transfer training.
    #[arg(long)]
    filter_pct: Option<f64>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Cleaned outage CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// The cleaned CSV that was clustered.
    #[arg(long)]
    input: PathBuf,
    /// Output directory of `cluster`; models are written next to its artifacts.
    #[arg(long)]
    model_dir: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Cleaned CSV of outages to predict.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Cleaned outage CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

fn flag_kv(cli: &Cli) -> KvFile {
    let mut kv = KvFile::default();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            kv.push(k, v);
        }
    };
    put("seed", cli.seed.map(|s| s.to_string()));
    let s = |v: &Option<String>| v.clone();
    let d = |v: Option<usize>| v.map(|x| x.to_string());
    let f = |v: Option<f64>| v.map(|x| x.to_string());
    match &cli.command {
        Command::Synth(a) => {
            put("rows", d(a.rows));
            put("days", d(a.days));
            put("corrupt_fraction", f(a.corrupt_fraction));
            put("burst_probability", f(a.burst_probability));
        }
        Command::Ingest(a) => {
            put("ceiling_min", f(a.ceiling_min));
            put("timezone", s(&a.timezone));
        }
        Command::Cluster(ClusterArgs { pipeline: p, .. })
        | Command::Train(TrainArgs { pipeline: p, .. })
        | Command::Eval(EvalArgs { pipeline: p, .. }) => {
            put("features", s(&p.features));
            put("code_encoding", s(&p.code_encoding));
            put("timezone", s(&p.timezone));
            put("k_range", s(&p.k_range));
            put("xi", s(&p.xi));
            put("target_atoms", d(p.target_atoms));
            put("gamma", d(p.gamma));
            put("beta", d(p.beta));
            put("s_nonzeros", d(p.s_nonzeros));
            put("spectral_path", s(&p.spectral_path));
            put("kmeans_restarts", d(p.kmeans_restarts));
            put("perplexity", f(p.perplexity));
            put("tsne_iters", d(p.tsne_iters));
            put("tsne_max_points", d(p.tsne_max_points));
            put("hidden", s(&p.hidden));
            put("max_epochs", d(p.max_epochs));
            put("transfer", s(&p.transfer));
            put("filter_pct", f(p.filter_pct));
        }
        Command::Predict(_) | Command::Replay(_) => {}
    }
    kv
}

fn run(cli: Cli) -> restoretime::Result<()> {
    let settings = config::layered(cli.config.as_deref(), flag_kv(&cli))?;
    match cli.command {
        Command::Synth(a) => commands::synth(&settings, &a.out_dir),
        Command::Ingest(a) => commands::ingest(&settings, &a.outages, &a.weather, a.schema.as_deref(), &a.out_dir),
        Command::Cluster(a) => commands::cluster(&settings, &a.input, &a.out_dir),
        Command::Train(a) => commands::train(&settings, &a.input, &a.model_dir),
        Command::Predict(a) => commands::predict(&a.input, &a.model_dir, &a.out),
        Command::Eval(a) => commands::eval(&settings, &a.input, &a.out_dir),
        Command::Replay(a) => commands::replay(&a.manifest),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
