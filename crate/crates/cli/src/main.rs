//! `xmorph`: generate data, featurize signals, train projections and run
//! the transfer evaluation.

mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use crate::config::{parse_value, SEED_VAR};
use crate::error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "xmorph", version, about = "Cross-robot transfer of implicit object knowledge")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for every random stage; beats XMORPH_SEED and the file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Dotted configuration override, e.g. `evaluate.kema.knn=7`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset manifest.
    Synth {
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Turn raw WAV or time-series CSV files into binned feature vectors.
    Featurize {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// audio-wave, joint-effort or endpoint-force.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Add sampled trials to every object and context of a manifest.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Fit an encoder-decoder projection for one channel.
    TrainEdn(TrainArgs),
    /// Fit a kernel manifold alignment for one channel.
    TrainKema(TrainArgs),
    /// Run the evaluation protocol and write the report.
    Evaluate(EvaluateArgs),
    /// Render charts from an evaluation report.
    Report {
        /// A report CSV or a directory holding `report.csv`.
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub behavior: Option<String>,
    #[arg(long)]
    pub modality: Option<String>,
    /// object-id, weight or content.
    #[arg(long)]
    pub pairing: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset manifest; omit with `--synthetic`.
    #[arg(long, conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Generate the dataset from the `synth` section instead.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Comma-separated ascending budgets.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    /// Comma-separated `behavior-modality` channels.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<String>>,
}

fn string(s: &Option<String>) -> Option<Value> {
    s.as_ref().map(|v| Value::String(v.clone()))
}

fn int(n: Option<usize>) -> Option<Value> {
    n.map(|v| Value::Integer(v as i64))
}

/// Dotted config keys for every flag that was given, in increasing
/// precedence.
fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, CliError> {
    let mut out: Vec<(String, Option<Value>)> = Vec::new();
    match &cli.command {
        Command::Synth { objects, trials } => {
            out.push(("synth.objects".into(), int(*objects)));
            out.push(("synth.trials_per_object".into(), int(*trials)));
        }
        Command::Featurize { kind, .. } => out.push(("featurize.kind".into(), string(kind))),
        Command::Augment { k, .. } => out.push(("augment.k".into(), int(*k))),
        Command::TrainEdn(a) | Command::TrainKema(a) => {
            out.push(("train.source".into(), string(&a.source)));
            out.push(("train.target".into(), string(&a.target)));
            out.push(("train.behavior".into(), string(&a.behavior)));
            out.push(("train.modality".into(), string(&a.modality)));
            out.push(("train.pairing".into(), string(&a.pairing)));
        }
        Command::Evaluate(a) => {
            out.push(("evaluate.task".into(), string(&a.task)));
            out.push(("evaluate.method".into(), string(&a.method)));
            out.push(("evaluate.source".into(), string(&a.source)));
            out.push(("evaluate.target".into(), string(&a.target)));
            out.push(("evaluate.repeats".into(), int(a.repeats)));
            out.push((
                "evaluate.budgets".into(),
                a.budgets.as_ref().map(|b| Value::Array(b.iter().map(|&x| Value::Integer(x as i64)).collect())),
            ));
            if let Some(channels) = &a.channels {
                let mut list = Vec::new();
                for c in channels {
                    let ch: xmorph::eval::Channel = c.parse()?;
                    let mut t = toml::Table::new();
                    t.insert("behavior".into(), Value::String(ch.behavior.to_string()));
                    t.insert("modality".into(), Value::String(ch.modality.to_string()));
                    list.push(Value::Table(t));
                }
                out.push(("evaluate.channels".into(), Some(Value::Array(list))));
            }
        }
        Command::Report { .. } => {}
    }
    for item in &cli.global.set {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        out.push((key.trim().to_string(), Some(parse_value(value.trim()))));
    }
    if let Some(seed) = cli.global.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::usage("--seed must fit in 63 bits"))?;
        out.push(("seed".into(), Some(Value::Integer(seed))));
    }
    Ok(out.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot size the worker pool: {e}")))?;
    }
    let config = config::resolve(cli.global.config.as_deref(), std::env::var(SEED_VAR).ok(), &overrides(cli)?)?;
    commands::dispatch(cli, &config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xmorph: error ({}, exit {}): {e}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
