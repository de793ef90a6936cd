//! `rfap`: generate scenario data, run the three training steps and evaluate
//! the resulting clusters.

mod artifact;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::Ctx;
use config::{ConfigError, ExperimentConfig};

/// Exit status for unknown commands and malformed arguments.
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "rfap", version, about = "Traffic-scenario clustering with RFAP similarity")]
struct Cli {
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set pipeline.cluster.epochs=20`.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/rfap")]
    out: PathBuf,
    /// Skip self-supervised pre-training.
    #[arg(long, global = true)]
    no_ssl: bool,
    /// Skip fine-tuning and drop the categorical loss.
    #[arg(long, global = true)]
    no_labeled: bool,
    /// Similarity for the clustering loss: rfap, breiman, cosine, l2, knn or rank.
    #[arg(long, global = true)]
    similarity: Option<String>,
    /// Directory holding train.json and test.json (defaults to OUT/data).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Network checkpoint to start from.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset and its train/test split.
    GenData,
    /// Extract THW-triggered scenarios from highD track files.
    IngestHighd {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        meta: PathBuf,
    },
    /// Step I: temporal-order pre-training.
    Pretrain,
    /// Step II: supervised fine-tuning on the labelled classes.
    Finetune,
    /// Step III: iterative clustering of the unlabelled data.
    Cluster,
    /// Clustering accuracy and the raw k-means baseline.
    Evaluate {
        #[arg(long)]
        assignments: Option<PathBuf>,
    },
    /// Silhouette-based estimate of the number of clusters.
    EstimateQ,
    /// Step III once per similarity measure.
    CompareSimilarities,
    /// gen-data, pretrain, finetune, cluster and evaluate in one go.
    Reproduce,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if cli.no_ssl {
        overrides.push("pipeline.use_ssl=false".into());
    }
    if cli.no_labeled {
        overrides.push("pipeline.use_labeled=false".into());
    }
    if let Some(s) = &cli.similarity {
        if rfap_core::pipeline::SimilarityMethod::from_name(s).is_none() {
            return Err(ConfigError(format!("unknown similarity {s:?}")));
        }
        overrides.push(format!("pipeline.similarity={s}"));
    }
    if let Command::IngestHighd { tracks, meta } = &cli.command {
        overrides.push("source=highd".into());
        overrides.push(format!("highd.tracks={}", tracks.display()));
        overrides.push(format!("highd.meta={}", meta.display()));
    }
    ExperimentConfig::load(cli.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError(format!("cannot start {n} threads: {e}")))?;
    }
    let cfg = build_config(&cli)?;
    log::debug!("effective configuration: {}", serde_json::to_string(&cfg)?);
    let ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        data: cli.data.clone(),
        checkpoint: cli.checkpoint.clone(),
    };
    match cli.command {
        Command::GenData => commands::gen_data(&ctx, "gen-data"),
        Command::IngestHighd { .. } => commands::gen_data(&ctx, "ingest-highd"),
        Command::Pretrain => commands::pretrain(&ctx),
        Command::Finetune => commands::finetune(&ctx),
        Command::Cluster => commands::cluster(&ctx),
        Command::Evaluate { assignments } => {
            let m = commands::evaluate(&ctx, assignments)?;
            println!("{}", serde_json::to_string(&m)?);
            Ok(())
        }
        Command::EstimateQ => commands::estimate(&ctx),
        Command::CompareSimilarities => {
            for (m, acc) in commands::compare(&ctx)? {
                println!("{m}: {}", acc.map_or("n/a".to_string(), |a| format!("{a:.4}")));
            }
            Ok(())
        }
        Command::Reproduce => commands::reproduce(&ctx),
    }
}

/// 2 configuration, 3 data, 4 numeric failure, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<rfap_core::Error>() {
            return match e {
                rfap_core::Error::Config(_) => 2,
                rfap_core::Error::Numeric(_) => 4,
                rfap_core::Error::Contract(_) => 1,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
