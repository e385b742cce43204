//! funnol: representation learning, reconstruction and classification for
//! functional data, with an FPCA baseline and repeatable experiment
//! protocols.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{FileConfig, ProtocolOpts, TrainOpts};

#[derive(Parser)]
#[command(
    name = "funnol",
    version,
    about = "Nonlinear representation learning for functional data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputArgs {
    /// Input data file; repeat once per channel for multivariate curves.
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Grid override file (whitespace-separated time points).
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args)]
struct CommonOpts {
    /// Flat JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Master seed for every random choice in the command.
    #[arg(long)]
    seed: Option<u64>,
    /// Bound on worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ModelDataArgs {
    /// Checkpoint produced by `train` or `fpca`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the recurrent representation model and write a checkpoint.
    Train {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Write per-sample representations for a checkpoint.
    Encode(ModelDataArgs),
    /// Write per-sample curve reconstructions for a checkpoint.
    Reconstruct(ModelDataArgs),
    /// Write predicted labels and class probabilities (network checkpoints).
    Classify(ModelDataArgs),
    /// Fit the FPCA baseline and write a checkpoint.
    Fpca {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: CommonOpts,
        /// Retained components.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Repeated-split classification protocol for one method.
    Protocol {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        protocol: ProtocolOpts,
    },
    /// Split protocol across a list of keep fractions.
    Sparsity {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        protocol: ProtocolOpts,
        /// Comma-separated keep fractions, e.g. 0.9,0.5,0.1.
        #[arg(long = "keep", value_delimiter = ',')]
        keep: Option<Vec<f64>>,
    },
    /// Merge protocol JSON summaries into a Markdown table.
    Report {
        /// Summary files written by `protocol` or `sparsity`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            input,
            common,
            train,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            init_threads(common.threads.or(file.threads));
            let seed = common.seed.or(file.seed).unwrap_or(0);
            let out_dir = common
                .out_dir
                .or(file.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            let cfg = train.resolve(&file, seed)?;
            commands::cmd_train(&input.data, input.grid.as_deref(), &out_dir, &cfg)
        }
        Command::Encode(args) => {
            init_threads(args.threads);
            let out = args.out.unwrap_or_else(|| PathBuf::from("encodings.csv"));
            commands::cmd_encode(
                &args.checkpoint,
                &args.input.data,
                args.input.grid.as_deref(),
                &out,
            )
        }
        Command::Reconstruct(args) => {
            init_threads(args.threads);
            let out = args
                .out
                .unwrap_or_else(|| PathBuf::from("reconstructions.csv"));
            commands::cmd_reconstruct(
                &args.checkpoint,
                &args.input.data,
                args.input.grid.as_deref(),
                &out,
            )
        }
        Command::Classify(args) => {
            init_threads(args.threads);
            let out = args.out.unwrap_or_else(|| PathBuf::from("predictions.csv"));
            commands::cmd_classify(
                &args.checkpoint,
                &args.input.data,
                args.input.grid.as_deref(),
                &out,
            )
        }
        Command::Fpca { input, common, k } => {
            let file = FileConfig::load(common.config.as_deref())?;
            init_threads(common.threads.or(file.threads));
            let out_dir = common
                .out_dir
                .or(file.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            let components = k.or(file.k).unwrap_or(4);
            commands::cmd_fpca(&input.data, input.grid.as_deref(), &out_dir, components)
        }
        Command::Protocol {
            input,
            common,
            train,
            protocol,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            init_threads(common.threads.or(file.threads));
            let seed = common.seed.or(file.seed).unwrap_or(0);
            let out_dir = common
                .out_dir
                .or(file.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            let mut train_cfg = train.resolve(&file, seed)?;
            // The method decides whether corruption runs; keep the
            // flag-supplied parameters available either way.
            train_cfg.corruption = Some(train.corruption_template(&file, seed)?);
            let (method, splits, cfg) = protocol.resolve(&file, train_cfg, seed)?;
            commands::cmd_protocol(
                &input.data,
                input.grid.as_deref(),
                &out_dir,
                method,
                splits,
                &cfg,
            )
        }
        Command::Sparsity {
            input,
            common,
            train,
            protocol,
            keep,
        } => {
            let file = FileConfig::load(common.config.as_deref())?;
            init_threads(common.threads.or(file.threads));
            let seed = common.seed.or(file.seed).unwrap_or(0);
            let out_dir = common
                .out_dir
                .or(file.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            let fractions = keep
                .or(file.keep_fractions.clone())
                .unwrap_or_else(|| vec![0.9, 0.7, 0.5, 0.3, 0.1]);
            let mut train_cfg = train.resolve(&file, seed)?;
            train_cfg.corruption = Some(train.corruption_template(&file, seed)?);
            let (method, splits, cfg) = protocol.resolve(&file, train_cfg, seed)?;
            commands::cmd_sparsity(
                &input.data,
                input.grid.as_deref(),
                &out_dir,
                method,
                &fractions,
                splits,
                &cfg,
            )
        }
        Command::Report { inputs, out } => commands::cmd_report(&inputs, out.as_deref()),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
