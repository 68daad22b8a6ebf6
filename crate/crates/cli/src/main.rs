use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hlwnet::config::RunConfig;
use hlwnet::models::ModelKind;

mod commands;

/// Hybrid LiFi/WiFi resource allocation: simulate, label, train, evaluate.
#[derive(Debug, Parser)]
#[command(name = "hlwnet", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the dataset, training and evaluation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; all available cores by default.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    UserCentric,
    NetworkCentric,
    Both,
}

impl KindArg {
    fn kinds(self) -> Vec<ModelKind> {
        match self {
            KindArg::UserCentric => vec![ModelKind::UserCentric],
            KindArg::NetworkCentric => vec![ModelKind::NetworkCentric],
            KindArg::Both => vec![ModelKind::UserCentric, ModelKind::NetworkCentric],
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the AP roster; with --grid, write an SNR/capacity heatmap.
    Topo {
        /// Sweep points per room side.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Simulate and label a dataset.
    Collect {
        #[arg(long)]
        n_ue: Option<usize>,
        #[arg(long)]
        n_f: Option<usize>,
    },
    /// Train models on a collected dataset.
    Train {
        #[arg(long, value_enum, default_value = "both")]
        kind: KindArg,
        #[arg(long)]
        n_ue: Option<usize>,
        #[arg(long)]
        n_f: Option<usize>,
    },
    /// Compare methods on held-out drops.
    Eval,
    /// Time single inferences of every method.
    Bench {
        #[arg(long, default_value_t = hlwnet::eval::TIMED_ITERATIONS)]
        reps: usize,
        #[arg(long, default_value_t = hlwnet::eval::WARMUP_ITERATIONS)]
        warmup: usize,
    },
    /// Solve one instance from a capacity matrix and mask, an SNR matrix, or a random drop.
    Solve {
        /// Linear SNR matrix, one row per AP and one column per UE.
        #[arg(long, conflicts_with = "capacity")]
        sinr: Option<PathBuf>,
        /// Link capacities in bit/s, one row per AP and one column per UE.
        #[arg(long, requires = "mask")]
        capacity: Option<PathBuf>,
        /// 0/1 association matrix shaped like the capacity matrix.
        #[arg(long, requires = "capacity")]
        mask: Option<PathBuf>,
        #[arg(long)]
        n_ue: Option<usize>,
        #[arg(long)]
        n_f: Option<usize>,
    },
    /// Allocate with a trained model from an SNR matrix CSV.
    Predict {
        #[arg(long)]
        sinr: PathBuf,
        #[arg(long, value_enum, default_value = "user-centric")]
        kind: KindArg,
        #[arg(long)]
        n_f: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), commands::Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(n) = cli.parallel {
        if n == 0 {
            return Err(commands::Failure::config("--parallel must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| commands::Failure::other(e.to_string()))?;
    }
    let ctx = commands::Ctx { cfg, out: cli.out };
    match cli.command {
        Command::Topo { grid } => ctx.topo(grid),
        Command::Collect { n_ue, n_f } => ctx.collect(n_ue, n_f),
        Command::Train { kind, n_ue, n_f } => ctx.train(&kind.kinds(), n_ue, n_f),
        Command::Eval => ctx.eval(),
        Command::Bench { reps, warmup } => ctx.bench(reps, warmup),
        Command::Solve {
            sinr,
            capacity,
            mask,
            n_ue,
            n_f,
        } => {
            let input = match (&sinr, &capacity, &mask) {
                (_, Some(capacity), Some(mask)) => commands::SolveInput::Capacity { capacity, mask },
                (Some(sinr), _, _) => commands::SolveInput::Sinr(sinr),
                _ => commands::SolveInput::Drop,
            };
            ctx.solve(input, n_ue, n_f)
        }
        Command::Predict { sinr, kind, n_f } => {
            let kinds = kind.kinds();
            if kinds.len() != 1 {
                return Err(commands::Failure::config("predict takes a single model kind"));
            }
            ctx.predict(&sinr, kinds[0], n_f)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
