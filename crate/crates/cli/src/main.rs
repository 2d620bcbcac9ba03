mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use warranty_core::model::CdfConvention;
use warranty_core::Error;

use commands::{Ctx, Outcome};
use config::RunConfig;

/// Bayesian design of two-dimensional (age x usage) warranty regions.
#[derive(Parser, Debug)]
#[command(name = "warranty", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for both the sampler and the optimizer restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all available cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Use the dissatisfaction expectation exactly as displayed, alongside
    /// the case-consistent one.
    #[arg(long, global = true)]
    paper_literal_d: bool,
    /// Use 1 - R(t, u) as the bivariate CDF.
    #[arg(long, global = true)]
    paper_literal_cdf: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Maximum-likelihood fit with standard errors and marginal diagnostics.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Posterior sampling; writes the chain, trace series and predictive quantiles.
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Optimal warranty region for a chain (sampled unless --chain is given).
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Chain CSV written by `sample`.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Re-optimizes over a grid of parameter overrides read from a CSV.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        /// CSV whose header names the overridden keys, one row per point.
        #[arg(long)]
        grid: PathBuf,
        /// Chain CSV written by `sample`.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Weibull marginal fits, Anderson–Darling tests and Q–Q series.
    Diagnostics {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Fit { common }
            | Command::Sample { common }
            | Command::Optimize { common, .. }
            | Command::Sensitivity { common, .. }
            | Command::Diagnostics { common } => common,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Config(_) | Error::Csv(_) | Error::Json(_) => 2,
        _ => 1,
    }
}

fn resolve(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.mcmc.seed = seed;
        cfg.optimizer.seed = seed;
    }
    if common.paper_literal_cdf {
        cfg.model.convention = CdfConvention::SurvivalComplement;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let common = cli.command.common();
    let cfg = resolve(common)?;
    if common.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(Outcome::Ok);
    }
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx {
        cfg,
        out: common.out.clone(),
        literal_d: common.paper_literal_d,
    };
    match &cli.command {
        Command::Fit { .. } => commands::fit(&ctx),
        Command::Sample { .. } => commands::sample(&ctx),
        Command::Optimize { chain, .. } => commands::optimize(&ctx, chain.as_deref()),
        Command::Sensitivity { grid, chain, .. } => commands::sensitivity(&ctx, grid, chain.as_deref()),
        Command::Diagnostics { .. } => commands::diagnostics(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged(msg)) => {
            eprintln!("warranty: {msg}; results were still written");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("warranty: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
