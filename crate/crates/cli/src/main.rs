use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use netimpute::GridSpec;
use netimpute_cli::commands::{self, Export, GridDemo};
use netimpute_cli::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "netimpute", version, about = "Impute truck volume and class shares over a road network")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    config_dump: bool,
    #[command(flatten)]
    overrides: Overrides,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Replaces the configured windows; repeatable.
    #[arg(long = "window", global = true)]
    windows: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Transfer dense-network weights and snap stations.
    Match,
    /// Roll hourly class counts into per-window observations.
    Aggregate,
    /// Propagate observations over the network.
    Impute,
    /// Masking cross-validation.
    Evaluate,
    /// match, aggregate, impute and evaluate in turn.
    Run,
    /// Two pinned corners on a directed grid, with per-epoch snapshots.
    GridDemo {
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        cols: usize,
        #[arg(long, default_value_t = 0.10)]
        source: f64,
        #[arg(long, default_value_t = 1.00)]
        sink: f64,
        /// Epochs to snapshot, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,10,50,100,500")]
        snapshots: Vec<usize>,
    },
    /// Write a random synthetic fixture in the input formats, with a config.
    Export {
        #[arg(long, default_value_t = 200)]
        edges: usize,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
    },
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(out) = &o.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.cv.seed = seed;
    }
    if let Some(k) = o.k {
        cfg.cv.k = k;
    }
    if let Some(m) = o.max_epochs {
        cfg.impute.max_epochs = m;
    }
    if let Some(t) = o.tolerance {
        cfg.impute.tolerance = t;
    }
    if !o.windows.is_empty() {
        cfg.aggregate.windows = o.windows.clone();
    }
    if cli.config.is_none() && o.max_epochs.is_none() && matches!(cli.command, Some(Command::GridDemo { .. })) {
        // The default grid needs well over the library default to settle.
        cfg.impute.max_epochs = 5000;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    if cli.config_dump {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let Some(command) = &cli.command else {
        bail!("no subcommand given (try --help)");
    };
    cfg.validate().context("invalid configuration")?;
    match command {
        Command::Match => commands::cmd_match(&cfg),
        Command::Aggregate => commands::cmd_aggregate(&cfg),
        Command::Impute => commands::cmd_impute(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg),
        Command::Run => commands::cmd_run(&cfg),
        Command::GridDemo {
            rows,
            cols,
            source,
            sink,
            snapshots,
        } => {
            let demo = GridDemo {
                spec: GridSpec {
                    rows: *rows,
                    cols: *cols,
                    source_value: *source,
                    sink_value: *sink,
                    ..GridSpec::default()
                },
                snapshots: snapshots.clone(),
                out: cfg.output.dir.clone(),
            };
            commands::cmd_grid_demo(&demo, &cfg.impute)
        }
        Command::Export { edges, fraction } => commands::cmd_export(&Export {
            edges: *edges,
            fraction: *fraction,
            seed: cfg.cv.seed,
            out: cfg.output.dir.clone(),
        })
        .map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(netimpute_cli::exit_code(&err) as u8)
        }
    }
}
