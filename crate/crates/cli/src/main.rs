use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod pipeline;

use commands::{BaselineMethod, RocMethod};
use config::{PipelineConfig, SynthConfig};
use error::{CliError, CliResult};

/// Commute-time embedding and clustering of time-series datasets.
#[derive(Parser, Debug)]
#[command(name = "ctmap", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset path (overrides [input] path).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory (overrides [output] dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Graph, eigendecomposition and commute-time embedding.
    Embed(PipelineArgs),
    /// Embedding followed by background split and angular clustering.
    Cluster(PipelineArgs),
    /// Synthetic disk phantoms with ground truth.
    Synth {
        /// TOML phantom spec; defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// ROC curves averaged over realizations.
    Roc {
        /// NAME=FILE[,FILE...]; score files in realization order.
        #[arg(long = "method", required = true)]
        methods: Vec<String>,
        /// Truth CSVs, comma separated, in realization order.
        #[arg(long, value_delimiter = ',', required = true)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of uniform FPR grid intervals.
        #[arg(long, default_value_t = 1000)]
        grid: usize,
    },
    /// Reference methods: PCA, ISOMAP or GLM t-map.
    Baseline {
        #[command(flatten)]
        args: PipelineArgs,
        #[arg(long, value_enum)]
        method: BaselineMethod,
    },
    /// Compares spectral commute times with the random-walk oracle.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        graphs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn pipeline_config(args: &PipelineArgs) -> CliResult<PipelineConfig> {
    let cwd = Path::new(".");
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let mut c = PipelineConfig::default();
            c.resolve_paths(cwd);
            c
        }
    };
    if let Some(p) = &args.input {
        cfg.input.path = Some(config::absolute(cwd, p));
    }
    if let Some(p) = &args.out {
        cfg.output.dir = config::absolute(cwd, p);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_method(s: &str) -> CliResult<RocMethod> {
    let (name, files) = s.split_once('=').ok_or_else(|| {
        CliError::Invalid(format!("--method expects NAME=FILE[,FILE...], got {s:?}"))
    })?;
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(CliError::Invalid(format!("bad method name {name:?}")));
    }
    Ok(RocMethod {
        name: name.to_string(),
        files: files
            .split(',')
            .filter(|f| !f.is_empty())
            .map(PathBuf::from)
            .collect(),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Embed(args) => commands::cmd_embed(&pipeline_config(&args)?),
        Command::Cluster(args) => commands::cmd_cluster(&pipeline_config(&args)?),
        Command::Baseline { args, method } => {
            commands::cmd_baseline(&pipeline_config(&args)?, method)
        }
        Command::Synth {
            spec,
            out,
            seed,
            realizations,
        } => {
            let mut cfg = match spec {
                Some(p) => SynthConfig::load(&p)?,
                None => SynthConfig::default(),
            };
            if let Some(o) = out {
                cfg.output.dir = config::absolute(Path::new("."), &o);
            }
            if let Some(s) = seed {
                cfg.phantom.seed = s;
            }
            if let Some(r) = realizations {
                cfg.phantom.realizations = r;
            }
            commands::cmd_synth(&cfg)
        }
        Command::Roc {
            methods,
            truth,
            out,
            grid,
        } => {
            let methods = methods
                .iter()
                .map(|m| parse_method(m))
                .collect::<CliResult<Vec<_>>>()?;
            commands::cmd_roc(&methods, &truth, grid, &out)
        }
        Command::OracleCheck { graphs, seed, out } => {
            commands::cmd_oracle_check(graphs, seed, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(ctmap_core::Error::Disconnected { component_sizes }) = &e {
                eprintln!(
                    "hint: {} components; increase [graph] n_neighbors",
                    component_sizes.len()
                );
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
