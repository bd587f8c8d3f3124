use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use periodic_bernoulli::pipeline::{self, RunConfig, RunOptions};
use periodic_bernoulli::{io, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "bernoulli-fb", version, about = "Periodic one-phase Bernoulli free-boundary toolkit")]
struct Cli {
    /// Omit thread counts and timings from the manifest.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads for the data-parallel kernels.
    #[arg(long, global = true, env = "FB_THREADS")]
    threads: Option<usize>,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Critical heads, flat heights and the gamma classification.
    Regimes {
        #[arg(long)]
        config: PathBuf,
    },
    /// Minimize and run the enabled diagnostics.
    Solve {
        /// TOML config or the manifest.json of an earlier run.
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-run diagnostics on the solution stored in a run directory.
    Diagnose {
        run_dir: PathBuf,
        /// Diagnostics configuration; defaults to the run's own manifest.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Energy, free-boundary and Weiss differences between two runs.
    Compare { run_a: PathBuf, run_b: PathBuf },
}

#[derive(Serialize)]
struct ErrorReport {
    schema_version: u32,
    status: &'static str,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    message: String,
    exit_code: i32,
}

fn output_dir(cli_out: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf> {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config {
            field: "output_dir".into(),
            message: "set output_dir in the config or pass --out".into(),
        })
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable report"));
}

fn execute(cli: &Cli) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(Error::Config {
            field: "--threads".into(),
            message: "must be positive".into(),
        });
    }
    match &cli.command {
        Command::Regimes { config } => {
            let cfg = RunConfig::load(config)?;
            let opts = RunOptions {
                out: output_dir(cli.out.as_deref(), &cfg)?,
                threads: cli.threads,
                deterministic: cli.deterministic,
            };
            let manifest = pipeline::run_regimes(&cfg, &opts)?;
            let regime: serde_json::Value = io::read_json(&opts.out.join("regime.json"))?;
            log::info!("wrote {} artifacts to {}", manifest.artifacts.len(), opts.out.display());
            print_json(&regime);
        }
        Command::Solve { config } => {
            let cfg = RunConfig::load(config)?;
            let opts = RunOptions {
                out: output_dir(cli.out.as_deref(), &cfg)?,
                threads: cli.threads,
                deterministic: cli.deterministic,
            };
            let manifest = pipeline::run(&cfg, &opts)?;
            log::info!("wrote {} artifacts to {}", manifest.artifacts.len(), opts.out.display());
            match &manifest.solution {
                Some(s) => print_json(s),
                None => print_json(&manifest),
            }
        }
        Command::Diagnose { run_dir, config } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let manifest = pipeline::diagnose(run_dir, cfg.as_ref(), cli.threads)?;
            print_json(&manifest.diagnostic_errors);
        }
        Command::Compare { run_a, run_b } => {
            let report = pipeline::compare(run_a, run_b)?;
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out).map_err(|e| Error::Io {
                    path: out.clone(),
                    source: e,
                })?;
                io::write_json(&out.join("compare.json"), &report)?;
            }
            print_json(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.exit_code();
            let field = match &err {
                Error::Config { field, .. } => Some(field.clone()),
                _ => None,
            };
            let report = ErrorReport {
                schema_version: io::SCHEMA_VERSION,
                status: "error",
                kind: err.kind(),
                field,
                message: err.to_string(),
                exit_code: code,
            };
            eprintln!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
            ExitCode::from(code as u8)
        }
    }
}
