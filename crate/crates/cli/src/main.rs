use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use edtriage::dataset::{generate_synthetic_with, write_dataset, LoadOptions, SchemaMap, SyntheticOptions};
use edtriage::experiment::{
    cmd_audit, cmd_evaluate, cmd_ingest, cmd_report, cmd_sweep, cmd_validate, CommandOutput, ExperimentConfig,
};
use edtriage::Protocol;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "edtriage", version, about = "Evaluate and audit chat models on emergency-department triage")]
struct Cli {
    /// Log filter, e.g. `info` or `edtriage=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file and print every problem found.
    Validate {
        config: PathBuf,
        /// Also try to reach every non-mock endpoint.
        #[arg(long)]
        check_endpoints: bool,
        /// Print the config with defaults filled in.
        #[arg(long)]
        print_resolved: bool,
    },
    /// Convert a dataset file to the canonical CSV layout.
    Ingest {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "ESI")]
        protocol: Protocol,
        /// Column mapping `canonical=source`, repeatable.
        #[arg(long = "map", value_parser = parse_mapping)]
        mappings: Vec<(String, String)>,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
    /// Write a synthetic dataset in canonical CSV form.
    Synthesize {
        output: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "ESI")]
        protocol: Protocol,
        #[arg(long, default_value_t = 0.1)]
        missing_rate: f64,
    },
    /// Run every configured (endpoint, strategy) pair on the test split.
    Evaluate { config: PathBuf },
    /// Run the 12-variant sex x race counterfactual audit.
    Audit { config: PathBuf },
    /// Evaluate shot-based strategies at each `sweep_shots` count.
    SweepShots { config: PathBuf },
    /// Verify an output directory against its manifest and print its table.
    Report { dir: PathBuf },
}

fn parse_mapping(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected canonical=source, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn init_logging(filter: Option<&str>) {
    let filter = match filter {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
    };
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_output(out: &CommandOutput) {
    print!("{}", out.summary);
    println!("\nwrote {} files to {}", out.manifest.outputs.len(), out.dir.display());
    println!("outputs digest {}", out.manifest.outputs_digest);
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { config, check_endpoints, print_resolved } => {
            let report = cmd_validate(&config, check_endpoints);
            if print_resolved {
                if let Some(resolved) = &report.resolved_toml {
                    print!("{resolved}");
                }
            }
            if report.is_valid() {
                println!("{}: ok", config.display());
                return Ok(ExitCode::SUCCESS);
            }
            for f in &report.findings {
                eprintln!("{f}");
            }
            eprintln!("{}: {} problem(s)", config.display(), report.findings.len());
            Ok(ExitCode::from(2))
        }
        Command::Ingest { input, output, protocol, mappings, delimiter } => {
            let opts = LoadOptions {
                schema_map: mappings.into_iter().collect::<SchemaMap>(),
                delimiter,
                ..LoadOptions::new(protocol)
            };
            let s = cmd_ingest(&input, &opts, &output)?;
            println!("{} records written to {}", s.accepted, output.display());
            println!("{} rows rejected, see {}", s.rejected, s.rejections_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Synthesize { output, n, seed, protocol, missing_rate } => {
            if !(0.0..=1.0).contains(&missing_rate) {
                bail!("--missing-rate must be in [0, 1]");
            }
            let data = generate_synthetic_with(&SyntheticOptions { n, seed, protocol, missing_rate, ..Default::default() });
            write_dataset(&data, &output, ',')?;
            println!("{} records written to {}", data.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { config } => {
            print_output(&cmd_evaluate(&load_config(&config)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit { config } => {
            print_output(&cmd_audit(&load_config(&config)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepShots { config } => {
            print_output(&cmd_sweep(&load_config(&config)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            let check = cmd_report(&dir)?;
            print!("{}", check.text);
            if check.problems.is_empty() {
                return Ok(ExitCode::SUCCESS);
            }
            for p in &check.problems {
                eprintln!("integrity: {p}");
            }
            Ok(ExitCode::from(3))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log.as_deref());
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
