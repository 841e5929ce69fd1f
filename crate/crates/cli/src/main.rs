use clap::{Args, Parser, Subcommand};
use std::io::Read;
use std::path::PathBuf;
use swipt_bench::commands::{
    run_command, ConfigSource, Invocation, OutputFormat, ReportArgs, RunArgs, SweepArgs,
    ValidateArgs, EXIT_VALIDATION,
};
use swipt_core::harness::{Controller, SweepParameter};

/// Benchmark harness for the SWIPT sensor-network simulator: per-slot
/// drift-plus-penalty control, policy-gradient actor-critic, and
/// cross-domain lifelong learning.
#[derive(Parser)]
#[command(name = "swipt-bench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Path to a sectioned key/value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shipped preset instead of a file: `table1` or `table2`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Output format: csv, json, or both.
    #[arg(long, default_value = "both")]
    format: String,
    /// Also write SVG charts.
    #[arg(long)]
    plot: bool,
    /// Maximum concurrent (controller, seed) runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Restrict to a comma-separated controller subset.
    #[arg(long)]
    controllers: Option<String>,
    /// Resume a lifelong run from a saved knowledge file.
    #[arg(long)]
    kb_in: Option<PathBuf>,
    /// Save the lifelong knowledge state after the run.
    #[arg(long)]
    kb_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment sequence.
    Run(CommonArgs),
    /// Sweep one environment parameter over its grid.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter to sweep: conv-eff, n-nodes, or eh-dynamicity.
        #[arg(long)]
        param: String,
    },
    /// Run several controllers on the same config and emit a comparison
    /// summary.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Recompute summaries (and charts) from an existing rows.csv.
    Report {
        /// Previously written rows.csv.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        plot: bool,
    },
    /// Parse and validate a config without running anything.
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Read the config text from standard input.
        #[arg(long)]
        stdin: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_common(common: CommonArgs, require_controllers: bool) -> Result<RunArgs, String> {
    let config = match (common.config, common.preset) {
        (Some(path), None) => ConfigSource::Path(path),
        (None, Some(preset)) => ConfigSource::Preset(preset),
        (None, None) => return Err("one of --config or --preset is required".into()),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let controllers = match &common.controllers {
        Some(list) => Some(
            list.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(Controller::parse)
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    if require_controllers && controllers.is_none() {
        return Err("compare requires --controllers".into());
    }
    Ok(RunArgs {
        config,
        seed: common.seed,
        out: common.out,
        format: OutputFormat::parse(&common.format)?,
        plot: common.plot,
        jobs: common.jobs,
        controllers,
        kb_in: common.kb_in,
        kb_out: common.kb_out,
    })
}

fn main() {
    let cli = Cli::parse();
    let invocation = match cli.command {
        Command::Run(common) => parse_common(common, false).map(Invocation::Run),
        Command::Compare { common } => parse_common(common, true).map(Invocation::Compare),
        Command::Sweep { common, param } => parse_common(common, false).and_then(|common| {
            Ok(Invocation::Sweep(SweepArgs { common, parameter: SweepParameter::parse(&param)? }))
        }),
        Command::Report { input, out, plot } => Ok(Invocation::Report(ReportArgs { input, out, plot })),
        Command::ValidateConfig { config, stdin, seed } => {
            let stdin_text = if stdin {
                let mut buf = String::new();
                match std::io::stdin().read_to_string(&mut buf) {
                    Ok(_) => Some(buf),
                    Err(e) => {
                        eprintln!("swipt-bench: status=error command=validate-config kind=validation msg=\"cannot read stdin: {e}\"");
                        std::process::exit(EXIT_VALIDATION);
                    }
                }
            } else {
                None
            };
            Ok(Invocation::ValidateConfig(ValidateArgs { config, stdin_text, seed }))
        }
    };
    match invocation {
        Ok(inv) => std::process::exit(run_command(inv)),
        Err(msg) => {
            eprintln!("swipt-bench: status=error kind=validation msg={msg:?}");
            std::process::exit(EXIT_VALIDATION);
        }
    }
}
