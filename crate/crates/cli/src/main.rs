use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dsgd_rer::harness::plot::{emit_plot, PlotStyle};
use dsgd_rer::harness::summary::summarize_against;
use dsgd_rer::harness::{self, config::ExperimentConfig, verify};

/// Distributed LTI identification with reverse-experience-replay SGD.
#[derive(Parser)]
#[command(name = "dsgd-rer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep entry of a config file or preset.
    Run(RunArgs),
    /// Run a sweep over network sizes (default preset: size-desk).
    SweepSize(RunArgs),
    /// Run a sweep over topologies (default preset: topology-desk).
    SweepTopology(RunArgs),
    /// Run the numerical property suite.
    Verify {
        /// Smaller Monte-Carlo sizes.
        #[arg(long)]
        quick: bool,
    },
    /// Render trace CSVs as an SVG plot.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
    /// Final-error table across seeds.
    Summarize {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Group the ratio column is relative to (default: the first).
        #[arg(long)]
        reference: Option<String>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Preset name or path to a TOML config.
    config: Option<String>,
    /// Worker threads (0 = one per core).
    #[arg(short, long, default_value_t = 0)]
    jobs: usize,
    /// Output directory; overrides the config and the environment.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq)]
enum Sweep {
    Any,
    Size,
    Topology,
}

#[derive(Debug)]
struct AcceptanceFailure(usize);

impl std::fmt::Display for AcceptanceFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} hard check(s) failed", self.0)
    }
}

impl std::error::Error for AcceptanceFailure {}

fn run(args: RunArgs, sweep: Sweep) -> Result<()> {
    let name = match (&args.config, sweep) {
        (Some(c), _) => c.clone(),
        (None, Sweep::Size) => "size-desk".into(),
        (None, Sweep::Topology) => "topology-desk".into(),
        (None, Sweep::Any) => bail!(dsgd_rer::Error::Config("run needs a config file or preset".into())),
    };
    let cfg = ExperimentConfig::load(&name)?;
    if sweep == Sweep::Size && cfg.network.agents.len() < 2 {
        bail!(dsgd_rer::Error::Config(format!("{name} does not sweep network.agents")));
    }
    if sweep == Sweep::Topology && cfg.network.topologies.len() < 2 {
        bail!(dsgd_rer::Error::Config(format!("{name} does not sweep network.topologies")));
    }
    let dir = args.out.unwrap_or_else(|| cfg.output_dir());
    let outputs = harness::run_experiment(&cfg, args.jobs)?;
    let manifest = harness::write_outputs(&cfg, &outputs, &dir).with_context(|| format!("writing {}", dir.display()))?;
    let traces: Vec<_> = outputs.into_iter().map(|o| o.trace).collect();
    print!("{}", summarize_against(&traces, None)?.to_text());
    println!("wrote {} traces and {}", traces.len(), manifest.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(args, Sweep::Any),
        Command::SweepSize(args) => run(args, Sweep::Size),
        Command::SweepTopology(args) => run(args, Sweep::Topology),
        Command::Verify { quick } => {
            let checks = verify::run_verify(quick)?;
            let mut failed = 0;
            for c in &checks {
                let status = match (c.passed, c.hard) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "INFO",
                };
                failed += usize::from(!c.passed && c.hard);
                println!("{status}  {}  (margin {:.3e})", c.name, c.margin);
            }
            if failed > 0 {
                bail!(AcceptanceFailure(failed));
            }
            println!("all {} checks passed", checks.len());
            Ok(())
        }
        Command::Plot { traces, output, title } => {
            let traces = harness::load_traces(&traces)?;
            if traces.is_empty() {
                bail!(dsgd_rer::Error::InvalidArgument("no traces to plot".into()));
            }
            let style = PlotStyle {
                title,
                ..PlotStyle::default()
            };
            std::fs::write(&output, emit_plot(&traces, &style)).with_context(|| format!("writing {}", output.display()))?;
            Ok(())
        }
        Command::Summarize { traces, reference, csv } => {
            let traces = harness::load_traces(&traces)?;
            let summary = summarize_against(&traces, reference.as_deref())?;
            print!("{}", summary.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, summary.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Presets => {
            for name in harness::config::preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

/// 1 for bad input, 2 for numerical failures, 3 for failed checks.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<AcceptanceFailure>().is_some() {
        return 3;
    }
    match err.downcast_ref::<dsgd_rer::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
