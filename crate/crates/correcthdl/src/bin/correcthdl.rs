//! Command-line entry point.
//!
//! Every stage is runnable in isolation for debugging; `run` executes the
//! whole pipeline. Exit codes: 0 success, 1 verification exhaustion or a
//! pipeline failure (the report is still emitted where possible), 2
//! environment errors (missing bindings, unusable config, tool setup).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use correcthdl::metrics::emit_report;
use correcthdl::pipeline::{
    approve_testbench, build_provider, exit_code_for, load_config, pending_approvals,
    run_pipeline_staged, BaselineMode, PipelineConfig, PipelineError,
};
use correcthdl::workspace::{init_workspace, open_workspace, ProjectManifest, Stage};

#[derive(Parser)]
#[command(name = "correcthdl", version, about = "Agentic C/C++-to-HDL design pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Baseline mode override: full, direct-c, direct-nl, no-decompose,
    /// top-feedback-only.
    #[arg(long)]
    mode: Option<BaselineMode>,
    /// Override the manifest's repetition count.
    #[arg(long)]
    rounds: Option<u32>,
    /// Submodule parallelism degree.
    #[arg(long)]
    parallel: Option<usize>,
    /// Skip the human testbench gate (mock bindings only).
    #[arg(long)]
    auto_approve: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Create a workspace skeleton from a project manifest.
    Init {
        #[arg(long)]
        config: PathBuf,
        /// Project manifest file (TOML).
        #[arg(long)]
        manifest: PathBuf,
        /// Re-initialize over an existing workspace.
        #[arg(long)]
        force: bool,
    },
    /// Run decomposition (and its re-integration check) only.
    Decompose(RunArgs),
    /// Run through per-submodule HDL generation.
    Generate(RunArgs),
    /// Run through syntax repair.
    Repair(RunArgs),
    /// Run through submodule differential verification.
    Verify(RunArgs),
    /// Run through top-level integration.
    Integrate(RunArgs),
    /// Run everything including synthesis evaluation.
    Evaluate(RunArgs),
    /// Emit the summary report from existing run records.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run all pipeline stages.
    Run(RunArgs),
    /// Decide a pending testbench approval.
    ApproveTb {
        #[arg(long)]
        config: PathBuf,
        /// Submodule id, or "top".
        unit: Option<String>,
        /// Reject instead of approving.
        #[arg(long)]
        reject: bool,
    },
}

fn apply_overrides(mut config: PipelineConfig, args: &RunArgs) -> PipelineConfig {
    if let Some(mode) = args.mode {
        config.baseline_mode = mode;
    }
    if args.rounds.is_some() {
        config.rounds_override = args.rounds;
    }
    if let Some(k) = args.parallel {
        config.parallelism = k;
    }
    if args.auto_approve {
        config.auto_approve = true;
    }
    config
}

fn staged(args: &RunArgs, stop_after: Option<Stage>) -> Result<i32, PipelineError> {
    let config = apply_overrides(load_config(&args.config)?, args);
    let provider = build_provider(&config.provider)?;
    let outcome = run_pipeline_staged(&config, provider.as_ref(), stop_after)?;
    if let Some(summary) = &outcome.summary {
        println!(
            "benchmark {}: {}/{} rounds reached top-level Pass",
            summary.benchmark, outcome.top_passes, outcome.rounds_run
        );
    } else {
        println!(
            "{}/{} rounds progressed to top-level Pass (partial run)",
            outcome.top_passes, outcome.rounds_run
        );
    }
    Ok(outcome.exit_code)
}

fn dispatch(cli: Cli) -> Result<i32, PipelineError> {
    match cli.command {
        Command::Init {
            config,
            manifest,
            force,
        } => {
            let cfg = load_config(&config)?;
            let text = std::fs::read_to_string(&manifest).map_err(|e| {
                PipelineError::Environment(format!("manifest {}: {e}", manifest.display()))
            })?;
            let manifest: ProjectManifest = toml::from_str(&text).map_err(|e| {
                PipelineError::Environment(format!("manifest parse: {e}"))
            })?;
            let ws = init_workspace(&manifest, &cfg.workspace_root, force)?;
            println!("initialized workspace at {}", ws.root().display());
            Ok(0)
        }
        Command::Decompose(args) => staged(&args, Some(Stage::Decompose)),
        Command::Generate(args) => staged(&args, Some(Stage::GenerateHdl)),
        Command::Repair(args) => staged(&args, Some(Stage::SyntaxRepair)),
        Command::Verify(args) => staged(&args, Some(Stage::SubmoduleVerify)),
        Command::Integrate(args) => staged(&args, Some(Stage::Integrate)),
        Command::Evaluate(args) => staged(&args, Some(Stage::Evaluate)),
        Command::Run(args) => staged(&args, None),
        Command::Report { config } => {
            let cfg = load_config(&config)?;
            let ws = open_workspace(&cfg.workspace_root)?;
            emit_report(&ws)?;
            let text = std::fs::read_to_string(ws.resolve(correcthdl::metrics::SUMMARY_TEXT_FILE))?;
            print!("{text}");
            Ok(0)
        }
        Command::ApproveTb {
            config,
            unit,
            reject,
        } => {
            let cfg = load_config(&config)?;
            let ws = open_workspace(&cfg.workspace_root)?;
            match unit {
                Some(unit) => {
                    let state = approve_testbench(&ws, &unit, !reject)?;
                    println!("testbench for {unit}: {state:?}");
                    Ok(0)
                }
                None => {
                    let pending = pending_approvals(&ws)?;
                    if pending.is_empty() {
                        println!("no testbenches pending approval");
                    } else {
                        for unit in pending {
                            println!("pending: {unit}");
                        }
                    }
                    Ok(0)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err) as u8)
        }
    }
}
