//! Command-line entry point: landscape generation, staged runs,
//! heuristics explanation, and report emission under a run directory.
//!
//! Exit codes: 0 success, 1 user/config error, 2 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hedgerow::pipeline::{
    build_gateway, emit_reports, explain_heuristics, farm_dir, run_all, run_stage,
    stage_heuristic_files, ExplainRequest, RunConfig, RunManifest,
};
use hedgerow::Error;

#[derive(Parser)]
#[command(name = "hedgerow", version, about = "Evolves farm-level land-use heuristics and the nudge messages that spread them")]
struct Cli {
    /// Root directory for all run artifacts.
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,

    /// Configuration file; falls back to <run-dir>/config.toml, then to
    /// built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    #[value(name = "4")]
    Four,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic landscape and initialize the run manifest.
    GenerateLandscape {
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one pipeline stage (or all of them, resuming checkpoints).
    Run {
        #[arg(long, value_enum)]
        stage: StageArg,
    },
    /// Summarize a farm's evolved heuristics in fitness order.
    Explain {
        #[arg(long)]
        farm: u32,
        /// Which script stage to explain.
        #[arg(long, default_value_t = 2)]
        stage: u32,
        #[arg(long)]
        group_size: Option<usize>,
    },
    /// Regenerate report CSV/SVG pairs from the tracking exports.
    Report,
    /// Continue an interrupted run across every remaining stage.
    Resume,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    if let Some(path) = &cli.config {
        return RunConfig::load(path);
    }
    let snapshot = cli.run_dir.join("config.toml");
    if snapshot.exists() {
        return RunConfig::load(&snapshot);
    }
    Ok(RunConfig::default())
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::GenerateLandscape { seed } => {
            let mut config = load_config(cli)?;
            if let Some(seed) = seed {
                config.seed = *seed;
            }
            let landscape = hedgerow::pipeline::generate_landscape_cmd(&config, &cli.run_dir)?;
            println!(
                "generated {} farms / {} plots under {}",
                landscape.farms.len(),
                landscape.total_plots(),
                cli.run_dir.display()
            );
            Ok(())
        }
        Command::Run { stage } => {
            let config = load_config(cli)?;
            match stage {
                StageArg::All => run_all(&config, &cli.run_dir)?,
                StageArg::One => run_stage(&config, &cli.run_dir, 1)?,
                StageArg::Two => run_stage(&config, &cli.run_dir, 2)?,
                StageArg::Three => run_stage(&config, &cli.run_dir, 3)?,
                StageArg::Four => run_stage(&config, &cli.run_dir, 4)?,
            }
            let mut manifest = RunManifest::load(&cli.run_dir)?;
            manifest.refresh_audit(&cli.run_dir)?;
            manifest.save(&cli.run_dir)?;
            println!("stage(s) complete; manifest updated");
            Ok(())
        }
        Command::Explain {
            farm,
            stage,
            group_size,
        } => {
            let config = load_config(cli)?;
            let gateway = build_gateway(&config, &cli.run_dir)?;
            let farm_stage_dir = farm_dir(&cli.run_dir, *stage, *farm);
            let files = stage_heuristic_files(&farm_stage_dir)?;
            let request = ExplainRequest {
                files,
                group_size: group_size.unwrap_or(config.nudge.explain_group_size),
                checkpoint_dir: farm_stage_dir.join("explain"),
            };
            let summary = explain_heuristics(&request, &gateway)?;
            println!("{summary}");
            Ok(())
        }
        Command::Report => {
            let paths = emit_reports(&cli.run_dir)?;
            for path in &paths {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Resume => {
            let config = load_config(cli)?;
            run_all(&config, &cli.run_dir)?;
            println!("run resumed to completion");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
