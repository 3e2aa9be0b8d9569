use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lsinv_cli::presets::preset;
use lsinv_cli::{execute, CliError, CliResult, Command, RunConfig};

#[derive(Parser)]
#[command(name = "lsinv", version, about = "Level-set Bayesian inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize data and compute the MAP estimate.
    Reconstruct(Common),
    /// Sweep λ_Φ² over prior.lambda_grid.
    Lcurve(Common),
    /// MAP estimate, posterior samples and pixel variance.
    Uq(Common),
    /// Diagonal-of-inverse estimator benchmark.
    DiagBench(Common),
    /// Write the phantom only.
    Phantom(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset, used as the base config.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides experiment.seed).
    #[arg(long)]
    seed: Option<u64>,
}

fn load(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --config or --preset, not both".into())),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            RunConfig::from_json(&text)?
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(CliError::Config("need --config <path> or --preset <name>".into())),
    };
    if let Some(dir) = &c.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = c.seed {
        cfg.experiment.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Cmd::Reconstruct(c) => (Command::Reconstruct, c),
        Cmd::Lcurve(c) => (Command::Lcurve, c),
        Cmd::Uq(c) => (Command::Uq, c),
        Cmd::DiagBench(c) => (Command::DiagBench, c),
        Cmd::Phantom(c) => (Command::Phantom, c),
    };
    let cfg = match load(common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("lsinv: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let (manifest, err) = execute(command, &cfg);
    if let Some(e) = err {
        eprintln!("lsinv: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let dir = cfg.output.dir.display();
    match (&manifest.solver, manifest.relative_error) {
        (Some(s), Some(rel)) => println!(
            "{dir}: {} GN iterations, {} CG, stop {:?}, relative error {rel:.4}",
            s.gn_iterations, s.total_cg, s.stop
        ),
        _ => println!("{dir}: {} files", manifest.files.len()),
    }
    ExitCode::SUCCESS
}
