use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fewphoton_cli::{resolve_output_dir, run, Command, RunConfig, RunOptions, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "fewphoton", version, about = "Few-photon Fourier-transform spectroscopy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Counted and analytic interferograms with visibility fits.
    Interferogram(Common),
    /// Interferogram transform, deconvolution and analyser comparison.
    Fts(Common),
    /// Visibility and analyser R² against photons per gate.
    Effectiveness(Common),
    /// Closed-form visibility against intensity ratio and polarization angle.
    VisibilityCurves(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides FEWPHOTON_OUT_DIR and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the detector Monte Carlo.
    #[arg(long)]
    analytic_only: bool,
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let (command, common) = match cli.command {
        Cmd::Interferogram(c) => (Command::Interferogram, c),
        Cmd::Fts(c) => (Command::Fts, c),
        Cmd::Effectiveness(c) => (Command::Effectiveness, c),
        Cmd::VisibilityCurves(c) => (Command::VisibilityCurves, c),
    };
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("invalid config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let env = std::env::var(OUT_DIR_ENV).ok();
    let out = resolve_output_dir(common.out.as_deref(), env.as_deref(), &cfg);
    let opts = RunOptions {
        analytic_only: common.analytic_only,
    };
    let meta = run(command, &cfg, &out, opts)?;
    log::info!("wrote {} files to {}", meta.files.len() + 1, out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
