use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latent_meshfit::{execute, exit_code, Command, RunConfig, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "latent-meshfit", version, about = "Fit a textured mesh to one image through a latent code")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Key-value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Invert one target bundle, explicit input files, or a directory of bundles.
    Invert,
    /// Mask-loss response to small 3D shape changes.
    Sensitivity,
    /// Inversion quality over the synthetic suite for several eps_s values.
    EpsSweep,
    /// Write synthetic target bundles with known ground truth.
    MakeSynthetic,
    /// Render an OBJ mesh with a texture PNG.
    Render,
    /// Compare analytic gradients with central differences.
    GradCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("out={}", o.display()));
    }
    let cfg = match RunConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let cmd = match cli.command {
        Cmd::Invert => Command::Invert,
        Cmd::Sensitivity => Command::Sensitivity,
        Cmd::EpsSweep => Command::EpsSweep,
        Cmd::MakeSynthetic => Command::MakeSynthetic,
        Cmd::Render => Command::Render,
        Cmd::GradCheck => Command::GradCheck,
    };
    match execute(cmd, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
