//! Command implementations behind the `latent-meshfit` binary.

pub mod config;
pub mod gradsuite;
pub mod invert;
pub mod io;
pub mod model;
pub mod pool;
pub mod sensitivity;
pub mod suite;
pub mod synthetic;

use anyhow::Result;

pub use config::{ConfigError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Invert,
    Sensitivity,
    EpsSweep,
    MakeSynthetic,
    Render,
    GradCheck,
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Raised when `grad-check` finds a gradient outside tolerance.
#[derive(Debug, thiserror::Error)]
#[error("{0} gradient checks exceeded their tolerance")]
pub struct GradCheckFailed(pub usize);

/// Validates `cfg`, records it in the output directory and runs `cmd`.
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    io::create_dir(&cfg.out)?;
    std::fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    match cmd {
        Command::Invert => invert::command(cfg),
        Command::Sensitivity => sensitivity::command(cfg),
        Command::EpsSweep => suite::eps_sweep_command(cfg),
        Command::MakeSynthetic => suite::make_synthetic_command(cfg),
        Command::Render => suite::render_command(cfg),
        Command::GradCheck => {
            let failed = suite::grad_check_command(cfg)?;
            if failed > 0 {
                return Err(GradCheckFailed(failed).into());
            }
            Ok(())
        }
    }
}

/// Process exit code for an error: config problems first, then numerical aborts.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        return EXIT_CONFIG;
    }
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<meshfit_core::Error>()
            .is_some_and(|e| e.is_numerical())
            || e.is::<GradCheckFailed>()
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_OTHER
    }
}
