//! Experiment harness for the canvas segmentation model: training, anytime evaluation,
//! video seeding, canvas perturbation, cost reports and spectra.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod svg;

pub use commands::{run, Command};
pub use config::RunConfig;

use std::path::Path;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

pub fn exit_code(err: &canvasrnn::Error) -> i32 {
    if err.is_config() {
        exit::CONFIG
    } else {
        exit::RUNTIME
    }
}

/// Loads the config, applies overrides and runs `command`.
pub fn execute(
    command: Command,
    config: &Path,
    seed: Option<u64>,
    out: Option<std::path::PathBuf>,
) -> canvasrnn::Result<String> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply_overrides(seed, out);
    run(command, &cfg)
}
