//! Command-line front end: `synth`, `tokenize`, `score`, `evaluate` and the
//! chained `pipeline`.

pub mod args;
mod error;
mod evaluate;
mod fsutil;
mod manifest;
mod overlay;
mod pipeline;
mod score;
mod synth;
mod tokenize;

pub use args::{Cli, Command};
pub use error::{exit_code, ValidationError};
pub use manifest::{RunManifest, StageTiming, VolumeEntry};

/// Runs one parsed command line. `--threads` is applied by the caller.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Tokenize(a) => tokenize::run(a),
        Command::Score(a) => score::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Pipeline(a) => pipeline::run(a),
    }
}
