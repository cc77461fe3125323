//! The `hand3r` command line: dataset generation, expert and scene
//! pretraining, two-stage training, evaluation and reconstruction export.
//! Every command writes a [`manifest::RunManifest`] with checksums of its
//! outputs.

pub mod commands;
pub mod export;
pub mod manifest;

pub use commands::{run, Cli, Command, Outcome};
pub use manifest::RunManifest;
