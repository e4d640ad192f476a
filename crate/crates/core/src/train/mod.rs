//! Experiment configuration, the training loop and the command implementations.
//!
//! A run directory ends up holding `config.toml`, the split `manifest.tsv`,
//! `history.jsonl` / `history.csv`, `best.ckpt`, `last.ckpt` and the test report.

pub mod commands;
pub mod config;
pub mod trainer;

pub use commands::{
    cmd_ablation, cmd_evaluate, cmd_gradcheck, cmd_predict, cmd_synth, cmd_train, prepare_manifest, AblationOutcome,
    Ranked, SeedResult, TrainOutcome,
};
pub use config::{resolve_output, ClassWeighting, ExperimentConfig, OUTPUT_ROOT_ENV};
pub use trainer::{evaluate_params, read_history, write_history, EpochRecord, EvalResult, Trainer};

#[cfg(test)]
mod tests;
