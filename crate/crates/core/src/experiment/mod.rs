//! Config-driven experiments and their on-disk artifacts.

pub mod checkpoint;
pub mod config;
pub mod runner;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{parse_config, DatasetSpec, ExperimentConfig, Mode, ParsedConfig};
pub use runner::{compute, run_experiment, Command, RunRecord, RunSummary};
