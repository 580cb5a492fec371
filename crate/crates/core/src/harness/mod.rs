//! Synthetic data, click-log files, configuration and the streaming
//! experiment protocol.

mod config;
mod duration;
mod experiment;
mod generator;
mod io;

pub use config::{Anchors, ExperimentConfig, ModelKind, ModelSpec, WindowSpec};
pub use duration::{format_duration, parse_duration, parse_duration_list};
pub use experiment::{
    evaluate_model, model_metadata, run_experiment, run_methods, run_roster, sweep_window,
    train_configured, AnyModel, MethodRun, MethodSpec, Session, ORACLE, PRETRAINED,
};
pub use generator::{generate_calibrated, generate_events, Calibration, GeneratorConfig, Preset};
pub use io::{
    infer_vocab_sizes, load_events, read_events, save_events, write_events, ColumnProfile,
    FeatureEncoding,
};

/// FNV-1a, stable across platforms and releases.
pub(crate) fn stable_hash(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}
