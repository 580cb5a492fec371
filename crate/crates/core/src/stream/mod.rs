//! Click events, window taxonomy and training-stream construction.

mod build;
mod event;
mod window;
mod window_model;

pub use build::{
    build_stream, build_stream_with, chunk_by_hour, HourBatch, Occurrence, StreamPolicy,
    StreamRecord,
};
pub use event::{ClickEvent, Delay, DomainId, GroundTruth};
pub use window::{classify_sample, SampleKind, WindowConfig, DAY, HOUR};
pub use window_model::{
    argmax_window, predict_attribution_window, predict_waiting_window, WindowModel,
};
