//! Block-parallel passive acoustic detection and classification.
//!
//! The pipeline indexes multi-channel sound archives ([`archive`]), turns
//! audio into conditioned spectrograms ([`dsp`]), runs two detector families
//! over time blocks (frequency-modulated calls in [`fmdetect`], pulse trains
//! in [`ptdetect`]), schedules the work across a worker pool ([`sched`]),
//! rescores detections with an expert-trained network ([`postclass`]) and
//! aggregates results for reporting ([`report`]).

pub mod archive;
pub mod dsp;
pub mod event;
pub mod fmdetect;
pub mod mlp;
pub mod postclass;
pub mod ptdetect;
pub mod report;
pub mod sched;
pub mod synth;
pub mod time;

pub use archive::{ArchiveIndex, AudioClip};
pub use event::DetectionEvent;
pub use mlp::MlpModel;
pub use time::{Interval, Timestamp};
