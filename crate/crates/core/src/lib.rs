//! Device-free fall detection from WiFi channel state information.
//!
//! The pipeline resamples and low-pass filters CSI streams ([`preprocess`]),
//! finds the ends of fall and fall-like activities from the variance of the
//! inter-antenna phase difference ([`segmentation`]), describes each activity
//! window with amplitude and phase statistics ([`features`]) and separates
//! falls with a one-class SVM ([`ocsvm`]). [`synth`] generates labeled
//! synthetic traces and [`harness`] runs and scores the whole detector.

pub mod config;
pub mod features;
pub mod harness;
pub mod ocsvm;
pub mod par;
pub mod preprocess;
pub mod segmentation;
pub mod synth;
pub mod trace;

pub use config::Config;
pub use features::{ChannelMode, FeatureVector, Scaler};
pub use ocsvm::OcSvmModel;
pub use par::Execution;
pub use segmentation::{ActivitySegment, StableThreshold};
pub use trace::{CsiPacket, CsiSample, CsiTrace, TraceMeta};
