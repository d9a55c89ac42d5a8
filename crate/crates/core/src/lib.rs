//! Streaming behavioral-anomaly detection for per-node operational telemetry.
//!
//! The pipeline ingests raw metric samples (CPU power, CPU temperature, node
//! power), downsamples them into 10-second feature rows, reconstructs sliding
//! windows of rows with a small LSTM autoencoder, and flags buckets whose
//! per-feature reconstruction error exceeds the maximum error observed during
//! the previous 4-hour interval. Models, scalers and thresholds are refreshed
//! every interval (progressive retraining), so the detector tracks drifting
//! system behavior without labels.
//!
//! A synthetic telemetry generator with fault injection ([`synth`]) provides
//! labeled data for quantitative evaluation.

// Fixed-width feature vectors read better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod detect;
pub mod model;
pub mod orchestrate;
pub mod preprocess;
pub mod synth;
pub mod telemetry;
pub mod window;

pub use detect::{AnomalyEvent, ThresholdSet};
pub use model::{AutoencoderParams, ModelDims, TrainConfig};
pub use orchestrate::{Engine, EngineConfig};
pub use preprocess::{Scaler, ScalerKind};
pub use telemetry::{FeatureRow, Metric, RawSample, FEATURE_COUNT};
