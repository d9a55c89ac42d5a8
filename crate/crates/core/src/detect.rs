//! Per-feature reconstruction errors, interval thresholds, and anomaly
//! events.
//!
//! The threshold for each feature during interval `k` is the maximum error
//! that feature showed during interval `k-1`; a bucket whose error strictly
//! exceeds the threshold raises one event per offending feature.

use serde::Serialize;
use thiserror::Error;

use crate::telemetry::{Metric, FEATURE_COUNT};

/// Per-feature anomaly thresholds valid for one retraining interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    /// Thresholds in scaled space, one per feature.
    pub per_feature: [f64; FEATURE_COUNT],
    /// Interval whose errors defined these thresholds.
    pub source_interval: u64,
    /// Number of error rows observed in the source interval.
    pub row_count: usize,
}

/// One per-feature threshold violation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyEvent {
    /// Bucket start in seconds.
    pub t: i64,
    pub node: String,
    pub feature: Metric,
    /// Absolute reconstruction error in scaled space.
    pub error: f64,
    /// Active threshold in scaled space.
    pub threshold: f64,
    /// Observed value in physical units.
    pub value: f64,
    /// Averaged reconstruction mapped back to physical units.
    pub reconstructed: f64,
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("cannot compute thresholds for an interval with no errors")]
    EmptyInterval,
}

/// Absolute difference per feature, in scaled space.
pub fn per_feature_error(
    prediction: &[f64; FEATURE_COUNT],
    actual: &[f64; FEATURE_COUNT],
) -> [f64; FEATURE_COUNT] {
    let mut out = [0.0; FEATURE_COUNT];
    for f in 0..FEATURE_COUNT {
        out[f] = (prediction[f] - actual[f]).abs();
    }
    out
}

/// Per-feature maximum over the interval's error vectors.
pub fn update_thresholds(
    interval_errors: &[[f64; FEATURE_COUNT]],
    interval_id: u64,
) -> Result<ThresholdSet, DetectError> {
    if interval_errors.is_empty() {
        return Err(DetectError::EmptyInterval);
    }
    let mut per_feature = [0.0f64; FEATURE_COUNT];
    for errs in interval_errors {
        for f in 0..FEATURE_COUNT {
            per_feature[f] = per_feature[f].max(errs[f]);
        }
    }
    Ok(ThresholdSet {
        per_feature,
        source_interval: interval_id,
        row_count: interval_errors.len(),
    })
}

/// Physical-unit context attached to emitted events.
pub struct EventContext<'a> {
    pub bucket_start: i64,
    pub node_id: &'a str,
    pub raw: &'a [f64; FEATURE_COUNT],
    pub reconstructed_raw: &'a [f64; FEATURE_COUNT],
}

/// Emits one event per feature whose error strictly exceeds its threshold.
pub fn detect(
    errors: &[f64; FEATURE_COUNT],
    thresholds: &ThresholdSet,
    ctx: &EventContext<'_>,
) -> Vec<AnomalyEvent> {
    let mut events = Vec::new();
    for f in 0..FEATURE_COUNT {
        if errors[f] > thresholds.per_feature[f] {
            events.push(AnomalyEvent {
                t: ctx.bucket_start,
                node: ctx.node_id.to_string(),
                feature: Metric::from_index(f).expect("feature index in range"),
                error: errors[f],
                threshold: thresholds.per_feature[f],
                value: ctx.raw[f],
                reconstructed: ctx.reconstructed_raw[f],
            });
        }
    }
    events
}
