//! The standard labeled evaluation scenario.
//!
//! Two coupled node pairs over 16 simulated hours (four retraining intervals
//! at the default 4-hour cadence) with six faults covering all four kinds.
//! Faults start in the third interval: the first interval is the warm-up and
//! the second runs against thresholds measured under the untrained initial
//! model, so earlier faults would say nothing about the detector. Nodes hit
//! twice are hit twice within the same interval, keeping every fault scored
//! against thresholds from a clean interval.

use odm_core::synth::{FaultKind, FaultSpec, SynthConfig};
use odm_core::telemetry::Metric;

/// Seconds per retraining interval at the default configuration
/// (1440 buckets of 10 s).
pub const INTERVAL_SECONDS: f64 = 14_400.0;

pub fn standard_config(seed: u64, pairs: usize, duration: u64) -> SynthConfig {
    SynthConfig {
        node_pairs: pairs,
        duration_seconds: duration,
        seed,
        ..SynthConfig::default()
    }
}

/// The six-fault schedule for the standard scenario. Positions assume the
/// default interval length and at least four intervals of data.
pub fn standard_faults() -> Vec<FaultSpec> {
    let i2 = 2.0 * INTERVAL_SECONDS;
    let i3 = 3.0 * INTERVAL_SECONDS;
    vec![
        FaultSpec {
            kind: FaultKind::PowerSpike,
            node_id: "n0".into(),
            metric: Some(Metric::Cpu0Power),
            start: i2 + 1_800.0,
            end: i2 + 2_400.0,
            magnitude: 80.0,
        },
        FaultSpec {
            kind: FaultKind::TempRunaway,
            node_id: "n0".into(),
            metric: Some(Metric::Cpu1Temp),
            start: i2 + 7_200.0,
            end: i2 + 8_100.0,
            magnitude: 25.0,
        },
        FaultSpec {
            kind: FaultKind::StuckSensor,
            node_id: "n1".into(),
            metric: Some(Metric::Cpu0Power),
            start: i2 + 3_600.0,
            end: i2 + 4_500.0,
            magnitude: 1.0,
        },
        FaultSpec {
            kind: FaultKind::PowerSpike,
            node_id: "n1".into(),
            metric: Some(Metric::NodePower),
            start: i2 + 9_000.0,
            end: i2 + 9_600.0,
            magnitude: 150.0,
        },
        FaultSpec {
            kind: FaultKind::PairDivergence,
            node_id: "n3".into(),
            metric: None,
            start: i3 + 2_700.0,
            end: i3 + 3_600.0,
            magnitude: 1.0,
        },
        FaultSpec {
            kind: FaultKind::TempRunaway,
            node_id: "n2".into(),
            metric: Some(Metric::Cpu0Temp),
            start: i3 + 6_000.0,
            end: i3 + 6_900.0,
            magnitude: 25.0,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_covers_all_four_kinds_with_six_faults() {
        let faults = standard_faults();
        assert_eq!(faults.len(), 6);
        for kind in [
            FaultKind::PowerSpike,
            FaultKind::TempRunaway,
            FaultKind::StuckSensor,
            FaultKind::PairDivergence,
        ] {
            assert!(faults.iter().any(|f| f.kind == kind));
        }
        // all faults start after the first two intervals
        assert!(faults.iter().all(|f| f.start >= 2.0 * INTERVAL_SECONDS));
        // and fit inside 16 hours
        assert!(faults.iter().all(|f| f.end <= 4.0 * INTERVAL_SECONDS));
        // nodes hit twice are hit within one interval
        for node in ["n0", "n1"] {
            let windows: Vec<(f64, f64)> = faults
                .iter()
                .filter(|f| f.node_id == node)
                .map(|f| (f.start, f.end))
                .collect();
            assert_eq!(windows.len(), 2);
            let interval_of = |t: f64| (t / INTERVAL_SECONDS) as i64;
            assert_eq!(interval_of(windows[0].0), interval_of(windows[1].0));
        }
    }
}
