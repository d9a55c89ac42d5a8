//! Synthetic telemetry for coupled node pairs, with injectable faults and a
//! precision/recall scoring harness.
//!
//! Each pair shares a cooling-induced load correlation: the second node's
//! job load mixes the first node's load with an independent one. CPU
//! temperatures follow CPU power through a first-order lag filter, so the
//! generated features carry the power->temperature delay structure the
//! detector is meant to exploit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::detect::AnomalyEvent;
use crate::telemetry::{Metric, RawSample};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub node_pairs: usize,
    pub duration_seconds: u64,
    pub sample_period_seconds: f64,
    /// Idle CPU power in watts.
    pub base_power: f64,
    /// Power added while a job runs, in watts.
    pub load_amplitude: f64,
    /// Job on/off square-wave period in seconds.
    pub job_period_seconds: f64,
    /// Gaussian noise on every power sample, in watts.
    pub noise_std: f64,
    pub temp_ambient: f64,
    /// Degrees per watt of CPU power.
    pub temp_gain: f64,
    /// First-order filter coefficient per sample, in (0, 1].
    pub temp_lag_alpha: f64,
    /// Load correlation within a pair, in [0, 1].
    pub pair_coupling: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            node_pairs: 1,
            duration_seconds: 3600,
            sample_period_seconds: 1.0,
            base_power: 100.0,
            load_amplitude: 40.0,
            job_period_seconds: 600.0,
            noise_std: 2.0,
            temp_ambient: 35.0,
            temp_gain: 0.3,
            temp_lag_alpha: 0.05,
            pair_coupling: 0.8,
            seed: 1,
        }
    }
}

impl SynthConfig {
    // negated comparisons reject NaN too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.node_pairs == 0
            || self.duration_seconds == 0
            || !(self.sample_period_seconds > 0.0)
            || !(self.job_period_seconds > 0.0)
            || !(self.temp_lag_alpha > 0.0 && self.temp_lag_alpha <= 1.0)
            || !(0.0..=1.0).contains(&self.pair_coupling)
            || self.noise_std < 0.0
        {
            return Err(SynthError::InvalidConfig);
        }
        Ok(())
    }

    pub fn node_name(pair: usize, side: usize) -> String {
        format!("n{}", pair * 2 + side)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    PowerSpike,
    TempRunaway,
    StuckSensor,
    PairDivergence,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::PowerSpike => "power_spike",
            FaultKind::TempRunaway => "temp_runaway",
            FaultKind::StuckSensor => "stuck_sensor",
            FaultKind::PairDivergence => "pair_divergence",
        }
    }
}

impl std::str::FromStr for FaultKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "power_spike" => Ok(FaultKind::PowerSpike),
            "temp_runaway" => Ok(FaultKind::TempRunaway),
            "stuck_sensor" => Ok(FaultKind::StuckSensor),
            "pair_divergence" => Ok(FaultKind::PairDivergence),
            _ => Err(()),
        }
    }
}

/// One fault to inject over `[start, end)` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub node_id: String,
    /// Target metric; ignored by `PairDivergence`, which rewrites both CPU
    /// power channels.
    pub metric: Option<Metric>,
    pub start: f64,
    pub end: f64,
    pub magnitude: f64,
}

/// Ground-truth anomaly window; `metric = None` means the whole node.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub node_id: String,
    pub metric: Option<Metric>,
    pub start: f64,
    pub end: f64,
    pub kind: FaultKind,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub samples: Vec<RawSample>,
    pub labels: Vec<Label>,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator configuration")]
    InvalidConfig,
    #[error("fault window [{start}, {end}) outside the dataset time range")]
    FaultOutOfRange { start: f64, end: f64 },
    #[error("fault magnitude must be positive and finite")]
    InvalidMagnitude,
    #[error("fault targets unknown node `{0}`")]
    UnknownNode(String),
    #[error("fault kind requires a target metric")]
    MissingMetric,
}

fn pair_rng(seed: u64, pair: usize, tag: u8) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(pair as u64).to_le_bytes());
    bytes[16] = tag;
    ChaCha8Rng::from_seed(bytes)
}

/// One logical job-load signal: on/off square wave plus a slow sinusoid.
#[derive(Debug, Clone)]
struct LoadSignal {
    square_phase: f64,
    sine_phase: f64,
}

impl LoadSignal {
    fn draw<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> Self {
        LoadSignal {
            square_phase: rng.gen_range(0.0..cfg.job_period_seconds),
            sine_phase: rng.gen_range(0.0..3600.0),
        }
    }

    fn at(&self, t: f64, cfg: &SynthConfig) -> f64 {
        let phase = (t + self.square_phase) % cfg.job_period_seconds;
        let square = if phase < cfg.job_period_seconds / 2.0 {
            1.0
        } else {
            0.0
        };
        cfg.load_amplitude * square
            + cfg.load_amplitude / 4.0
                * (2.0 * std::f64::consts::PI * (t + self.sine_phase) / 3600.0).sin()
    }
}

struct NodeState {
    node_id: String,
    /// Previous temperature per CPU, for the lag filter.
    temp: [Option<f64>; 2],
}

/// Generates the unfaulted sample stream. Identical config and seed produce
/// a bitwise identical stream.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<RawSample>, SynthError> {
    cfg.validate()?;
    let steps = (cfg.duration_seconds as f64 / cfg.sample_period_seconds).ceil() as u64;
    let mut samples = Vec::with_capacity((steps as usize) * cfg.node_pairs * 10);

    struct PairGen {
        primary: LoadSignal,
        secondary: LoadSignal,
        noise: ChaCha8Rng,
        nodes: [NodeState; 2],
    }

    let normal = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let noise_enabled = cfg.noise_std > 0.0;
    let mut pairs: Vec<PairGen> = (0..cfg.node_pairs)
        .map(|p| {
            let mut phases = pair_rng(cfg.seed, p, 0);
            PairGen {
                primary: LoadSignal::draw(&mut phases, cfg),
                secondary: LoadSignal::draw(&mut phases, cfg),
                noise: pair_rng(cfg.seed, p, 1),
                nodes: [
                    NodeState {
                        node_id: SynthConfig::node_name(p, 0),
                        temp: [None, None],
                    },
                    NodeState {
                        node_id: SynthConfig::node_name(p, 1),
                        temp: [None, None],
                    },
                ],
            }
        })
        .collect();

    for step in 0..steps {
        let t = step as f64 * cfg.sample_period_seconds;
        for pair in pairs.iter_mut() {
            let load_a = pair.primary.at(t, cfg);
            let load_b_own = pair.secondary.at(t, cfg);
            let load_b = cfg.pair_coupling * load_a + (1.0 - cfg.pair_coupling) * load_b_own;
            for (side, load) in [(0usize, load_a), (1usize, load_b)] {
                let mut cpu_power = [0.0f64; 2];
                let mut cpu_temp = [0.0f64; 2];
                for cpu in 0..2 {
                    let noise = if noise_enabled {
                        normal.sample(&mut pair.noise)
                    } else {
                        0.0
                    };
                    let power = cfg.base_power + load + noise;
                    let target = cfg.temp_ambient + cfg.temp_gain * power;
                    let prev = pair.nodes[side].temp[cpu].unwrap_or(cfg.temp_ambient);
                    let temp = prev + cfg.temp_lag_alpha * (target - prev);
                    pair.nodes[side].temp[cpu] = Some(temp);
                    cpu_power[cpu] = power;
                    cpu_temp[cpu] = temp;
                }
                let node_noise = if noise_enabled {
                    normal.sample(&mut pair.noise)
                } else {
                    0.0
                };
                let node_power = 1.2 * (cpu_power[0] + cpu_power[1]) + node_noise;
                let node_id = &pair.nodes[side].node_id;
                for (metric, value) in [
                    (Metric::Cpu0Power, cpu_power[0]),
                    (Metric::Cpu1Power, cpu_power[1]),
                    (Metric::Cpu0Temp, cpu_temp[0]),
                    (Metric::Cpu1Temp, cpu_temp[1]),
                    (Metric::NodePower, node_power),
                ] {
                    samples.push(RawSample {
                        timestamp: t,
                        node_id: node_id.clone(),
                        metric,
                        value,
                    });
                }
            }
        }
    }
    Ok(samples)
}

/// Applies faults to a generated stream; only samples of labeled
/// `(node, metric, window)` triples are modified.
pub fn inject(
    cfg: &SynthConfig,
    mut samples: Vec<RawSample>,
    faults: &[FaultSpec],
) -> Result<LabeledDataset, SynthError> {
    let t_max = samples.iter().fold(0.0f64, |m, s| m.max(s.timestamp));
    let mut labels = Vec::with_capacity(faults.len());
    for (fi, fault) in faults.iter().enumerate() {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
        if !(fault.magnitude > 0.0) || !fault.magnitude.is_finite() {
            return Err(SynthError::InvalidMagnitude);
        }
        if fault.start >= fault.end || fault.start < 0.0 || fault.start > t_max {
            return Err(SynthError::FaultOutOfRange {
                start: fault.start,
                end: fault.end,
            });
        }
        if !samples.iter().any(|s| s.node_id == fault.node_id) {
            return Err(SynthError::UnknownNode(fault.node_id.clone()));
        }
        let in_window = |s: &RawSample| {
            s.node_id == fault.node_id && s.timestamp >= fault.start && s.timestamp < fault.end
        };
        match fault.kind {
            FaultKind::PowerSpike => {
                let metric = fault.metric.ok_or(SynthError::MissingMetric)?;
                for s in samples.iter_mut() {
                    if in_window(s) && s.metric == metric {
                        s.value += fault.magnitude;
                    }
                }
            }
            FaultKind::TempRunaway => {
                let metric = fault.metric.ok_or(SynthError::MissingMetric)?;
                let span = fault.end - fault.start;
                for s in samples.iter_mut() {
                    if in_window(s) && s.metric == metric {
                        s.value += fault.magnitude * (s.timestamp - fault.start) / span;
                    }
                }
            }
            FaultKind::StuckSensor => {
                let metric = fault.metric.ok_or(SynthError::MissingMetric)?;
                let frozen = samples
                    .iter()
                    .find(|s| in_window(s) && s.metric == metric)
                    .map(|s| s.value);
                if let Some(frozen) = frozen {
                    for s in samples.iter_mut() {
                        if in_window(s) && s.metric == metric {
                            s.value = frozen;
                        }
                    }
                }
            }
            FaultKind::PairDivergence => {
                // Replace the node's job load with an independent one; CPU
                // powers diverge from the temperatures and node power that
                // still follow the original load.
                let mut rng = pair_rng(cfg.seed ^ 0xdead_beef, fi, 2);
                let replacement = LoadSignal::draw(&mut rng, cfg);
                let normal =
                    Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
                for s in samples.iter_mut() {
                    if in_window(s) && matches!(s.metric, Metric::Cpu0Power | Metric::Cpu1Power) {
                        let noise = if cfg.noise_std > 0.0 {
                            normal.sample(&mut rng)
                        } else {
                            0.0
                        };
                        s.value = cfg.base_power + replacement.at(s.timestamp, cfg) + noise;
                    }
                }
            }
        }
        labels.push(Label {
            node_id: fault.node_id.clone(),
            metric: match fault.kind {
                FaultKind::PairDivergence => None,
                _ => fault.metric,
            },
            start: fault.start,
            end: fault.end,
            kind: fault.kind,
        });
    }
    Ok(LabeledDataset { samples, labels })
}

/// Outcome for one injected fault.
#[derive(Debug, Clone, Serialize)]
pub struct FaultOutcome {
    pub node: String,
    pub kind: FaultKind,
    pub start: f64,
    pub end: f64,
    pub detected: bool,
    /// Seconds from fault start to the first matching event bucket.
    pub latency_seconds: Option<f64>,
}

/// Precision/recall/latency report for one evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when there were no events at all; precision is reported as 1.0.
    pub no_events: bool,
    /// True when there were no labels at all; recall is reported as 1.0.
    pub no_labels: bool,
    pub events_total: usize,
    pub events_matched: usize,
    pub labels_total: usize,
    pub labels_detected: usize,
    pub per_fault: Vec<FaultOutcome>,
}

/// Matches events to labels by node and time: an event matches a label when
/// its bucket lies within `[start - slack, end + slack]`.
pub fn score(
    events: &[AnomalyEvent],
    labels: &[Label],
    bucket_seconds: u32,
    match_slack_buckets: u32,
) -> ScoreReport {
    let slack = (match_slack_buckets * bucket_seconds) as f64;
    let mut events_matched = 0usize;
    let mut first_hit: Vec<Option<f64>> = vec![None; labels.len()];
    for ev in events {
        let t = ev.t as f64;
        let mut matched = false;
        for (li, label) in labels.iter().enumerate() {
            if ev.node == label.node_id && t >= label.start - slack && t <= label.end + slack {
                matched = true;
                let hit = first_hit[li].get_or_insert(t);
                if t < *hit {
                    *hit = t;
                }
            }
        }
        if matched {
            events_matched += 1;
        }
    }
    let labels_detected = first_hit.iter().filter(|h| h.is_some()).count();
    let no_events = events.is_empty();
    let no_labels = labels.is_empty();
    let precision = if no_events {
        1.0
    } else {
        events_matched as f64 / events.len() as f64
    };
    let recall = if no_labels {
        1.0
    } else {
        labels_detected as f64 / labels.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let per_fault = labels
        .iter()
        .zip(&first_hit)
        .map(|(label, hit)| FaultOutcome {
            node: label.node_id.clone(),
            kind: label.kind,
            start: label.start,
            end: label.end,
            detected: hit.is_some(),
            latency_seconds: hit.map(|t| t - label.start),
        })
        .collect();
    ScoreReport {
        precision,
        recall,
        f1,
        no_events,
        no_labels,
        events_total: events.len(),
        events_matched,
        labels_total: labels.len(),
        labels_detected,
        per_fault,
    }
}

/// Writes samples in the telemetry CSV format.
pub fn write_samples_csv<W: std::io::Write>(
    samples: &[RawSample],
    mut out: W,
) -> std::io::Result<()> {
    for s in samples {
        writeln!(
            out,
            "{},{},{},{}",
            s.timestamp, s.node_id, s.metric, s.value
        )?;
    }
    Ok(())
}

/// Writes labels as CSV `node_id,metric,start,end,kind`; `metric` is `all`
/// for whole-node labels.
pub fn write_labels_csv<W: std::io::Write>(labels: &[Label], mut out: W) -> std::io::Result<()> {
    writeln!(out, "node_id,metric,start,end,kind")?;
    for l in labels {
        writeln!(
            out,
            "{},{},{},{},{}",
            l.node_id,
            l.metric.map(|m| m.name()).unwrap_or("all"),
            l.start,
            l.end,
            l.kind.name()
        )?;
    }
    Ok(())
}

/// Parses the labels CSV written by [`write_labels_csv`].
pub fn read_labels_csv<R: std::io::BufRead>(reader: R) -> Result<Vec<Label>, String> {
    let mut labels = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let line = line.trim();
        if line.is_empty() || (no == 0 && line.starts_with("node_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(format!("labels line {}: expected 5 fields", no + 1));
        }
        let metric = if fields[1] == "all" {
            None
        } else {
            Some(
                fields[1]
                    .parse::<Metric>()
                    .map_err(|_| format!("labels line {}: unknown metric", no + 1))?,
            )
        };
        labels.push(Label {
            node_id: fields[0].to_string(),
            metric,
            start: fields[2]
                .parse()
                .map_err(|_| format!("labels line {}: bad start", no + 1))?,
            end: fields[3]
                .parse()
                .map_err(|_| format!("labels line {}: bad end", no + 1))?,
            kind: fields[4]
                .parse()
                .map_err(|_| format!("labels line {}: unknown kind", no + 1))?,
        });
    }
    Ok(labels)
}
