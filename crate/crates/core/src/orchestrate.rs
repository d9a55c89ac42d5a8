//! The per-node progressive-learning cycle: collect an interval of rows,
//! refit the scaler, retrain the model warm-start, recompute thresholds,
//! swap the active triple atomically, and keep predicting throughout.
//!
//! One [`NodeEngine`] owns each node's state; [`Engine`] routes a mixed
//! sample stream to per-node downsamplers and engines. Interval boundaries
//! count processed buckets, so replay and live operation behave identically.
//! Windowing state resets at interval boundaries and segment breaks, so
//! every recorded error was measured under a single (model, scaler,
//! thresholds) snapshot.
//!
//! With `background_training` enabled, retraining runs on a worker thread
//! while prediction continues against the previous snapshot; the new triple
//! is installed before the first bucket processed after training completes.
//! Synchronous mode trains inline at the boundary, which keeps the event
//! stream byte-deterministic.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::detect::{
    detect, per_feature_error, update_thresholds, AnomalyEvent, EventContext, ThresholdSet,
};
use crate::model::{
    self, load_model, save_model, train, AdamState, AutoencoderParams, CheckpointError, ModelDims,
    ModelError, TrainConfig, TrainOptions,
};
use crate::preprocess::{Scaler, ScalerKind};
use crate::telemetry::{
    DownsampleConfig, DownsampleError, DownsampleOutput, FeatureRow, NodeDownsampler, RawSample,
    FEATURE_COUNT,
};
use crate::window::{build_windows, Window};

const STATE_MAGIC: &[u8; 4] = b"ODST";
const STATE_VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Window length `w`.
    pub window: usize,
    /// Stride for training windows; inference always slides by one bucket.
    pub train_stride: usize,
    pub bucket_seconds: u32,
    pub max_fill: u32,
    /// Buckets per retraining interval (1440 = 4 h at 10 s buckets).
    pub retrain_interval_buckets: usize,
    pub scaler_kind: ScalerKind,
    pub model_dims: ModelDims,
    pub train: TrainConfig,
    /// Retrain on a worker thread instead of blocking at the boundary.
    pub background_training: bool,
    /// Compute batch gradients on the rayon pool (bitwise identical to
    /// sequential; see the model module).
    pub parallel_batches: bool,
    /// Artificial delay per optimizer step, for stall diagnostics.
    pub train_step_delay: Option<Duration>,
    /// Collect one [`BucketRecord`] per finalized bucket (export mode).
    pub emit_records: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            window: 4,
            train_stride: 1,
            bucket_seconds: 10,
            max_fill: 3,
            retrain_interval_buckets: 1440,
            scaler_kind: ScalerKind::MinMax,
            model_dims: ModelDims::default(),
            train: TrainConfig::default(),
            background_training: false,
            parallel_batches: false,
            train_step_delay: None,
            emit_records: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Downsample(#[from] DownsampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    State(#[from] CheckpointError),
}

/// Everything produced by feeding samples: events, optional per-bucket
/// records, and the ids of nodes whose active triple was swapped.
#[derive(Debug, Default)]
pub struct ProcessOutput {
    pub events: Vec<AnomalyEvent>,
    pub records: Vec<BucketRecord>,
    pub swapped_nodes: Vec<String>,
}

impl ProcessOutput {
    fn merge(&mut self, other: ProcessOutput) {
        self.events.extend(other.events);
        self.records.extend(other.records);
        self.swapped_nodes.extend(other.swapped_nodes);
    }
}

/// Finalized per-bucket data for plot export.
#[derive(Debug, Clone)]
pub struct BucketRecord {
    pub bucket_start: i64,
    pub node_id: String,
    pub raw: [f64; FEATURE_COUNT],
    pub reconstructed_raw: [f64; FEATURE_COUNT],
    pub scaled: [f64; FEATURE_COUNT],
    pub reconstructed_scaled: [f64; FEATURE_COUNT],
    pub error: [f64; FEATURE_COUNT],
    pub thresholds: Option<[f64; FEATURE_COUNT]>,
}

/// Per-bucket timing sample for the no-stall contract.
#[derive(Debug, Clone, Copy)]
pub struct BucketTiming {
    pub nanos: u64,
    /// A new triple was installed while handling this bucket.
    pub swap: bool,
    /// A background training was still running when this bucket finished.
    pub training_in_flight: bool,
}

#[derive(Debug, Default, Clone)]
pub struct EngineStats {
    pub rows_processed: u64,
    pub intervals_completed: u64,
    pub trainings_run: u64,
    pub trainings_failed: u64,
    pub events_emitted: u64,
    pub timings: Vec<BucketTiming>,
}

struct PendingBucket {
    row: FeatureRow,
    scaled: [f64; FEATURE_COUNT],
    pred_sum: [f64; FEATURE_COUNT],
    coverage: u32,
}

/// Incremental scaler fit for the warm-up interval, before the first
/// interval-fitted scaler exists. MinMax tracks running extrema; Standard
/// uses Welford's running mean/variance.
struct RunningFit {
    kind: ScalerKind,
    count: usize,
    lo: [f64; FEATURE_COUNT],
    hi: [f64; FEATURE_COUNT],
    mean: [f64; FEATURE_COUNT],
    m2: [f64; FEATURE_COUNT],
}

impl RunningFit {
    fn new(kind: ScalerKind) -> Self {
        RunningFit {
            kind,
            count: 0,
            lo: [f64::INFINITY; FEATURE_COUNT],
            hi: [f64::NEG_INFINITY; FEATURE_COUNT],
            mean: [0.0; FEATURE_COUNT],
            m2: [0.0; FEATURE_COUNT],
        }
    }

    fn update(&mut self, features: &[f64; FEATURE_COUNT]) {
        self.count += 1;
        for f in 0..FEATURE_COUNT {
            let v = features[f];
            self.lo[f] = self.lo[f].min(v);
            self.hi[f] = self.hi[f].max(v);
            let delta = v - self.mean[f];
            self.mean[f] += delta / self.count as f64;
            self.m2[f] += delta * (v - self.mean[f]);
        }
    }

    fn to_scaler(&self) -> Scaler {
        match self.kind {
            ScalerKind::MinMax => Scaler {
                kind: self.kind,
                a: self.lo,
                b: self.hi,
                fitted_on: self.count,
            },
            ScalerKind::Standard => {
                let mut std = [0.0; FEATURE_COUNT];
                for f in 0..FEATURE_COUNT {
                    std[f] = (self.m2[f] / self.count as f64).sqrt();
                }
                Scaler {
                    kind: self.kind,
                    a: self.mean,
                    b: std,
                    fitted_on: self.count,
                }
            }
        }
    }
}

struct TrainOutcome {
    model: AutoencoderParams,
    adam: AdamState,
    ok: bool,
}

struct PendingSwap {
    scaler: Arc<Scaler>,
    thresholds: Option<Arc<ThresholdSet>>,
    rx: mpsc::Receiver<TrainOutcome>,
    handle: thread::JoinHandle<()>,
}

/// State machine for a single node (the cycle state of the detector).
pub struct NodeEngine {
    node_id: String,
    cfg: Arc<EngineConfig>,
    interval_id: u64,
    buckets_in_interval: usize,
    model: Arc<AutoencoderParams>,
    adam: AdamState,
    scaler: Option<Arc<Scaler>>,
    thresholds: Option<Arc<ThresholdSet>>,
    /// Rows of the current interval, split at segment breaks.
    interval_segments: Vec<Vec<FeatureRow>>,
    interval_errors: Vec<[f64; FEATURE_COUNT]>,
    /// Running scaler fit, used only until the first boundary.
    warmup_fit: Option<RunningFit>,
    /// Scaled rows of the window in progress.
    ring: Vec<[f64; FEATURE_COUNT]>,
    pending: std::collections::VecDeque<PendingBucket>,
    pending_swap: Option<PendingSwap>,
    trainings_run: u64,
    trainings_failed: u64,
}

impl NodeEngine {
    pub fn new(node_id: impl Into<String>, cfg: Arc<EngineConfig>) -> Self {
        let model = AutoencoderParams::init(&cfg.model_dims, cfg.window, &cfg.train);
        let adam = AdamState::zeros_like(&model);
        let warmup_fit = Some(RunningFit::new(cfg.scaler_kind));
        NodeEngine {
            node_id: node_id.into(),
            cfg,
            interval_id: 0,
            buckets_in_interval: 0,
            model: Arc::new(model),
            adam,
            scaler: None,
            thresholds: None,
            interval_segments: vec![Vec::new()],
            interval_errors: Vec::new(),
            warmup_fit,
            ring: Vec::new(),
            pending: std::collections::VecDeque::new(),
            pending_swap: None,
            trainings_run: 0,
            trainings_failed: 0,
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn interval_id(&self) -> u64 {
        self.interval_id
    }

    pub fn thresholds(&self) -> Option<&ThresholdSet> {
        self.thresholds.as_deref()
    }

    pub fn model(&self) -> &AutoencoderParams {
        &self.model
    }

    fn training_in_flight(&self) -> bool {
        self.pending_swap.is_some()
    }

    /// Feeds one downsampled bucket: scale, window, reconstruct, finalize
    /// whatever timestamp can no longer change, and fire interval-boundary
    /// actions when the interval fills up.
    pub fn process_bucket(&mut self, row: FeatureRow) -> ProcessOutput {
        let mut out = self.poll_pending_training();

        // Until the first boundary fits a proper per-interval scaler, scale
        // against the running fit over everything seen so far. Warm-up
        // windows therefore mix slightly different scalings; from interval 1
        // on, scaling is fixed per interval.
        if let Some(fit) = &mut self.warmup_fit {
            fit.update(&row.features);
            self.scaler = Some(Arc::new(fit.to_scaler()));
        }
        let scaler = self.scaler.as_ref().expect("scaler fitted").clone();
        let scaled = scaler.transform(&row.features);

        self.interval_segments
            .last_mut()
            .expect("segment list non-empty")
            .push(row.clone());
        self.pending.push_back(PendingBucket {
            row,
            scaled,
            pred_sum: [0.0; FEATURE_COUNT],
            coverage: 0,
        });
        self.ring.push(scaled);

        let w = self.cfg.window;
        if self.ring.len() == w {
            let rows: Vec<Vec<f64>> = self.ring.iter().map(|r| r.to_vec()).collect();
            let recon = self
                .model
                .forward(&Window { start: 0, rows })
                .expect("engine feeds windows matching the model shape");
            let base = self.pending.len() - w;
            for (j, rec) in recon.iter().enumerate() {
                let slot = &mut self.pending[base + j];
                for f in 0..FEATURE_COUNT {
                    slot.pred_sum[f] += rec[f];
                }
                slot.coverage += 1;
            }
            self.ring.remove(0);
            // The window starting at the front slot just ran; nothing later
            // can contribute to it.
            if self.pending.len() == w {
                let slot = self.pending.pop_front().expect("front exists");
                self.finalize_slot(slot, &scaler, &mut out);
            }
        }

        self.buckets_in_interval += 1;
        if self.buckets_in_interval >= self.cfg.retrain_interval_buckets {
            let boundary = self.end_of_interval();
            out.merge(boundary);
        }
        out
    }

    /// A gap split the stream: finalize what is pending and restart
    /// windowing. The interval keeps accumulating.
    pub fn segment_break(&mut self) -> ProcessOutput {
        let mut out = ProcessOutput::default();
        self.flush_windows(&mut out);
        self.interval_segments.push(Vec::new());
        out
    }

    /// Finalizes all pending timestamps (their remaining windows can never
    /// arrive) and clears the window state.
    fn flush_windows(&mut self, out: &mut ProcessOutput) {
        if let Some(scaler) = self.scaler.clone() {
            while let Some(slot) = self.pending.pop_front() {
                self.finalize_slot(slot, &scaler, out);
            }
        }
        self.pending.clear();
        self.ring.clear();
    }

    fn finalize_slot(&mut self, slot: PendingBucket, scaler: &Scaler, out: &mut ProcessOutput) {
        if slot.coverage == 0 {
            // segment shorter than one window: no prediction exists
            return;
        }
        let mut mean = [0.0; FEATURE_COUNT];
        for f in 0..FEATURE_COUNT {
            mean[f] = slot.pred_sum[f] / slot.coverage as f64;
        }
        let errors = per_feature_error(&mean, &slot.scaled);
        self.interval_errors.push(errors);
        let reconstructed_raw = scaler.inverse(&mean);
        if let Some(th) = &self.thresholds {
            let ctx = EventContext {
                bucket_start: slot.row.bucket_start,
                node_id: &self.node_id,
                raw: &slot.row.features,
                reconstructed_raw: &reconstructed_raw,
            };
            out.events.extend(detect(&errors, th, &ctx));
        }
        if self.cfg.emit_records {
            out.records.push(BucketRecord {
                bucket_start: slot.row.bucket_start,
                node_id: self.node_id.clone(),
                raw: slot.row.features,
                reconstructed_raw,
                scaled: slot.scaled,
                reconstructed_scaled: mean,
                error: errors,
                thresholds: self.thresholds.as_ref().map(|t| t.per_feature),
            });
        }
    }

    /// Interval boundary: compute the next (thresholds, scaler, model)
    /// triple from the finished interval and swap it in — immediately in
    /// synchronous mode, or when the background training lands.
    fn end_of_interval(&mut self) -> ProcessOutput {
        // A training still running from the previous boundary must land
        // before this one starts (one swap per interval).
        let mut out = self.complete_pending_training(true);
        self.flush_windows(&mut out);
        self.warmup_fit = None;

        let thresholds = match update_thresholds(&self.interval_errors, self.interval_id) {
            Ok(t) => Some(Arc::new(t)),
            // interval produced no predictions at all: keep what we had
            Err(_) => self.thresholds.clone(),
        };
        let all_rows: Vec<FeatureRow> = self
            .interval_segments
            .iter()
            .flat_map(|s| s.iter().cloned())
            .collect();
        let scaler = match Scaler::fit(self.cfg.scaler_kind, &all_rows) {
            Ok(s) => Arc::new(s),
            Err(_) => self.scaler.clone().expect("scaler exists after first row"),
        };
        let mut windows: Vec<Window> = Vec::new();
        for seg in &self.interval_segments {
            let scaled: Vec<Vec<f64>> = seg
                .iter()
                .map(|r| scaler.transform(&r.features).to_vec())
                .collect();
            windows.extend(build_windows(
                &scaled,
                self.cfg.window,
                self.cfg.train_stride,
            ));
        }

        self.interval_errors.clear();
        self.interval_segments = vec![Vec::new()];
        self.interval_id += 1;
        self.buckets_in_interval = 0;

        if windows.is_empty() {
            // nothing to train on; refresh thresholds only
            self.trainings_failed += 1;
            self.thresholds = thresholds;
            out.swapped_nodes.push(self.node_id.clone());
            return out;
        }

        self.trainings_run += 1;
        let mut model = (*self.model).clone();
        let mut adam = self.adam.clone();
        let tcfg = self.cfg.train.clone();
        let parallel = self.cfg.parallel_batches;
        let delay = self.cfg.train_step_delay;
        let job = move || {
            let hook = |_step: u64| {
                if let Some(d) = delay {
                    thread::sleep(d);
                }
            };
            let opts = TrainOptions {
                parallel,
                step_hook: delay.is_some().then_some(&hook as &(dyn Fn(u64) + Sync)),
            };
            let result = train(&mut model, &mut adam, &windows, &tcfg, true, &opts);
            let ok = matches!(&result, Ok(h) if h.last().is_some_and(|l| l.is_finite()));
            TrainOutcome { model, adam, ok }
        };

        if self.cfg.background_training {
            let (tx, rx) = mpsc::channel();
            let handle = thread::spawn(move || {
                let _ = tx.send(job());
            });
            self.pending_swap = Some(PendingSwap {
                scaler,
                thresholds,
                rx,
                handle,
            });
        } else {
            let outcome = job();
            self.install(scaler, thresholds, outcome, &mut out);
        }
        out
    }

    fn poll_pending_training(&mut self) -> ProcessOutput {
        self.complete_pending_training(false)
    }

    fn complete_pending_training(&mut self, blocking: bool) -> ProcessOutput {
        let mut out = ProcessOutput::default();
        let Some(swap) = self.pending_swap.take() else {
            return out;
        };
        let outcome = if blocking {
            swap.rx.recv().ok()
        } else {
            match swap.rx.try_recv() {
                Ok(o) => Some(o),
                Err(mpsc::TryRecvError::Empty) => {
                    self.pending_swap = Some(swap);
                    return out;
                }
                Err(mpsc::TryRecvError::Disconnected) => None,
            }
        };
        let _ = swap.handle.join();
        match outcome {
            Some(o) => self.install(swap.scaler, swap.thresholds, o, &mut out),
            None => {
                // trainer thread died; keep the previous model but do apply
                // the interval's thresholds
                self.trainings_failed += 1;
                self.thresholds = swap.thresholds;
                out.swapped_nodes.push(self.node_id.clone());
            }
        }
        out
    }

    /// Atomically installs the new triple; pending predictions are finalized
    /// under the old snapshot first, and windowing restarts.
    fn install(
        &mut self,
        scaler: Arc<Scaler>,
        thresholds: Option<Arc<ThresholdSet>>,
        outcome: TrainOutcome,
        out: &mut ProcessOutput,
    ) {
        self.flush_windows(out);
        if outcome.ok {
            self.model = Arc::new(outcome.model);
            self.adam = outcome.adam;
            self.scaler = Some(scaler);
        } else {
            self.trainings_failed += 1;
        }
        self.thresholds = thresholds;
        out.swapped_nodes.push(self.node_id.clone());
    }

    /// End of stream: finalize everything and land any in-flight training.
    pub fn finish(&mut self) -> ProcessOutput {
        let mut out = self.complete_pending_training(true);
        self.flush_windows(&mut out);
        out
    }

    /// Serializes interval id, thresholds, scaler, model weights and
    /// optimizer moments. The in-flight partial interval is not persisted.
    pub fn save_state(&mut self) -> Vec<u8> {
        // a running training must land so the blob is a consistent snapshot
        let _ = self.complete_pending_training(true);
        let mut buf = Vec::new();
        buf.extend_from_slice(STATE_MAGIC);
        model::checkpoint_put_u16(&mut buf, STATE_VERSION);
        model::checkpoint_put_u64(&mut buf, self.interval_id);
        match &self.thresholds {
            Some(t) => {
                buf.push(1);
                for f in 0..FEATURE_COUNT {
                    model::checkpoint_put_f64(&mut buf, t.per_feature[f]);
                }
                model::checkpoint_put_u64(&mut buf, t.source_interval);
                model::checkpoint_put_u64(&mut buf, t.row_count as u64);
            }
            None => buf.push(0),
        }
        match &self.scaler {
            Some(s) => {
                buf.push(1);
                buf.push(match s.kind {
                    ScalerKind::MinMax => 0,
                    ScalerKind::Standard => 1,
                });
                for f in 0..FEATURE_COUNT {
                    model::checkpoint_put_f64(&mut buf, s.a[f]);
                }
                for f in 0..FEATURE_COUNT {
                    model::checkpoint_put_f64(&mut buf, s.b[f]);
                }
                model::checkpoint_put_u64(&mut buf, s.fitted_on as u64);
            }
            None => buf.push(0),
        }
        let model_blob = save_model(&self.model, Some(&self.adam));
        model::checkpoint_put_u64(&mut buf, model_blob.len() as u64);
        buf.extend_from_slice(&model_blob);
        model::checkpoint_append_checksum(&mut buf);
        buf
    }

    /// Restores a node engine from a state blob; windowing and the interval
    /// buffer start fresh.
    pub fn restore_state(
        node_id: impl Into<String>,
        cfg: Arc<EngineConfig>,
        blob: &[u8],
    ) -> Result<Self, CheckpointError> {
        let body = model::checkpoint_verify(blob)?;
        let mut cur = model::CheckpointCursor::new(body);
        if cur.take(4)? != STATE_MAGIC {
            return Err(CheckpointError::CorruptBlob("bad state magic"));
        }
        let version = cur.u16()?;
        if version != STATE_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version });
        }
        let interval_id = cur.u64()?;
        let thresholds = if cur.u8()? == 1 {
            let mut per_feature = [0.0; FEATURE_COUNT];
            for f in per_feature.iter_mut() {
                *f = cur.f64()?;
            }
            let source_interval = cur.u64()?;
            let row_count = cur.u64()? as usize;
            Some(Arc::new(ThresholdSet {
                per_feature,
                source_interval,
                row_count,
            }))
        } else {
            None
        };
        let scaler = if cur.u8()? == 1 {
            let kind = match cur.u8()? {
                0 => ScalerKind::MinMax,
                1 => ScalerKind::Standard,
                _ => return Err(CheckpointError::CorruptBlob("unknown scaler kind")),
            };
            let mut a = [0.0; FEATURE_COUNT];
            for v in a.iter_mut() {
                *v = cur.f64()?;
            }
            let mut b = [0.0; FEATURE_COUNT];
            for v in b.iter_mut() {
                *v = cur.f64()?;
            }
            let fitted_on = cur.u64()? as usize;
            Some(Arc::new(Scaler {
                kind,
                a,
                b,
                fitted_on,
            }))
        } else {
            None
        };
        let model_len = cur.u64()? as usize;
        let model_blob = cur.take(model_len)?;
        if !cur.at_end() {
            return Err(CheckpointError::CorruptBlob("trailing bytes"));
        }
        let (model, adam) = load_model(model_blob)?;
        let adam = adam.unwrap_or_else(|| AdamState::zeros_like(&model));
        let mut engine = NodeEngine::new(node_id, cfg);
        if interval_id > 0 || scaler.is_some() {
            engine.warmup_fit = None;
        }
        engine.interval_id = interval_id;
        engine.model = Arc::new(model);
        engine.adam = adam;
        engine.scaler = scaler;
        engine.thresholds = thresholds;
        Ok(engine)
    }
}

struct NodeSlot {
    downsampler: NodeDownsampler,
    engine: NodeEngine,
}

/// Multi-node streaming engine: routes raw samples, tracks timing, and
/// exposes state persistence.
pub struct Engine {
    cfg: Arc<EngineConfig>,
    nodes: BTreeMap<String, NodeSlot>,
    stats: EngineStats,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Self {
        Engine {
            cfg: Arc::new(cfg),
            nodes: BTreeMap::new(),
            stats: EngineStats::default(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.keys().cloned().collect()
    }

    fn ensure_slot(&mut self, node_id: &str) {
        if !self.nodes.contains_key(node_id) {
            let ds_cfg = DownsampleConfig {
                bucket_seconds: self.cfg.bucket_seconds,
                max_fill: self.cfg.max_fill,
            };
            self.nodes.insert(
                node_id.to_string(),
                NodeSlot {
                    downsampler: NodeDownsampler::new(node_id, ds_cfg),
                    engine: NodeEngine::new(node_id, Arc::clone(&self.cfg)),
                },
            );
        }
    }

    /// Feeds one raw sample; returns whatever buckets it completed.
    pub fn feed(&mut self, sample: &RawSample) -> Result<ProcessOutput, EngineError> {
        self.ensure_slot(&sample.node_id);
        let slot = self.nodes.get_mut(&sample.node_id).expect("slot ensured");
        let outputs = slot.downsampler.push(sample)?;
        let mut out = ProcessOutput::default();
        Self::process_downsampled(&mut self.stats, &mut slot.engine, outputs, &mut out);
        Ok(out)
    }

    fn process_downsampled(
        stats: &mut EngineStats,
        engine: &mut NodeEngine,
        outputs: Vec<DownsampleOutput>,
        out: &mut ProcessOutput,
    ) {
        for o in outputs {
            match o {
                DownsampleOutput::Row(row) => {
                    let start = Instant::now();
                    let produced = engine.process_bucket(row);
                    let nanos = start.elapsed().as_nanos() as u64;
                    stats.rows_processed += 1;
                    stats.events_emitted += produced.events.len() as u64;
                    stats.timings.push(BucketTiming {
                        nanos,
                        swap: !produced.swapped_nodes.is_empty(),
                        training_in_flight: engine.training_in_flight(),
                    });
                    out.merge(produced);
                }
                DownsampleOutput::SegmentBreak => {
                    let produced = engine.segment_break();
                    stats.events_emitted += produced.events.len() as u64;
                    out.merge(produced);
                }
            }
        }
    }

    fn refresh_aggregates(&mut self) {
        self.stats.intervals_completed = self.nodes.values().map(|s| s.engine.interval_id).sum();
        self.stats.trainings_run = self.nodes.values().map(|s| s.engine.trainings_run).sum();
        self.stats.trainings_failed = self.nodes.values().map(|s| s.engine.trainings_failed).sum();
    }

    /// End of stream: flush downsamplers, finalize windows, land trainings.
    pub fn finish(&mut self) -> ProcessOutput {
        let mut out = ProcessOutput::default();
        for slot in self.nodes.values_mut() {
            let outputs = slot.downsampler.finish();
            Self::process_downsampled(&mut self.stats, &mut slot.engine, outputs, &mut out);
            let produced = slot.engine.finish();
            self.stats.events_emitted += produced.events.len() as u64;
            out.merge(produced);
        }
        self.refresh_aggregates();
        out
    }

    /// Serialized state per node, sorted by node id.
    pub fn save_states(&mut self) -> Vec<(String, Vec<u8>)> {
        self.nodes
            .iter_mut()
            .map(|(id, slot)| (id.clone(), slot.engine.save_state()))
            .collect()
    }

    pub fn save_node_state(&mut self, node_id: &str) -> Option<Vec<u8>> {
        self.nodes
            .get_mut(node_id)
            .map(|slot| slot.engine.save_state())
    }

    /// Restores one node from a state blob; later samples for it continue
    /// from the restored triple.
    pub fn restore_node_state(
        &mut self,
        node_id: &str,
        blob: &[u8],
    ) -> Result<(), CheckpointError> {
        let engine = NodeEngine::restore_state(node_id, Arc::clone(&self.cfg), blob)?;
        let ds_cfg = DownsampleConfig {
            bucket_seconds: self.cfg.bucket_seconds,
            max_fill: self.cfg.max_fill,
        };
        self.nodes.insert(
            node_id.to_string(),
            NodeSlot {
                downsampler: NodeDownsampler::new(node_id, ds_cfg),
                engine,
            },
        );
        Ok(())
    }

    /// Aggregate counters refreshed from node state (cheap).
    pub fn aggregated_stats(&mut self) -> EngineStats {
        self.refresh_aggregates();
        self.stats.clone()
    }
}
