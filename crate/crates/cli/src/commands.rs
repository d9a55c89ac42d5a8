//! Command implementations. Each returns a structured outcome so the
//! integration and acceptance suites can drive them directly.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use odm_core::model::{
    finite_difference_check, tiny_check_model, GradCheckReport, ModelDims, TrainConfig,
};
use odm_core::orchestrate::{Engine, EngineConfig, EngineError, ProcessOutput};
use odm_core::synth::{self, Label, LabeledDataset, ScoreReport};
use odm_core::telemetry::{parse_stream, Metric};
use odm_core::window::Window;

use crate::args::{EvalArgs, GradcheckArgs, RunConfig, Scenario, SynthArgs};
use crate::scenario::{standard_config, standard_faults};
use crate::CliError;

/// Counters and timing percentiles printed to stderr after a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub buckets: u64,
    pub intervals: u64,
    pub trainings: u64,
    pub training_failures: u64,
    pub events: u64,
    pub latency_p50_us: u64,
    pub latency_p90_us: u64,
    pub latency_p99_us: u64,
    pub latency_max_us: u64,
}

#[derive(Debug)]
pub struct ReplayOutcome {
    pub events_written: u64,
    pub export_rows: u64,
    pub summary: RunSummary,
}

pub fn build_engine_config(cfg: &RunConfig, emit_records: bool) -> EngineConfig {
    EngineConfig {
        window: cfg.window,
        train_stride: cfg.stride,
        bucket_seconds: cfg.bucket_seconds,
        max_fill: 3,
        retrain_interval_buckets: cfg.retrain_buckets,
        scaler_kind: cfg.scaler,
        model_dims: ModelDims::default(),
        train: TrainConfig {
            epochs: cfg.epochs,
            learning_rate: cfg.lr,
            seed: cfg.seed,
            ..TrainConfig::default()
        },
        background_training: cfg.background_training && !cfg.deterministic,
        parallel_batches: !cfg.deterministic,
        train_step_delay: None,
        emit_records,
    }
}

enum Sink {
    Stdout(io::Stdout),
    File(io::BufWriter<fs::File>),
}

impl Sink {
    fn open(path: &Option<PathBuf>) -> Result<Sink, CliError> {
        match path {
            None => Ok(Sink::Stdout(io::stdout())),
            Some(p) => {
                let file = fs::File::create(p)
                    .map_err(|e| CliError::Input(format!("cannot create {}: {e}", p.display())))?;
                Ok(Sink::File(io::BufWriter::new(file)))
            }
        }
    }

    fn write_line(&mut self, line: &str) -> Result<(), CliError> {
        let res = match self {
            Sink::Stdout(out) => writeln!(out, "{line}"),
            Sink::File(out) => writeln!(out, "{line}"),
        };
        res.map_err(|e| CliError::Internal(format!("write failed: {e}")))
    }

    fn flush(&mut self) -> Result<(), CliError> {
        let res = match self {
            Sink::Stdout(out) => out.flush(),
            Sink::File(out) => out.flush(),
        };
        res.map_err(|e| CliError::Internal(format!("flush failed: {e}")))
    }
}

fn open_input(spec: &Option<String>) -> Result<Box<dyn BufRead>, CliError> {
    match spec.as_deref() {
        None | Some("-") => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(path) => {
            let meta = fs::metadata(path)
                .map_err(|e| CliError::Input(format!("cannot open {path}: {e}")))?;
            #[cfg(unix)]
            {
                use std::os::unix::fs::FileTypeExt;
                if meta.file_type().is_socket() {
                    let stream = std::os::unix::net::UnixStream::connect(path)
                        .map_err(|e| CliError::Input(format!("cannot connect {path}: {e}")))?;
                    return Ok(Box::new(BufReader::new(stream)));
                }
            }
            let file = fs::File::open(path)
                .map_err(|e| CliError::Input(format!("cannot open {path}: {e}")))?;
            Ok(Box::new(BufReader::new(file)))
        }
    }
}

fn map_engine_error(err: EngineError) -> CliError {
    match err {
        EngineError::Downsample(e) => CliError::Input(e.to_string()),
        other => CliError::Internal(other.to_string()),
    }
}

fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn summarize(engine: &mut Engine) -> RunSummary {
    let stats = engine.aggregated_stats();
    let mut us: Vec<u64> = stats.timings.iter().map(|t| t.nanos / 1_000).collect();
    us.sort_unstable();
    RunSummary {
        buckets: stats.rows_processed,
        intervals: stats.intervals_completed,
        trainings: stats.trainings_run,
        training_failures: stats.trainings_failed,
        events: stats.events_emitted,
        latency_p50_us: percentile(&us, 0.50),
        latency_p90_us: percentile(&us, 0.90),
        latency_p99_us: percentile(&us, 0.99),
        latency_max_us: us.last().copied().unwrap_or(0),
    }
}

fn print_summary(summary: &RunSummary) {
    eprintln!(
        "buckets={} intervals={} trainings={} training_failures={} events={} \
         latency_us p50={} p90={} p99={} max={}",
        summary.buckets,
        summary.intervals,
        summary.trainings,
        summary.training_failures,
        summary.events,
        summary.latency_p50_us,
        summary.latency_p90_us,
        summary.latency_p99_us,
        summary.latency_max_us,
    );
}

fn restore_states(engine: &mut Engine, dir: &Path) {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return,
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "state"))
        .collect();
    paths.sort();
    for path in paths {
        let Some(node) = path.file_stem().and_then(|s| s.to_str()).map(String::from) else {
            continue;
        };
        match fs::read(&path) {
            Ok(blob) => {
                if let Err(e) = engine.restore_node_state(&node, &blob) {
                    // cold start for this node
                    eprintln!("state for {node} not restored ({e}); starting cold");
                }
            }
            Err(e) => eprintln!("state for {node} unreadable ({e}); starting cold"),
        }
    }
}

fn persist_states(engine: &mut Engine, dir: &Path, nodes: &[String]) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Internal(format!("cannot create state dir: {e}")))?;
    for node in nodes {
        if let Some(blob) = engine.save_node_state(node) {
            let path = dir.join(format!("{node}.state"));
            let tmp = dir.join(format!("{node}.state.tmp"));
            fs::write(&tmp, &blob)
                .and_then(|_| fs::rename(&tmp, &path))
                .map_err(|e| CliError::Internal(format!("cannot persist state: {e}")))?;
        }
    }
    Ok(())
}

struct ExportWriter {
    sink: Sink,
    rows: u64,
}

impl ExportWriter {
    fn new(sink: Sink) -> Result<Self, CliError> {
        let mut w = ExportWriter { sink, rows: 0 };
        let mut header = String::from("t,node");
        for m in Metric::ALL {
            let n = m.name();
            header.push_str(&format!(
                ",{n}_raw,{n}_reconstructed_raw,{n}_scaled,{n}_reconstructed_scaled,{n}_error,{n}_threshold"
            ));
        }
        w.sink.write_line(&header)?;
        Ok(w)
    }

    fn write(&mut self, out: &ProcessOutput) -> Result<(), CliError> {
        for rec in &out.records {
            let mut line = format!("{},{}", rec.bucket_start, rec.node_id);
            for f in 0..Metric::ALL.len() {
                let th = match rec.thresholds {
                    Some(t) => format!("{}", t[f]),
                    None => "NaN".to_string(),
                };
                line.push_str(&format!(
                    ",{},{},{},{},{},{}",
                    rec.raw[f],
                    rec.reconstructed_raw[f],
                    rec.scaled[f],
                    rec.reconstructed_scaled[f],
                    rec.error[f],
                    th
                ));
            }
            self.sink.write_line(&line)?;
            self.rows += 1;
        }
        Ok(())
    }
}

fn run_pipeline(
    cfg: &RunConfig,
    export: bool,
    flush_each_event: bool,
) -> Result<ReplayOutcome, CliError> {
    let mut engine = Engine::new(build_engine_config(cfg, export));
    if let Some(dir) = &cfg.state_dir {
        restore_states(&mut engine, dir);
    }
    let reader = open_input(&cfg.input)?;
    let mut events_sink = if export {
        None
    } else {
        Some(Sink::open(&cfg.output)?)
    };
    let mut export_writer = if export {
        Some(ExportWriter::new(Sink::open(&cfg.output)?)?)
    } else {
        None
    };

    let mut events_written = 0u64;
    let mut handle = |out: ProcessOutput,
                      engine: &mut Engine,
                      events_sink: &mut Option<Sink>,
                      export_writer: &mut Option<ExportWriter>|
     -> Result<(), CliError> {
        if let Some(sink) = events_sink.as_mut() {
            for ev in &out.events {
                let line = serde_json::to_string(ev)
                    .map_err(|e| CliError::Internal(format!("event serialize: {e}")))?;
                sink.write_line(&line)?;
                events_written += 1;
            }
            if flush_each_event && !out.events.is_empty() {
                sink.flush()?;
            }
        }
        if let Some(w) = export_writer.as_mut() {
            w.write(&out)?;
        }
        if !out.swapped_nodes.is_empty() {
            if let Some(dir) = &cfg.state_dir {
                persist_states(engine, dir, &out.swapped_nodes)?;
            }
        }
        Ok(())
    };

    for item in parse_stream(reader) {
        let sample = item.map_err(|e| CliError::Input(e.to_string()))?;
        let out = engine.feed(&sample).map_err(map_engine_error)?;
        handle(out, &mut engine, &mut events_sink, &mut export_writer)?;
    }
    let out = engine.finish();
    handle(out, &mut engine, &mut events_sink, &mut export_writer)?;

    if let Some(dir) = &cfg.state_dir {
        let nodes = engine.node_ids();
        persist_states(&mut engine, dir, &nodes)?;
    }
    if let Some(sink) = events_sink.as_mut() {
        sink.flush()?;
    }
    let export_rows = match export_writer.as_mut() {
        Some(w) => {
            w.sink.flush()?;
            w.rows
        }
        None => 0,
    };

    let summary = summarize(&mut engine);
    print_summary(&summary);
    Ok(ReplayOutcome {
        events_written,
        export_rows,
        summary,
    })
}

/// Full-speed replay of a telemetry file; events as JSON lines.
pub fn run_replay(cfg: &RunConfig) -> Result<ReplayOutcome, CliError> {
    run_pipeline(cfg, false, false)
}

/// Live operation: same pipeline, paced by input arrival, events flushed as
/// they happen, retraining in the background unless `--deterministic`.
pub fn run_live(cfg: &RunConfig) -> Result<ReplayOutcome, CliError> {
    let mut live_cfg = cfg.clone();
    if !live_cfg.deterministic {
        live_cfg.background_training = true;
    }
    run_pipeline(&live_cfg, false, true)
}

/// Replay that writes the per-bucket plot-data CSV instead of events.
pub fn run_export(cfg: &RunConfig) -> Result<ReplayOutcome, CliError> {
    run_pipeline(cfg, true, false)
}

pub struct SynthOutcome {
    pub samples: u64,
    pub labels: u64,
}

pub fn run_synth(args: &SynthArgs) -> Result<SynthOutcome, CliError> {
    let mut cfg = standard_config(args.seed, args.pairs, args.duration);
    cfg.sample_period_seconds = args.sample_period;
    let samples = synth::generate(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
    let dataset = match args.scenario {
        Scenario::Clean => LabeledDataset {
            samples,
            labels: Vec::new(),
        },
        Scenario::Standard => synth::inject(&cfg, samples, &standard_faults())
            .map_err(|e| CliError::Input(e.to_string()))?,
    };

    let mut sink = Sink::open(&args.output)?;
    let mut buf = Vec::new();
    synth::write_samples_csv(&dataset.samples, &mut buf)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    for line in text.lines() {
        sink.write_line(line)?;
    }
    sink.flush()?;

    let labels_path = match (&args.labels, &args.output) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(out)) if !dataset.labels.is_empty() => Some(out.with_extension("labels.csv")),
        _ => None,
    };
    if let Some(path) = labels_path {
        let file = fs::File::create(&path)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
        synth::write_labels_csv(&dataset.labels, io::BufWriter::new(file))
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(SynthOutcome {
        samples: dataset.samples.len() as u64,
        labels: dataset.labels.len() as u64,
    })
}

/// JSON report produced by `eval`.
#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub seed: u64,
    pub window: usize,
    pub bucket_seconds: u32,
    pub retrain_buckets: usize,
    pub epochs: usize,
    pub slack_buckets: u32,
    #[serde(flatten)]
    pub score: ScoreReport,
    pub summary: RunSummary,
}

pub fn run_eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let cfg = RunConfig::resolve(&args.pipeline)?;
    let dataset = load_or_generate_dataset(args, &cfg)?;

    // Evaluation wants a reproducible report: train synchronously at the
    // boundary (batch parallelism stays bitwise identical).
    let mut engine_cfg = build_engine_config(&cfg, false);
    engine_cfg.background_training = false;
    let mut engine = Engine::new(engine_cfg);
    let mut events = Vec::new();
    for sample in &dataset.samples {
        let out = engine.feed(sample).map_err(map_engine_error)?;
        events.extend(out.events);
    }
    events.extend(engine.finish().events);

    let score = synth::score(
        &events,
        &dataset.labels,
        cfg.bucket_seconds,
        args.slack_buckets,
    );
    let summary = summarize(&mut engine);
    print_summary(&summary);
    let report = EvalReport {
        dataset: match &cfg.input {
            Some(p) => p.clone(),
            None => "standard".into(),
        },
        seed: cfg.seed,
        window: cfg.window,
        bucket_seconds: cfg.bucket_seconds,
        retrain_buckets: cfg.retrain_buckets,
        epochs: cfg.epochs,
        slack_buckets: args.slack_buckets,
        score,
        summary,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Internal(format!("report serialize: {e}")))?;
    let mut sink = Sink::open(&cfg.output)?;
    sink.write_line(&json)?;
    sink.flush()?;
    Ok(report)
}

fn load_or_generate_dataset(args: &EvalArgs, cfg: &RunConfig) -> Result<LabeledDataset, CliError> {
    match &cfg.input {
        Some(input) => {
            let reader = open_input(&Some(input.clone()))?;
            let mut samples = Vec::new();
            for item in parse_stream(reader) {
                samples.push(item.map_err(|e| CliError::Input(e.to_string()))?);
            }
            let labels_path = match &args.labels {
                Some(p) => p.clone(),
                None => PathBuf::from(input).with_extension("labels.csv"),
            };
            let labels: Vec<Label> = match fs::File::open(&labels_path) {
                Ok(f) => synth::read_labels_csv(BufReader::new(f)).map_err(CliError::Input)?,
                Err(e) => {
                    return Err(CliError::Input(format!(
                        "cannot open labels {}: {e}",
                        labels_path.display()
                    )))
                }
            };
            Ok(LabeledDataset { samples, labels })
        }
        None => {
            let synth_cfg = standard_config(cfg.seed, args.pairs, args.duration);
            let samples =
                synth::generate(&synth_cfg).map_err(|e| CliError::Input(e.to_string()))?;
            synth::inject(&synth_cfg, samples, &standard_faults())
                .map_err(|e| CliError::Input(e.to_string()))
        }
    }
}

pub struct GradcheckOutcome {
    pub report: GradCheckReport,
    pub passed: bool,
}

/// Runs the finite-difference suite on the seeded tiny model and prints the
/// per-tensor maxima.
pub fn run_gradcheck(args: &GradcheckArgs) -> Result<GradcheckOutcome, CliError> {
    let (params, windows) = tiny_check_model(args.seed);
    let batch: Vec<&Window> = windows.iter().collect();
    let report = finite_difference_check(&params, &batch, args.epsilon, None)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    for tensor in &report.per_tensor {
        println!("{} max_rel_error {:e}", tensor.name, tensor.max_rel_error);
    }
    println!("coordinates {}", report.coordinates);
    println!("max_rel_error {:e}", report.max_rel_error);
    println!("tolerance {:e}", args.tolerance);
    let passed = report.passed(args.tolerance);
    println!("result {}", if passed { "PASS" } else { "FAIL" });
    Ok(GradcheckOutcome { report, passed })
}
