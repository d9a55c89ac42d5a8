//! Command-line definitions and config-file merging.
//!
//! Every pipeline flag has a config-file twin: the same name without the
//! leading dashes (`bucket-seconds=10`). Flags win on conflict; unknown
//! config keys are rejected.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use odm_core::preprocess::ScalerKind;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "odm",
    version,
    about = "Streaming behavioral-anomaly detection for per-node power/temperature telemetry"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a telemetry CSV through the detector at full speed
    Replay(PipelineArgs),
    /// Read live samples from stdin or a local stream socket
    Live(PipelineArgs),
    /// Generate synthetic telemetry, optionally with injected faults
    Synth(SynthArgs),
    /// Run a labeled synthetic scenario and report precision/recall/latency
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Replay and export per-bucket actual/reconstructed/error/threshold CSV
    Export(PipelineArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Input CSV path; '-' reads standard input
    #[arg(long)]
    pub input: Option<String>,
    /// Where to write events (replay/live) or the export CSV; default stdout
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Window length in buckets [default: 4]
    #[arg(long)]
    pub window: Option<usize>,
    /// Training window stride in buckets [default: 1]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Bucket width in seconds [default: 10]
    #[arg(long = "bucket-seconds")]
    pub bucket_seconds: Option<u32>,
    /// Buckets per retraining interval [default: 1440]
    #[arg(long = "retrain-buckets")]
    pub retrain_buckets: Option<usize>,
    /// Normalization: minmax or standard [default: minmax]
    #[arg(long)]
    pub scaler: Option<String>,
    /// Training epochs per interval [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialization, shuffling and synthesis [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for per-node state blobs (restored at startup)
    #[arg(long = "state-dir")]
    pub state_dir: Option<PathBuf>,
    /// Single-threaded, byte-stable output
    #[arg(long)]
    pub deterministic: bool,
    /// Retrain on a background thread so prediction never stalls
    #[arg(long = "background-training")]
    pub background_training: bool,
    /// Flat key=value config file; flags win on conflict
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Samples CSV path; default stdout
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Labels CSV path; defaults to `<output>.labels.csv`
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Number of coupled node pairs
    #[arg(long, default_value_t = 2)]
    pub pairs: usize,
    /// Simulated duration in seconds
    #[arg(long, default_value_t = 57_600)]
    pub duration: u64,
    /// Seconds between samples
    #[arg(long = "sample-period", default_value_t = 1.0)]
    pub sample_period: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// clean: no faults; standard: the six-fault evaluation scenario
    #[arg(long, value_enum, default_value_t = Scenario::Clean)]
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Clean,
    Standard,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Labels CSV for a pre-generated dataset; defaults to
    /// `<input>.labels.csv` when --input is given
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Event-to-label match slack in buckets
    #[arg(long = "slack-buckets", default_value_t = 2)]
    pub slack_buckets: u32,
    /// Node pairs for the generated scenario
    #[arg(long, default_value_t = 2)]
    pub pairs: usize,
    /// Simulated seconds for the generated scenario
    #[arg(long, default_value_t = 57_600)]
    pub duration: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Fully resolved pipeline settings (defaults <- config file <- flags).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<String>,
    pub output: Option<PathBuf>,
    pub window: usize,
    pub stride: usize,
    pub bucket_seconds: u32,
    pub retrain_buckets: usize,
    pub scaler: ScalerKind,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub state_dir: Option<PathBuf>,
    pub deterministic: bool,
    pub background_training: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            output: None,
            window: 4,
            stride: 1,
            bucket_seconds: 10,
            retrain_buckets: 1440,
            scaler: ScalerKind::MinMax,
            epochs: 50,
            lr: 1e-3,
            seed: 1,
            state_dir: None,
            deterministic: false,
            background_training: false,
        }
    }
}

impl RunConfig {
    pub fn resolve(args: &PipelineArgs) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Input(format!("cannot read config {}: {e}", path.display()))
            })?;
            cfg.apply_config_text(&text)?;
        }
        cfg.apply_flags(args)?;
        if cfg.window < 1 || cfg.stride < 1 || cfg.bucket_seconds < 1 || cfg.retrain_buckets < 1 {
            return Err(CliError::Input(
                "window, stride, bucket-seconds and retrain-buckets must be >= 1".into(),
            ));
        }
        Ok(cfg)
    }

    fn apply_config_text(&mut self, text: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Input(format!("config line {}: expected key=value", no + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| CliError::Input(format!("config line {}: {what}", no + 1));
            match key {
                "input" => self.input = Some(value.to_string()),
                "output" => self.output = Some(PathBuf::from(value)),
                "window" => self.window = value.parse().map_err(|_| bad("bad window"))?,
                "stride" => self.stride = value.parse().map_err(|_| bad("bad stride"))?,
                "bucket-seconds" => {
                    self.bucket_seconds = value.parse().map_err(|_| bad("bad bucket-seconds"))?
                }
                "retrain-buckets" => {
                    self.retrain_buckets = value.parse().map_err(|_| bad("bad retrain-buckets"))?
                }
                "scaler" => self.scaler = parse_scaler(value).map_err(|_| bad("bad scaler"))?,
                "epochs" => self.epochs = value.parse().map_err(|_| bad("bad epochs"))?,
                "lr" => self.lr = value.parse().map_err(|_| bad("bad lr"))?,
                "seed" => self.seed = value.parse().map_err(|_| bad("bad seed"))?,
                "state-dir" => self.state_dir = Some(PathBuf::from(value)),
                "deterministic" => {
                    self.deterministic = value.parse().map_err(|_| bad("bad deterministic"))?
                }
                "background-training" => {
                    self.background_training =
                        value.parse().map_err(|_| bad("bad background-training"))?
                }
                other => {
                    return Err(CliError::Input(format!(
                        "config line {}: unknown key `{other}`",
                        no + 1
                    )))
                }
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, args: &PipelineArgs) -> Result<(), CliError> {
        if let Some(v) = &args.input {
            self.input = Some(v.clone());
        }
        if let Some(v) = &args.output {
            self.output = Some(v.clone());
        }
        if let Some(v) = args.window {
            self.window = v;
        }
        if let Some(v) = args.stride {
            self.stride = v;
        }
        if let Some(v) = args.bucket_seconds {
            self.bucket_seconds = v;
        }
        if let Some(v) = args.retrain_buckets {
            self.retrain_buckets = v;
        }
        if let Some(v) = &args.scaler {
            self.scaler =
                parse_scaler(v).map_err(|_| CliError::Input(format!("unknown scaler `{v}`")))?;
        }
        if let Some(v) = args.epochs {
            self.epochs = v;
        }
        if let Some(v) = args.lr {
            self.lr = v;
        }
        if let Some(v) = args.seed {
            self.seed = v;
        }
        if let Some(v) = &args.state_dir {
            self.state_dir = Some(v.clone());
        }
        if args.deterministic {
            self.deterministic = true;
        }
        if args.background_training {
            self.background_training = true;
        }
        Ok(())
    }
}

fn parse_scaler(s: &str) -> Result<ScalerKind, ()> {
    s.parse::<ScalerKind>()
}
