//! Ingestion: raw sample parsing and 10-second bucket downsampling.
//!
//! Input is CSV, one sample per line: `timestamp,node_id,metric,value`.
//! Samples are grouped into half-open buckets `[k*B, (k+1)*B)` and averaged
//! per metric; short gaps are forward-filled, long gaps split the stream into
//! independent segments.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of metrics collected per node.
pub const FEATURE_COUNT: usize = 5;

/// One of the five per-node metrics, in canonical feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cpu0Power,
    Cpu1Power,
    Cpu0Temp,
    Cpu1Temp,
    NodePower,
}

impl Metric {
    pub const ALL: [Metric; FEATURE_COUNT] = [
        Metric::Cpu0Power,
        Metric::Cpu1Power,
        Metric::Cpu0Temp,
        Metric::Cpu1Temp,
        Metric::NodePower,
    ];

    /// Position of this metric in the feature vector.
    pub fn index(self) -> usize {
        match self {
            Metric::Cpu0Power => 0,
            Metric::Cpu1Power => 1,
            Metric::Cpu0Temp => 2,
            Metric::Cpu1Temp => 3,
            Metric::NodePower => 4,
        }
    }

    pub fn from_index(idx: usize) -> Option<Metric> {
        Metric::ALL.get(idx).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cpu0Power => "cpu0_power",
            Metric::Cpu1Power => "cpu1_power",
            Metric::Cpu0Temp => "cpu0_temp",
            Metric::Cpu1Temp => "cpu1_temp",
            Metric::NodePower => "node_power",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cpu0_power" => Ok(Metric::Cpu0Power),
            "cpu1_power" => Ok(Metric::Cpu1Power),
            "cpu0_temp" => Ok(Metric::Cpu0Temp),
            "cpu1_temp" => Ok(Metric::Cpu1Temp),
            "node_power" => Ok(Metric::NodePower),
            _ => Err(()),
        }
    }
}

/// One timestamped metric reading from one node.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    /// Seconds since epoch; real-valued, non-negative.
    pub timestamp: f64,
    pub node_id: String,
    pub metric: Metric,
    pub value: f64,
}

/// One downsampled bucket holding the 5-feature vector for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    /// Bucket start in seconds; a multiple of the bucket width.
    pub bucket_start: i64,
    pub node_id: String,
    /// Feature values ordered per [`Metric::ALL`].
    pub features: [f64; FEATURE_COUNT],
    /// True where the value came from real samples, false where gap-filled.
    pub filled: [bool; FEATURE_COUNT],
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {0}: malformed sample line")]
    MalformedLine(u64),
    #[error("line {line}: unknown metric `{name}`")]
    UnknownMetric { line: u64, name: String },
    #[error("line {0}: non-finite value")]
    NonFiniteValue(u64),
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Lazily parses the telemetry CSV format from a reader.
///
/// The header line is optional and detected by a non-numeric first field.
/// Invalid lines yield recoverable errors carrying the line number; iteration
/// may continue past them.
pub fn parse_stream<R: BufRead>(reader: R) -> SampleReader<R> {
    SampleReader {
        reader,
        line: String::new(),
        line_no: 0,
    }
}

pub struct SampleReader<R> {
    reader: R,
    line: String,
    line_no: u64,
}

impl<R: BufRead> Iterator for SampleReader<R> {
    type Item = Result<RawSample, ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let text = self.line.trim_end_matches(['\n', '\r']).trim();
            if text.is_empty() {
                continue;
            }
            match parse_line(text, self.line_no) {
                Ok(Some(sample)) => return Some(Ok(sample)),
                Ok(None) => continue, // header
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

fn parse_line(text: &str, line_no: u64) -> Result<Option<RawSample>, ParseError> {
    let mut fields = text.split(',');
    let ts_field = fields.next().unwrap_or("").trim();
    let timestamp = match ts_field.parse::<f64>() {
        Ok(t) => t,
        // Only the first line may be a header.
        Err(_) if line_no == 1 => return Ok(None),
        Err(_) => return Err(ParseError::MalformedLine(line_no)),
    };
    let node = fields
        .next()
        .ok_or(ParseError::MalformedLine(line_no))?
        .trim();
    let metric_field = fields
        .next()
        .ok_or(ParseError::MalformedLine(line_no))?
        .trim();
    let value_field = fields
        .next()
        .ok_or(ParseError::MalformedLine(line_no))?
        .trim();
    if fields.next().is_some() || node.is_empty() {
        return Err(ParseError::MalformedLine(line_no));
    }
    if !timestamp.is_finite() || timestamp < 0.0 {
        return Err(ParseError::MalformedLine(line_no));
    }
    let metric = Metric::from_str(metric_field).map_err(|_| ParseError::UnknownMetric {
        line: line_no,
        name: metric_field.to_string(),
    })?;
    let value = value_field
        .parse::<f64>()
        .map_err(|_| ParseError::MalformedLine(line_no))?;
    if !value.is_finite() {
        return Err(ParseError::NonFiniteValue(line_no));
    }
    Ok(Some(RawSample {
        timestamp,
        node_id: node.to_string(),
        metric,
        value,
    }))
}

#[derive(Debug, Error)]
pub enum DownsampleError {
    #[error("sample at t={0} is out of order across buckets")]
    OutOfOrderAcrossBuckets(f64),
}

/// Output unit of the downsampler: either a feature row or a segment break.
#[derive(Debug, Clone, PartialEq)]
pub enum DownsampleOutput {
    Row(FeatureRow),
    /// The gap before the next row exceeded `max_fill` buckets; the
    /// contiguous segment ended with the previously emitted row.
    SegmentBreak,
}

/// Configuration for bucket downsampling.
#[derive(Debug, Clone, Copy)]
pub struct DownsampleConfig {
    /// Bucket width in seconds.
    pub bucket_seconds: u32,
    /// Maximum number of consecutive empty buckets to forward-fill.
    pub max_fill: u32,
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        DownsampleConfig {
            bucket_seconds: 10,
            max_fill: 3,
        }
    }
}

/// Streaming downsampler for a single node.
///
/// Samples must be non-decreasing in bucket index; out-of-order timestamps
/// within one bucket are tolerated. Buckets missing some metrics copy the
/// missing features from the previous row (`filled = false`). A segment only
/// starts at a bucket where all metrics are present; incomplete leading
/// buckets are dropped.
#[derive(Debug)]
pub struct NodeDownsampler {
    cfg: DownsampleConfig,
    node_id: String,
    current: Option<BucketAcc>,
    prev_row: Option<FeatureRow>,
}

#[derive(Debug)]
struct BucketAcc {
    index: i64,
    sums: [f64; FEATURE_COUNT],
    counts: [u32; FEATURE_COUNT],
}

impl NodeDownsampler {
    pub fn new(node_id: impl Into<String>, cfg: DownsampleConfig) -> Self {
        NodeDownsampler {
            cfg,
            node_id: node_id.into(),
            current: None,
            prev_row: None,
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    /// Feeds one sample; returns any rows (and segment breaks) that became
    /// final because a later bucket started.
    pub fn push(&mut self, sample: &RawSample) -> Result<Vec<DownsampleOutput>, DownsampleError> {
        debug_assert_eq!(sample.node_id, self.node_id);
        let bucket = (sample.timestamp / self.cfg.bucket_seconds as f64).floor() as i64;
        let mut out = Vec::new();
        match &mut self.current {
            None => self.current = Some(BucketAcc::new(bucket)),
            Some(acc) if bucket == acc.index => {}
            Some(acc) if bucket > acc.index => {
                let closed = self.close_current(&mut out);
                let gap = bucket - closed - 1;
                if gap > 0 && self.prev_row.is_some() {
                    if gap as u32 <= self.cfg.max_fill {
                        self.emit_fill(closed, gap, &mut out);
                    } else {
                        out.push(DownsampleOutput::SegmentBreak);
                        self.prev_row = None;
                    }
                }
                self.current = Some(BucketAcc::new(bucket));
            }
            Some(_) => {
                return Err(DownsampleError::OutOfOrderAcrossBuckets(sample.timestamp));
            }
        }
        let acc = self.current.as_mut().expect("bucket accumulator exists");
        let f = sample.metric.index();
        acc.sums[f] += sample.value;
        acc.counts[f] += 1;
        Ok(out)
    }

    /// Flushes the bucket in progress at end of stream.
    pub fn finish(&mut self) -> Vec<DownsampleOutput> {
        let mut out = Vec::new();
        if self.current.is_some() {
            self.close_current(&mut out);
            self.current = None;
        }
        out
    }

    fn close_current(&mut self, out: &mut Vec<DownsampleOutput>) -> i64 {
        let acc = self.current.take().expect("bucket accumulator exists");
        let index = acc.index;
        let complete = acc.counts.iter().all(|&c| c > 0);
        if !complete && self.prev_row.is_none() {
            // No segment yet and nothing to fill from: drop the bucket.
            return index;
        }
        let mut features = [0.0; FEATURE_COUNT];
        let mut filled = [false; FEATURE_COUNT];
        for f in 0..FEATURE_COUNT {
            if acc.counts[f] > 0 {
                features[f] = acc.sums[f] / acc.counts[f] as f64;
                filled[f] = true;
            } else {
                let prev = self.prev_row.as_ref().expect("previous row exists");
                features[f] = prev.features[f];
            }
        }
        let row = FeatureRow {
            bucket_start: index * self.cfg.bucket_seconds as i64,
            node_id: self.node_id.clone(),
            features,
            filled,
        };
        self.prev_row = Some(row.clone());
        out.push(DownsampleOutput::Row(row));
        index
    }

    fn emit_fill(&mut self, after: i64, gap: i64, out: &mut Vec<DownsampleOutput>) {
        let prev = self.prev_row.clone().expect("previous row exists");
        for k in 1..=gap {
            let row = FeatureRow {
                bucket_start: (after + k) * self.cfg.bucket_seconds as i64,
                node_id: self.node_id.clone(),
                features: prev.features,
                filled: [false; FEATURE_COUNT],
            };
            self.prev_row = Some(row.clone());
            out.push(DownsampleOutput::Row(row));
        }
    }
}

impl BucketAcc {
    fn new(index: i64) -> Self {
        BucketAcc {
            index,
            sums: [0.0; FEATURE_COUNT],
            counts: [0; FEATURE_COUNT],
        }
    }
}
