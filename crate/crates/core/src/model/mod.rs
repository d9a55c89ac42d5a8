//! The LSTM autoencoder: forward pass, loss, backpropagation through time,
//! optimizer, parameter counting and checkpointing.
//!
//! The encoder consumes the window as a sequence; the final bottleneck hidden
//! state is repeated `w` times as the decoder input sequence (the bridge);
//! decoder outputs pass through a per-timestep linear projection back to
//! feature space. Everything is `f64` and deterministic for a fixed seed.

mod adam;
mod checkpoint;
mod gradcheck;
mod lstm;
mod train;

pub use adam::{adam_step, AdamState};
pub(crate) use checkpoint::{
    append_checksum as checkpoint_append_checksum, put_f64 as checkpoint_put_f64,
    put_u16 as checkpoint_put_u16, put_u64 as checkpoint_put_u64,
    verify_checksum as checkpoint_verify, Cursor as CheckpointCursor,
};
pub use checkpoint::{load_model, save_model, CheckpointError};
pub use gradcheck::{finite_difference_check, tiny_check_model, GradCheckReport, TensorCheck};
pub use lstm::{lstm_cell_forward, LstmLayerParams};
pub use train::{train, TrainOptions};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::window::Window;
use lstm::LayerTrace;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

/// Architecture of the autoencoder: input width and encoder hidden sizes.
/// The decoder mirrors the encoder (reversed hidden sizes) and the
/// projection maps the last decoder width back to `input_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input_dim: crate::telemetry::FEATURE_COUNT,
            encoder_hidden: vec![64, 32, 16],
        }
    }
}

impl ModelDims {
    pub fn bottleneck(&self) -> usize {
        *self
            .encoder_hidden
            .last()
            .expect("encoder needs at least one layer")
    }

    /// Decoder hidden sizes: the encoder sizes reversed.
    pub fn decoder_hidden(&self) -> Vec<usize> {
        self.encoder_hidden.iter().rev().copied().collect()
    }
}

/// Training hyperparameters. `init_scale` multiplies the per-layer
/// Glorot-uniform bound used at (re)initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 1,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    // negated comparisons reject NaN too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs < 1 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ModelError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(
                "learning_rate must be > 0".into(),
            ));
        }
        if !(self.init_scale > 0.0) {
            return Err(ModelError::InvalidConfig("init_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// All weights of the autoencoder, plus the window length it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub encoder: Vec<LstmLayerParams>,
    pub decoder: Vec<LstmLayerParams>,
    /// Projection back to feature space, column-major
    /// `input_dim x last_decoder_hidden`.
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    /// Window length the model expects.
    pub window_len: usize,
}

impl AutoencoderParams {
    /// Builds a zero-initialized model with the given architecture.
    pub fn zeros(dims: &ModelDims, window_len: usize) -> Self {
        assert!(!dims.encoder_hidden.is_empty());
        assert!(window_len >= 1);
        let mut encoder = Vec::new();
        let mut in_dim = dims.input_dim;
        for &h in &dims.encoder_hidden {
            encoder.push(LstmLayerParams::zeros(in_dim, h));
            in_dim = h;
        }
        let mut decoder = Vec::new();
        let mut d_in = dims.bottleneck();
        for &h in &dims.decoder_hidden() {
            decoder.push(LstmLayerParams::zeros(d_in, h));
            d_in = h;
        }
        let last = d_in;
        AutoencoderParams {
            encoder,
            decoder,
            proj_w: vec![0.0; dims.input_dim * last],
            proj_b: vec![0.0; dims.input_dim],
            window_len,
        }
    }

    /// Seeded Glorot-uniform initialization; biases zero except the forget
    /// gate block, which starts at +1.
    pub fn init(dims: &ModelDims, window_len: usize, cfg: &TrainConfig) -> Self {
        use rand::SeedableRng;
        let mut model = Self::zeros(dims, window_len);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for layer in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
            layer.glorot_init(&mut rng, cfg.init_scale);
        }
        let out = dims.input_dim;
        let last = model.decoder.last().map(|l| l.hidden_dim).unwrap_or(0);
        let bound = cfg.init_scale * (6.0 / (last + out) as f64).sqrt();
        lstm::fill_uniform(&mut model.proj_w, &mut rng, bound);
        model
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].input_dim
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.input_dim(),
            encoder_hidden: self.encoder.iter().map(|l| l.hidden_dim).collect(),
        }
    }

    /// Exact count of trainable scalars, by closed form per layer.
    pub fn count_parameters(&self) -> usize {
        let lstm: usize = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| 4 * ((l.input_dim + l.hidden_dim) * l.hidden_dim + l.hidden_dim))
            .sum();
        lstm + self.proj_w.len() + self.proj_b.len()
    }

    /// Count by enumerating every stored element; must always equal
    /// [`Self::count_parameters`].
    pub fn count_elements(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameter tensors in the canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            out.push(&l.w_x);
            out.push(&l.w_h);
            out.push(&l.b);
        }
        out.push(&self.proj_w);
        out.push(&self.proj_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut l.w_x);
            out.push(&mut l.w_h);
            out.push(&mut l.b);
        }
        out.push(&mut self.proj_w);
        out.push(&mut self.proj_b);
        out
    }

    /// Tensor names matching the [`Self::tensors`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, _) in self.encoder.iter().enumerate() {
            out.push(format!("encoder[{i}].w_x"));
            out.push(format!("encoder[{i}].w_h"));
            out.push(format!("encoder[{i}].b"));
        }
        for (i, _) in self.decoder.iter().enumerate() {
            out.push(format!("decoder[{i}].w_x"));
            out.push(format!("decoder[{i}].w_h"));
            out.push(format!("decoder[{i}].b"));
        }
        out.push("proj_w".into());
        out.push("proj_b".into());
        out
    }

    fn validate_window(&self, window: &Window) -> Result<(), ModelError> {
        if window.rows.len() != self.window_len {
            return Err(ModelError::DimensionMismatch(format!(
                "window has {} rows, model expects {}",
                window.rows.len(),
                self.window_len
            )));
        }
        for row in &window.rows {
            if row.len() != self.input_dim() {
                return Err(ModelError::DimensionMismatch(format!(
                    "row has {} features, model expects {}",
                    row.len(),
                    self.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Reconstructs one window. Deterministic; returns `w` rows of
    /// `input_dim` values.
    pub fn forward(&self, window: &Window) -> Result<Vec<Vec<f64>>, ModelError> {
        self.validate_window(window)?;
        Ok(self.forward_trace(window).outputs)
    }

    fn forward_trace(&self, window: &Window) -> ForwardTrace {
        let w = self.window_len;
        let mut enc = Vec::with_capacity(self.encoder.len());
        let mut seq: &[Vec<f64>] = &window.rows;
        for layer in &self.encoder {
            let trace = layer.forward_sequence(seq);
            enc.push(trace);
            seq = &enc.last().expect("just pushed").hiddens;
        }
        let bridge = enc
            .last()
            .expect("at least one encoder layer")
            .hiddens
            .last()
            .expect("window length >= 1")
            .clone();
        let dec_input: Vec<Vec<f64>> = vec![bridge.clone(); w];
        let mut dec = Vec::with_capacity(self.decoder.len());
        let mut seq: &[Vec<f64>] = &dec_input;
        for layer in &self.decoder {
            let trace = layer.forward_sequence(seq);
            dec.push(trace);
            seq = &dec.last().expect("just pushed").hiddens;
        }
        let out_dim = self.input_dim();
        let last_hidden = &dec.last().expect("at least one decoder layer").hiddens;
        let outputs = last_hidden
            .iter()
            .map(|h| {
                let mut y = self.proj_b.clone();
                lstm::add_matvec(&self.proj_w, out_dim, h, &mut y);
                y
            })
            .collect();
        ForwardTrace {
            enc,
            dec,
            dec_input,
            outputs,
        }
    }

    /// Gradient of the batch-mean MSE loss for a single window, plus the
    /// window's loss. The gradient has the same shape as the parameters.
    fn backward_window(&self, window: &Window) -> (AutoencoderParams, f64) {
        let w = self.window_len;
        let out_dim = self.input_dim();
        let trace = self.forward_trace(window);
        let mut grad = AutoencoderParams::zeros(&self.dims(), w);

        let denom = (w * out_dim) as f64;
        let mut loss = 0.0;
        // d loss / d output, per timestep
        let mut d_out: Vec<Vec<f64>> = Vec::with_capacity(w);
        for (y, x) in trace.outputs.iter().zip(&window.rows) {
            let mut dy = vec![0.0; out_dim];
            for d in 0..out_dim {
                let diff = y[d] - x[d];
                loss += diff * diff;
                dy[d] = 2.0 * diff / denom;
            }
            d_out.push(dy);
        }
        loss /= denom;

        // Projection backward: build upstream gradients for the last decoder
        // layer's hidden sequence.
        let last_dec = trace.dec.last().expect("decoder trace");
        let last_hidden_dim = self.decoder.last().expect("decoder layer").hidden_dim;
        let mut d_hidden: Vec<Vec<f64>> = vec![vec![0.0; last_hidden_dim]; w];
        for t in 0..w {
            let h = &last_dec.hiddens[t];
            let dy = &d_out[t];
            lstm::add_outer(&mut grad.proj_w, out_dim, dy, h);
            for (gb, d) in grad.proj_b.iter_mut().zip(dy) {
                *gb += d;
            }
            lstm::add_matvec_t(&self.proj_w, out_dim, dy, &mut d_hidden[t]);
        }

        // Decoder BPTT, top layer down to the bridge.
        for (li, layer) in self.decoder.iter().enumerate().rev() {
            let xs: &[Vec<f64>] = if li == 0 {
                &trace.dec_input
            } else {
                &trace.dec[li - 1].hiddens
            };
            let d_inputs =
                layer.backward_sequence(xs, &trace.dec[li], &d_hidden, &mut grad.decoder[li]);
            d_hidden = d_inputs;
        }
        // The decoder input is the bridge repeated w times.
        let bottleneck = self.encoder.last().expect("encoder layer").hidden_dim;
        let mut d_bridge = vec![0.0; bottleneck];
        for dx in &d_hidden {
            for (db, d) in d_bridge.iter_mut().zip(dx) {
                *db += d;
            }
        }

        // Encoder BPTT; only the final hidden state of the last layer feeds
        // the bridge.
        let mut d_hidden: Vec<Vec<f64>> = vec![vec![0.0; bottleneck]; w];
        d_hidden[w - 1] = d_bridge;
        for (li, layer) in self.encoder.iter().enumerate().rev() {
            let xs: &[Vec<f64>] = if li == 0 {
                &window.rows
            } else {
                &trace.enc[li - 1].hiddens
            };
            let d_inputs =
                layer.backward_sequence(xs, &trace.enc[li], &d_hidden, &mut grad.encoder[li]);
            d_hidden = d_inputs;
        }

        (grad, loss)
    }
}

struct ForwardTrace {
    enc: Vec<LayerTrace>,
    dec: Vec<LayerTrace>,
    dec_input: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

/// Mean squared error over all `w * dim` entries.
pub fn loss(reconstruction: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64, ModelError> {
    if reconstruction.len() != target.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "reconstruction has {} rows, target has {}",
            reconstruction.len(),
            target.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (r, t) in reconstruction.iter().zip(target) {
        if r.len() != t.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "reconstruction row has {} entries, target row has {}",
                r.len(),
                t.len()
            )));
        }
        for (a, b) in r.iter().zip(t) {
            let d = a - b;
            sum += d * d;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Batch gradient: the mean of per-window gradients, plus the mean loss.
///
/// Per-window gradients are always computed in isolation and reduced in
/// window order, so sequential and parallel execution produce bitwise
/// identical results.
pub fn backward(
    params: &AutoencoderParams,
    batch: &[&Window],
    parallel: bool,
) -> Result<(AutoencoderParams, f64), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    for window in batch {
        params.validate_window(window)?;
    }
    let per_window: Vec<(AutoencoderParams, f64)> = if parallel {
        use rayon::prelude::*;
        batch
            .par_iter()
            .map(|win| params.backward_window(win))
            .collect()
    } else {
        batch
            .iter()
            .map(|win| params.backward_window(win))
            .collect()
    };
    let mut iter = per_window.into_iter();
    let (mut acc, mut loss_sum) = iter.next().expect("non-empty batch");
    for (g, l) in iter {
        add_assign(&mut acc, &g);
        loss_sum += l;
    }
    let scale = 1.0 / batch.len() as f64;
    scale_params(&mut acc, scale);
    Ok((acc, loss_sum * scale))
}

pub(crate) fn add_assign(acc: &mut AutoencoderParams, other: &AutoencoderParams) {
    for (a, b) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

pub(crate) fn scale_params(params: &mut AutoencoderParams, scale: f64) {
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x *= scale;
        }
    }
}
