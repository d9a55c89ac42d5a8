//! Single LSTM layer: parameters, cell step, and sequence forward/backward.
//!
//! Gate pre-activations for input, forget, cell and output gates are stacked
//! as four blocks of `hidden_dim` rows, so one matrix-vector product per
//! input computes all gates. Weight matrices are stored column-major
//! (each input column contiguous over the `4*hidden_dim` rows), which keeps
//! the forward accumulation loop vectorizable.

use rand::Rng;

use super::ModelError;

/// Weights of one LSTM layer. `w_x` is `(4*hidden_dim) x input_dim`, `w_h`
/// is `(4*hidden_dim) x hidden_dim`, both column-major; `b` holds the gate
/// biases in blocks `[i | f | g | o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        assert!(input_dim >= 1 && hidden_dim >= 1);
        LstmLayerParams {
            input_dim,
            hidden_dim,
            w_x: vec![0.0; 4 * hidden_dim * input_dim],
            w_h: vec![0.0; 4 * hidden_dim * hidden_dim],
            b: vec![0.0; 4 * hidden_dim],
        }
    }

    /// Glorot-uniform weights; zero biases except the forget-gate block,
    /// which starts at +1 to ease early gradient flow.
    pub fn glorot_init<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        let bx = scale * (6.0 / (self.input_dim + self.hidden_dim) as f64).sqrt();
        fill_uniform(&mut self.w_x, rng, bx);
        let bh = scale * (6.0 / (2 * self.hidden_dim) as f64).sqrt();
        fill_uniform(&mut self.w_h, rng, bh);
        self.b.fill(0.0);
        let h = self.hidden_dim;
        self.b[h..2 * h].fill(1.0);
    }

    /// One cell step without dimension checks; `h`/`c` are updated in place
    /// and `gates`/`tanh_c` receive the post-activation trace.
    fn step(
        &self,
        x: &[f64],
        h: &mut [f64],
        c: &mut [f64],
        gates: &mut Vec<f64>,
        tanh_c: &mut [f64],
    ) {
        let hd = self.hidden_dim;
        let rows = 4 * hd;
        let mut z = self.b.clone();
        add_matvec(&self.w_x, rows, x, &mut z);
        add_matvec(&self.w_h, rows, h, &mut z);
        for j in 0..hd {
            z[j] = sigmoid(z[j]);
            z[hd + j] = sigmoid(z[hd + j]);
            z[2 * hd + j] = z[2 * hd + j].tanh();
            z[3 * hd + j] = sigmoid(z[3 * hd + j]);
        }
        for j in 0..hd {
            let (i, f, g, o) = (z[j], z[hd + j], z[2 * hd + j], z[3 * hd + j]);
            let c_new = f * c[j] + i * g;
            let tc = c_new.tanh();
            c[j] = c_new;
            tanh_c[j] = tc;
            h[j] = o * tc;
        }
        *gates = z;
    }

    /// Runs the layer over a sequence from zero initial state, recording the
    /// per-timestep trace needed for backpropagation.
    pub(crate) fn forward_sequence(&self, xs: &[Vec<f64>]) -> LayerTrace {
        let hd = self.hidden_dim;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut trace = LayerTrace {
            gates: Vec::with_capacity(xs.len()),
            cells: Vec::with_capacity(xs.len()),
            tanh_cells: Vec::with_capacity(xs.len()),
            hiddens: Vec::with_capacity(xs.len()),
        };
        for x in xs {
            let mut gates = Vec::new();
            let mut tanh_c = vec![0.0; hd];
            self.step(x, &mut h, &mut c, &mut gates, &mut tanh_c);
            trace.gates.push(gates);
            trace.cells.push(c.clone());
            trace.tanh_cells.push(tanh_c);
            trace.hiddens.push(h.clone());
        }
        trace
    }

    /// Backpropagation through time over a recorded sequence.
    ///
    /// `d_hiddens[t]` is the upstream gradient w.r.t. `h_t`; parameter
    /// gradients accumulate into `grad` and the gradient w.r.t. each input
    /// is returned.
    pub(crate) fn backward_sequence(
        &self,
        xs: &[Vec<f64>],
        trace: &LayerTrace,
        d_hiddens: &[Vec<f64>],
        grad: &mut LstmLayerParams,
    ) -> Vec<Vec<f64>> {
        let hd = self.hidden_dim;
        let rows = 4 * hd;
        let steps = xs.len();
        let zeros = vec![0.0; hd];
        let mut dh_carry = vec![0.0; hd];
        let mut dc_carry = vec![0.0; hd];
        let mut d_inputs = vec![vec![0.0; self.input_dim]; steps];
        let mut dz = vec![0.0; rows];
        for t in (0..steps).rev() {
            let gates = &trace.gates[t];
            let tanh_c = &trace.tanh_cells[t];
            let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zeros };
            let h_prev = if t > 0 { &trace.hiddens[t - 1] } else { &zeros };
            for j in 0..hd {
                let dh = d_hiddens[t][j] + dh_carry[j];
                let (i, f, g, o) = (
                    gates[j],
                    gates[hd + j],
                    gates[2 * hd + j],
                    gates[3 * hd + j],
                );
                let tc = tanh_c[j];
                let d_o = dh * tc;
                let dc = dc_carry[j] + dh * o * (1.0 - tc * tc);
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * c_prev[j];
                dz[j] = d_i * i * (1.0 - i);
                dz[hd + j] = d_f * f * (1.0 - f);
                dz[2 * hd + j] = d_g * (1.0 - g * g);
                dz[3 * hd + j] = d_o * o * (1.0 - o);
                dc_carry[j] = dc * f;
            }
            for (gb, d) in grad.b.iter_mut().zip(&dz) {
                *gb += d;
            }
            add_outer(&mut grad.w_x, rows, &dz, &xs[t]);
            add_outer(&mut grad.w_h, rows, &dz, h_prev);
            add_matvec_t(&self.w_x, rows, &dz, &mut d_inputs[t]);
            dh_carry.fill(0.0);
            add_matvec_t(&self.w_h, rows, &dz, &mut dh_carry);
        }
        d_inputs
    }
}

/// Per-timestep activations recorded during a forward pass.
pub(crate) struct LayerTrace {
    /// Post-activation gate values, blocks `[i | f | g | o]`.
    pub gates: Vec<Vec<f64>>,
    pub cells: Vec<Vec<f64>>,
    pub tanh_cells: Vec<Vec<f64>>,
    pub hiddens: Vec<Vec<f64>>,
}

/// Standard LSTM cell recurrence for a single step from explicit state.
///
/// `i`, `f`, `o` are logistic sigmoids of affine maps, `g` is tanh;
/// `c_t = f*c_prev + i*g`, `h_t = o*tanh(c_t)`.
pub fn lstm_cell_forward(
    layer: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    if x.len() != layer.input_dim {
        return Err(ModelError::DimensionMismatch(format!(
            "input has {} entries, layer expects {}",
            x.len(),
            layer.input_dim
        )));
    }
    if h_prev.len() != layer.hidden_dim || c_prev.len() != layer.hidden_dim {
        return Err(ModelError::DimensionMismatch(format!(
            "state has {}/{} entries, layer expects {}",
            h_prev.len(),
            c_prev.len(),
            layer.hidden_dim
        )));
    }
    let mut h = h_prev.to_vec();
    let mut c = c_prev.to_vec();
    let mut gates = Vec::new();
    let mut tanh_c = vec![0.0; layer.hidden_dim];
    layer.step(x, &mut h, &mut c, &mut gates, &mut tanh_c);
    Ok((h, c))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn fill_uniform<R: Rng>(values: &mut [f64], rng: &mut R, bound: f64) {
    for v in values.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

/// `z += W * x` for a column-major `rows x x.len()` matrix.
pub(crate) fn add_matvec(w: &[f64], rows: usize, x: &[f64], z: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * x.len());
    debug_assert_eq!(z.len(), rows);
    for (c, &xc) in x.iter().enumerate() {
        let col = &w[c * rows..(c + 1) * rows];
        for (zr, &wr) in z.iter_mut().zip(col) {
            *zr += wr * xc;
        }
    }
}

/// `out += W^T * v` for a column-major `rows x out.len()` matrix.
pub(crate) fn add_matvec_t(w: &[f64], rows: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * out.len());
    debug_assert_eq!(v.len(), rows);
    for (c, oc) in out.iter_mut().enumerate() {
        *oc += dot(&w[c * rows..(c + 1) * rows], v);
    }
}

/// `dW += v  (outer)  x` for a column-major `rows x x.len()` matrix.
pub(crate) fn add_outer(dw: &mut [f64], rows: usize, v: &[f64], x: &[f64]) {
    debug_assert_eq!(dw.len(), rows * x.len());
    debug_assert_eq!(v.len(), rows);
    for (c, &xc) in x.iter().enumerate() {
        let col = &mut dw[c * rows..(c + 1) * rows];
        for (dcol, &vr) in col.iter_mut().zip(v) {
            *dcol += vr * xc;
        }
    }
}

/// Dot product with four independent accumulators so the FP dependency chain
/// does not serialize the loop.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}
