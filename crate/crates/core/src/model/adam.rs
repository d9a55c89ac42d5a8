//! Adam optimizer with bias correction.

use super::{AutoencoderParams, TrainConfig};

/// First/second moment accumulators shaped like the parameters, plus the
/// step counter used for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(params: &AutoencoderParams) -> Self {
        let m: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn matches(&self, params: &AutoencoderParams) -> bool {
        let tensors = params.tensors();
        self.m.len() == tensors.len()
            && self
                .m
                .iter()
                .zip(&self.v)
                .zip(&tensors)
                .all(|((m, v), t)| m.len() == t.len() && v.len() == t.len())
    }
}

/// One element-wise Adam update:
/// `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`,
/// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
pub fn adam_step(
    params: &mut AutoencoderParams,
    grads: &AutoencoderParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    debug_assert!(state.matches(params));
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);
    for (((tensor, gtensor), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..tensor.len() {
            let g = gtensor[i];
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}
