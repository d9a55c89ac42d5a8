//! Central finite-difference verification of the analytic gradients.
//!
//! The numeric side only ever calls the forward pass and the loss, so it is
//! independent of the backpropagation code it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, loss, AutoencoderParams, ModelDims, ModelError, TrainConfig};
use crate::window::Window;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub per_tensor: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn batch_loss(params: &AutoencoderParams, batch: &[&Window]) -> f64 {
    let mut sum = 0.0;
    for win in batch {
        let recon = params.forward(win).expect("validated batch");
        sum += loss(&recon, &win.rows).expect("matching shapes");
    }
    sum / batch.len() as f64
}

/// Compares the analytic batch gradient against central finite differences
/// `(L(p+eps) - L(p-eps)) / (2*eps)` for every coordinate.
///
/// `corrupt` adds a delta to one flat coordinate of the analytic gradient
/// first; it exists as a negative control for the check itself.
pub fn finite_difference_check(
    params: &AutoencoderParams,
    batch: &[&Window],
    epsilon: f64,
    corrupt: Option<(usize, f64)>,
) -> Result<GradCheckReport, ModelError> {
    let (mut analytic, _) = backward(params, batch, false)?;
    if let Some((index, delta)) = corrupt {
        let mut remaining = index;
        for tensor in analytic.tensors_mut() {
            if remaining < tensor.len() {
                tensor[remaining] += delta;
                break;
            }
            remaining -= tensor.len();
        }
    }

    let names = params.tensor_names();
    let mut per_tensor = Vec::with_capacity(names.len());
    let mut max_rel = 0.0f64;
    let mut coordinates = 0usize;
    let mut probe = params.clone();
    for (ti, name) in names.into_iter().enumerate() {
        let len = params.tensors()[ti].len();
        let mut tensor_max = 0.0f64;
        for i in 0..len {
            let original = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = original + epsilon;
            let up = batch_loss(&probe, batch);
            probe.tensors_mut()[ti][i] = original - epsilon;
            let down = batch_loss(&probe, batch);
            probe.tensors_mut()[ti][i] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.tensors()[ti][i];
            // Floor the denominator: at coordinates where both gradients are
            // ~0 the finite difference is pure roundoff noise.
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            tensor_max = tensor_max.max(rel);
            coordinates += 1;
        }
        max_rel = max_rel.max(tensor_max);
        per_tensor.push(TensorCheck {
            name,
            max_rel_error: tensor_max,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        coordinates,
        per_tensor,
    })
}

/// Builds the seeded tiny model and batch used by the `gradcheck` command:
/// 2 features, hidden sizes 3 and 2, window length 3, three random windows.
pub fn tiny_check_model(seed: u64) -> (AutoencoderParams, Vec<Window>) {
    let dims = ModelDims {
        input_dim: 2,
        encoder_hidden: vec![3, 2],
    };
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let params = AutoencoderParams::init(&dims, 3, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let windows = (0..3)
        .map(|_| Window {
            start: 0,
            rows: (0..3)
                .map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect(),
        })
        .collect();
    (params, windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let (params, windows) = tiny_check_model(42);
        let batch: Vec<&Window> = windows.iter().collect();
        let report = finite_difference_check(&params, &batch, 1e-5, None).unwrap();
        assert!(report.coordinates > 200);
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn corrupted_gradient_fails_the_check() {
        let (params, windows) = tiny_check_model(42);
        let batch: Vec<&Window> = windows.iter().collect();
        let report = finite_difference_check(&params, &batch, 1e-5, Some((17, 0.5))).unwrap();
        assert!(report.max_rel_error > 1e-4);
    }

    #[test]
    fn report_covers_every_tensor() {
        let (params, windows) = tiny_check_model(3);
        let batch: Vec<&Window> = windows.iter().collect();
        let report = finite_difference_check(&params, &batch, 1e-5, None).unwrap();
        assert_eq!(report.per_tensor.len(), params.tensors().len());
        assert_eq!(report.coordinates, params.count_parameters());
        assert!(report.per_tensor.iter().any(|t| t.name == "encoder[0].w_x"));
        assert!(report.per_tensor.iter().any(|t| t.name == "proj_b"));
    }

    /// Gradient check across several random shapes and seeds; dims <= 4.
    #[test]
    fn random_small_models_pass_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..4u64 {
            let dims = ModelDims {
                input_dim: rng.gen_range(1..=3),
                encoder_hidden: (0..rng.gen_range(1..=3))
                    .map(|_| rng.gen_range(1..=4))
                    .collect(),
            };
            let w = rng.gen_range(1..=4);
            let cfg = TrainConfig {
                seed: 1000 + case,
                ..TrainConfig::default()
            };
            let params = AutoencoderParams::init(&dims, w, &cfg);
            let windows: Vec<Window> = (0..2)
                .map(|_| Window {
                    start: 0,
                    rows: (0..w)
                        .map(|_| {
                            (0..dims.input_dim)
                                .map(|_| rng.gen_range(-1.0..1.0))
                                .collect()
                        })
                        .collect(),
                })
                .collect();
            let batch: Vec<&Window> = windows.iter().collect();
            let report = finite_difference_check(&params, &batch, 1e-5, None).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "case {case} dims {dims:?} w {w}: max rel {}",
                report.max_rel_error
            );
        }
    }
}
