//! Epoch-based training with seeded shuffling and warm-start support.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, backward, AdamState, AutoencoderParams, ModelError, TrainConfig};
use crate::window::Window;

/// Execution knobs that do not affect the numeric result: per-window batch
/// gradients are reduced in window order either way, so parallel and
/// sequential runs are bitwise identical. The step hook fires after each
/// optimizer step (used for diagnostics and stall testing).
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub parallel: bool,
    pub step_hook: Option<&'a (dyn Fn(u64) + Sync)>,
}

/// Runs `cfg.epochs` full passes over `windows` and returns the per-epoch
/// mean loss history (one entry per epoch).
///
/// With `warm_start` the given parameters and optimizer moments continue
/// training; otherwise both are freshly initialized from `cfg.seed`.
pub fn train(
    params: &mut AutoencoderParams,
    opt_state: &mut AdamState,
    windows: &[Window],
    cfg: &TrainConfig,
    warm_start: bool,
    opts: &TrainOptions<'_>,
) -> Result<Vec<f64>, ModelError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if !warm_start {
        *params = AutoencoderParams::init(&params.dims(), params.window_len, cfg);
        *opt_state = AdamState::zeros_like(params);
    }
    for win in windows {
        params.validate_window(win)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &windows[i]).collect();
            let (grads, batch_loss) = backward(params, &batch, opts.parallel)?;
            adam_step(params, &grads, opt_state, cfg);
            loss_sum += batch_loss * batch.len() as f64;
            step += 1;
            if let Some(hook) = opts.step_hook {
                hook(step);
            }
        }
        history.push(loss_sum / windows.len() as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            input_dim: 2,
            encoder_hidden: vec![4, 2],
        }
    }

    fn fresh(dims: &ModelDims, w: usize) -> (AutoencoderParams, AdamState) {
        let params = AutoencoderParams::zeros(dims, w);
        let state = AdamState::zeros_like(&params);
        (params, state)
    }

    #[test]
    fn zero_epochs_is_rejected_by_config_validation() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
        let (mut p, mut s) = fresh(&tiny_dims(), 2);
        let windows = vec![Window {
            start: 0,
            rows: vec![vec![0.5; 2]; 2],
        }];
        assert!(train(
            &mut p,
            &mut s,
            &windows,
            &cfg,
            false,
            &TrainOptions::default()
        )
        .is_err());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let (mut p, mut s) = fresh(&tiny_dims(), 2);
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&mut p, &mut s, &[], &cfg, false, &TrainOptions::default()),
            Err(ModelError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn constant_dataset_converges_within_fifty_epochs() {
        let dims = tiny_dims();
        let (mut p, mut s) = fresh(&dims, 3);
        let cfg = TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        };
        let windows: Vec<Window> = (0..512)
            .map(|_| Window {
                start: 0,
                rows: vec![vec![0.5; 2]; 3],
            })
            .collect();
        let history = train(
            &mut p,
            &mut s,
            &windows,
            &cfg,
            false,
            &TrainOptions::default(),
        )
        .unwrap();
        assert_eq!(history.len(), 50);
        assert!(
            history[49] < 0.01 * history[0],
            "first={} last={}",
            history[0],
            history[49]
        );
    }

    #[test]
    fn same_seed_gives_bitwise_identical_history() {
        let dims = tiny_dims();
        let cfg = TrainConfig {
            epochs: 5,
            seed: 21,
            ..TrainConfig::default()
        };
        let windows: Vec<Window> = (0..40)
            .map(|i| Window {
                start: 0,
                rows: (0..3)
                    .map(|t| vec![((i + t) as f64 * 0.37).sin(), ((i * t) as f64 * 0.11).cos()])
                    .collect(),
            })
            .collect();
        let run = || {
            let (mut p, mut s) = fresh(&dims, 3);
            let h = train(
                &mut p,
                &mut s,
                &windows,
                &cfg,
                false,
                &TrainOptions::default(),
            )
            .unwrap();
            (p, h)
        };
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(h1.len(), h2.len());
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (ta, tb) in p1.tensors().into_iter().zip(p2.tensors()) {
            for (x, y) in ta.iter().zip(tb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn parallel_training_matches_sequential_bitwise() {
        let dims = tiny_dims();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 4,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let windows: Vec<Window> = (0..30)
            .map(|i| Window {
                start: 0,
                rows: (0..3)
                    .map(|t| vec![(i as f64 - t as f64) * 0.01, (i * t) as f64 * 0.02])
                    .collect(),
            })
            .collect();
        let run = |parallel| {
            let (mut p, mut s) = fresh(&dims, 3);
            let opts = TrainOptions {
                parallel,
                step_hook: None,
            };
            let h = train(&mut p, &mut s, &windows, &cfg, false, &opts).unwrap();
            (p, h)
        };
        let (p_seq, h_seq) = run(false);
        let (p_par, h_par) = run(true);
        for (a, b) in h_seq.iter().zip(&h_par) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (ta, tb) in p_seq.tensors().into_iter().zip(p_par.tensors()) {
            for (x, y) in ta.iter().zip(tb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn warm_start_continues_from_given_state() {
        let dims = tiny_dims();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let windows: Vec<Window> = (0..16)
            .map(|i| Window {
                start: 0,
                rows: vec![vec![0.1 * i as f64, 0.5]; 3],
            })
            .collect();
        let (mut p, mut s) = fresh(&dims, 3);
        train(
            &mut p,
            &mut s,
            &windows,
            &cfg,
            false,
            &TrainOptions::default(),
        )
        .unwrap();
        let snapshot = p.clone();
        let step_before = s.step;
        train(
            &mut p,
            &mut s,
            &windows,
            &cfg,
            true,
            &TrainOptions::default(),
        )
        .unwrap();
        // warm start neither reinitializes weights nor resets the optimizer
        assert_ne!(p, snapshot);
        assert!(s.step > step_before);
    }

    #[test]
    fn step_hook_fires_once_per_optimizer_step() {
        use std::sync::atomic::{AtomicU64, Ordering};
        let dims = tiny_dims();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let windows: Vec<Window> = (0..10)
            .map(|_| Window {
                start: 0,
                rows: vec![vec![0.5; 2]; 3],
            })
            .collect();
        let count = AtomicU64::new(0);
        let hook = |_step| {
            count.fetch_add(1, Ordering::Relaxed);
        };
        let (mut p, mut s) = fresh(&dims, 3);
        let opts = TrainOptions {
            parallel: false,
            step_hook: Some(&hook),
        };
        train(&mut p, &mut s, &windows, &cfg, false, &opts).unwrap();
        // ceil(10/4) = 3 batches per epoch, 2 epochs
        assert_eq!(count.load(Ordering::Relaxed), 6);
    }
}
