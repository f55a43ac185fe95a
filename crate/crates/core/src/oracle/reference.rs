//! Plain first-order DARTS, written independently of the trainer's step
//! functions, for checking the unregularized path record by record.

use crate::alignment::{lambda_alignment, lambda_sign, min_row_norm};
use crate::data::{Dataset, Split};
use crate::supernet::{alpha_grad, ProbMatrix, SupernetConfig, SupernetState};
use crate::trainer::{Phase, TraceRecord, TrainConfig, TrainError};

pub fn vanilla_reference(
    config: &TrainConfig,
    net: &SupernetConfig,
    dataset: &Dataset,
) -> Result<Vec<TraceRecord>, TrainError> {
    let mut state = SupernetState::init(net.clone(), config.seed)?;
    let mut alpha = crate::trainer::initial_alpha(net, config.seed);
    let n = state.omega().len();
    let mut buf = vec![0.0; n];
    let (mut m, mut v) = (vec![0.0; alpha.len()], vec![0.0; alpha.len()]);
    let mut adam_t = 0i32;
    let mut trace = Vec::new();
    let mut step = 0u64;
    let total = config.epochs as f64;
    for epoch in 0..config.epochs {
        let t = epoch as f64;
        let lambda_t = config.lambda_max * t / total;
        let lr = config.omega_lr_min
            + (config.omega_lr - config.omega_lr_min) * (1.0 + (std::f64::consts::PI * t / total).cos()) / 2.0;
        let trains = dataset.epoch_batches(Split::Train, config.batch_size, config.seed, epoch);
        let vals = dataset.epoch_batches(Split::Val, config.batch_size, config.seed, epoch);
        for (tb, vb) in trains.iter().zip(&vals) {
            let probs = ProbMatrix::broadcast(&alpha, net.layers);
            let g = state.layer_grads(&probs, tb)?;
            let ga = alpha_grad(&alpha, &g.grads);
            trace.push(TraceRecord {
                step,
                epoch,
                phase: Phase::Inner,
                loss: g.loss,
                lambda_t,
                lambda: lambda_alignment(&g.grads).ok(),
                lambda_sign: lambda_sign(&g.grads).ok(),
                grad_norm_alpha: ga.iter().map(|x| x * x).sum::<f64>().sqrt(),
                min_layer_grad_norm: min_row_norm(&g.grads),
                skipped_reg: false,
            });
            step += 1;
            let w = state.omega_mut();
            for i in 0..n {
                let d = g.omega_grad[i] + config.omega_weight_decay * w[i];
                buf[i] = config.omega_momentum * buf[i] + d;
                w[i] -= lr * (d + config.omega_momentum * buf[i]);
            }

            let probs = ProbMatrix::broadcast(&alpha, net.layers);
            let g = state.layer_grads(&probs, vb)?;
            let ga = alpha_grad(&alpha, &g.grads);
            trace.push(TraceRecord {
                step,
                epoch,
                phase: Phase::Outer,
                loss: g.loss,
                lambda_t,
                lambda: lambda_alignment(&g.grads).ok(),
                lambda_sign: lambda_sign(&g.grads).ok(),
                grad_norm_alpha: ga.iter().map(|x| x * x).sum::<f64>().sqrt(),
                min_layer_grad_norm: min_row_norm(&g.grads),
                skipped_reg: false,
            });
            step += 1;
            adam_t += 1;
            let a = alpha.as_mut_slice();
            let (b1, b2) = (config.alpha_beta1, config.alpha_beta2);
            for i in 0..a.len() {
                let d = ga[i] + config.alpha_weight_decay * a[i];
                m[i] = b1 * m[i] + (1.0 - b1) * d;
                v[i] = b2 * v[i] + (1.0 - b2) * d * d;
                let mh = m[i] / (1.0 - b1.powi(adam_t));
                let vh = v[i] / (1.0 - b2.powi(adam_t));
                a[i] -= config.alpha_lr * mh / (vh.sqrt() + 1e-8);
            }
        }
    }
    Ok(trace)
}
