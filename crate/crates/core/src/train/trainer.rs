use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;

use crate::denoiser::FilterBank;
use crate::error::{Error, Result};
use crate::operators::{EncodingOperator, MeasuredData};
use crate::solver::{network_forward, NetworkConfig};
use crate::tensor::ComplexVolume;

use super::{adam_step_with_rates, loss_l2, loss_l2_grad, network_backward, AdamState, Gradients, TrainConfig};

/// One supervised pair with its own encoding operator.
#[derive(Clone)]
pub struct Sample {
    pub id: String,
    pub op: Arc<dyn EncodingOperator + Send>,
    pub y: MeasuredData,
    /// Network input, conventionally `A# y`.
    pub x0: ComplexVolume,
    pub target: ComplexVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub alpha: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub best: FilterBank,
    pub best_epoch: usize,
    /// Parameters after the last completed epoch.
    pub last: FilterBank,
    /// Epoch 0 holds the losses of the initial parameters.
    pub history: Vec<EpochRecord>,
    /// Set when a non-finite loss stopped training early.
    pub aborted: Option<String>,
}

fn flatten(fb: &FilterBank) -> Vec<f64> {
    let mut v = fb.filters().to_vec();
    v.push(fb.alpha_raw);
    v.push(fb.lambda_raw);
    v
}

fn unflatten(fb: &mut FilterBank, v: &[f64]) {
    let n = fb.filters().len();
    fb.filters_mut().copy_from_slice(&v[..n]);
    fb.alpha_raw = v[n];
    fb.lambda_raw = v[n + 1];
}

fn sample_loss(s: &Sample, fb: &FilterBank, cfg: &NetworkConfig) -> Result<f64> {
    let (x, _) = network_forward(&s.x0, &s.y, s.op.as_ref(), fb, cfg, false)?;
    loss_l2(&x, &s.target)
}

/// Mean loss of `fb` over `samples`.
pub fn mean_loss(samples: &[Sample], fb: &FilterBank, cfg: &NetworkConfig) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in samples {
        total += sample_loss(s, fb, cfg)?;
    }
    Ok(total / samples.len() as f64)
}

fn sample_gradient(s: &Sample, fb: &FilterBank, cfg: &NetworkConfig) -> Result<(f64, Gradients)> {
    let (x, tape) = network_forward(&s.x0, &s.y, s.op.as_ref(), fb, cfg, true)?;
    let loss = loss_l2(&x, &s.target)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss on {}", s.id)));
    }
    let g = loss_l2_grad(&x, &s.target)?;
    Ok((loss, network_backward(&tape.unwrap(), &g, s.op.as_ref(), fb, cfg)?))
}

/// Trains the network with ADAM on `train_set`, selecting the parameters
/// of the epoch with the lowest mean validation loss. With
/// `freeze_filters` only the raw regularization scalars are updated.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    fb0: &FilterBank,
    cfg_net: &NetworkConfig,
    cfg_train: &TrainConfig,
    freeze_filters: bool,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    cfg_net.validate()?;
    cfg_train.validate()?;
    let mut fb = fb0.clone();
    let mut params = flatten(&fb);
    let n_f = fb.filters().len();
    let mask: Vec<bool> = (0..params.len()).map(|i| !freeze_filters || i >= n_f).collect();
    let scalar_rate = cfg_train.scalar_learning_rate.unwrap_or(cfg_train.learning_rate);
    let rates: Vec<f64> = (0..params.len())
        .map(|i| if i < n_f { cfg_train.learning_rate } else { scalar_rate })
        .collect();
    let mut state = AdamState::new(params.len());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg_train.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let score = |fb: &FilterBank| -> Result<f64> {
        if val_set.is_empty() {
            mean_loss(train_set, fb, cfg_net)
        } else {
            mean_loss(val_set, fb, cfg_net)
        }
    };

    let initial = EpochRecord {
        epoch: 0,
        train_loss: mean_loss(train_set, &fb, cfg_net)?,
        val_loss: score(&fb)?,
        alpha: fb.alpha(),
        lambda: fb.lambda(),
    };
    on_epoch(&initial);
    let mut best = (initial.val_loss, 0, fb.clone());
    let mut history = vec![initial];
    let mut aborted = None;

    'epochs: for epoch in 1..=cfg_train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg_train.batch_size) {
            let mut acc = vec![0.0; params.len()];
            for &i in batch {
                let (loss, g) = match sample_gradient(&train_set[i], &fb, cfg_net) {
                    Ok(v) => v,
                    Err(e @ (Error::NonFinite(_) | Error::CgBreakdown { .. })) => {
                        aborted = Some(e.to_string());
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                total += loss;
                for (a, v) in acc.iter_mut().zip(g.to_vec()) {
                    *a += v / batch.len() as f64;
                }
            }
            if freeze_filters {
                acc[..n_f].iter_mut().for_each(|v| *v = 0.0);
            }
            adam_step_with_rates(&mut params, &acc, &mut state, cfg_train, Some(&mask), &rates)?;
            if params.iter().any(|v| !v.is_finite()) {
                aborted = Some(format!("non-finite parameters in epoch {epoch}"));
                break 'epochs;
            }
            unflatten(&mut fb, &params);
        }
        let val_loss = match score(&fb) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFinite(_) | Error::CgBreakdown { .. }) => {
                aborted = Some(format!("non-finite validation loss in epoch {epoch}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let rec = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
            alpha: fb.alpha(),
            lambda: fb.lambda(),
        };
        on_epoch(&rec);
        if rec.val_loss < best.0 {
            best = (rec.val_loss, epoch, fb.clone());
        }
        history.push(rec);
    }
    // fb only ever receives finite parameters, so it is the last finite checkpoint
    Ok(TrainOutcome {
        best: best.2,
        best_epoch: best.1,
        last: fb,
        history,
        aborted,
    })
}
