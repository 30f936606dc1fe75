use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{LossNorm, Model};
use crate::autodiff::{ops, AdaDeltaParams, AdaDeltaState, Tape};
use crate::datagen::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::KernelStack;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Stop once the validation boundary MSE drops below this.
    pub stop_threshold: f64,
    /// Seeds the per-epoch shuffle of training images.
    pub seed: u64,
    pub optimizer: AdaDeltaParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            steps_per_epoch: 2000,
            stop_threshold: 1e-11,
            seed: 0,
            optimizer: AdaDeltaParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean boundary MSE over the training split after the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
    pub best_val_mse: f64,
    pub regularizer: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopReason {
    Converged,
    EpochsExhausted,
    /// Loss or gradient became non-finite; parameters are left at the last
    /// finite values.
    Diverged { epoch: usize, step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps_per_epoch: usize,
    pub wall_time: Duration,
    pub final_kernels: KernelStack,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    pub fn final_val_mse(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.val_mse)
    }

    pub fn final_train_mse(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_mse)
    }

    pub fn best_val_mse(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.best_val_mse)
    }

    /// Per-epoch table; wall time is left out so reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse,best_val_mse,regularizer\n");
        for e in &self.epochs {
            writeln!(
                s,
                "{},{:e},{:e},{:e},{:e}",
                e.epoch, e.train_mse, e.val_mse, e.best_val_mse, e.regularizer
            )
            .expect("write to String");
        }
        s
    }
}

fn mean_square<'a>(xs: impl Iterator<Item = &'a [f64]>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x.iter().map(|v| v * v).sum::<f64>();
        n += x.len();
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean boundary MSE over `samples`, reduced in input order.
pub(crate) fn mean_boundary_mse(model: &Model, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let per: Vec<f64> = samples
        .par_iter()
        .map(|s| model.boundary_mse(s))
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// One AdaDelta step per training image, drawn from a reshuffled order.
///
/// The optimiser sees the boundary error relative to the mean square of the
/// training labels (and the reconstruction error relative to the image
/// power), so gradients are O(1) whatever the source amplitude and the
/// zero-sum weight means the same thing at every data scale. Reported
/// errors are raw.
pub fn train(model: &mut Model, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if ds.family != model.config.family {
        return Err(Error::Config(format!(
            "dataset is {}, model is {}",
            ds.family, model.config.family
        )));
    }
    if ds.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let start = Instant::now();
    let n = model.depth();
    let train_set: Vec<&Sample> = ds.train_samples().collect();
    let val_set: Vec<&Sample> = ds.val_samples().collect();
    let labels = train_set
        .iter()
        .map(|s| s.cropped_labels(n))
        .collect::<Result<Vec<_>>>()?;
    let inverse = |p: f64| if p > 0.0 { 1.0 / p } else { 1.0 };
    let norm = LossNorm {
        boundary: inverse(mean_square(labels.iter().map(|l| l.data()))),
        image: inverse(mean_square(train_set.iter().map(|s| s.image.data()))),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut params = model.all_params();
    let mut opt = AdaDeltaState::new(params.len(), cfg.optimizer);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stop_reason = StopReason::EpochsExhausted;

    'outer: for epoch in 1..=cfg.epochs {
        for step in 0..cfg.steps_per_epoch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let sample = train_set[order[cursor]];
            cursor += 1;

            let mut tape = Tape::new();
            let (loss, vars) = model.record_loss(&mut tape, sample, norm)?;
            let grads = tape.backward(loss)?;
            let mut flat = Vec::with_capacity(params.len());
            for v in vars {
                flat.extend_from_slice(grads.get(v)?.data());
            }
            if !tape.value(loss).item().is_finite() || flat.iter().any(|g| !g.is_finite()) {
                stop_reason = StopReason::Diverged { epoch, step };
                break 'outer;
            }
            let saved = params.clone();
            opt.step(&mut params, &flat);
            if params.iter().any(|p| !p.is_finite()) {
                params = saved;
                stop_reason = StopReason::Diverged { epoch, step };
                break 'outer;
            }
            model.assign_params(&params)?;
        }
        let train_mse = mean_boundary_mse(model, &train_set)?;
        let val_mse = if val_set.is_empty() {
            train_mse
        } else {
            mean_boundary_mse(model, &val_set)?
        };
        if !(train_mse.is_finite() && val_mse.is_finite()) {
            stop_reason = StopReason::Diverged {
                epoch,
                step: cfg.steps_per_epoch,
            };
            break;
        }
        best = best.min(val_mse);
        epochs.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
            best_val_mse: best,
            regularizer: ops::zero_sum_penalty(model.encoder.kernels(), model.config.lambda_zs),
        });
        if val_mse < cfg.stop_threshold {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    model.assign_params(&params)?;
    Ok(TrainReport {
        epochs,
        steps_per_epoch: cfg.steps_per_epoch,
        wall_time: start.elapsed(),
        final_kernels: model.encoder.clone(),
        stop_reason,
    })
}
