//! Mini-batch training with RMSProp plus momentum and validation-loss early
//! stopping.

use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::backprop::{backward, forward_train, Gradients, ParamKind};
use super::{Activation, Mlp, MlpModel, Real};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Decay of the squared-gradient moving average.
pub const RMSPROP_DECAY: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;
/// Weight of the current batch in the batch-norm running statistics.
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
/// Mean cross-entropy (nats) above which training counts as diverged, in
/// addition to any non-finite loss.
pub const DIVERGENCE_LOSS: f64 = 1e4;

fn diverged(loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_LOSS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regularizer {
    None,
    /// Adds `weight_decay * w` to the gradient of every weight (not biases).
    L2 {
        weight_decay: f64,
    },
    /// Drop probability per hidden layer.
    Dropout {
        probabilities: Vec<f64>,
    },
    /// Dropout plus batch normalization of every hidden pre-activation.
    DropoutBatchNorm {
        probabilities: Vec<f64>,
    },
}

impl Regularizer {
    pub fn dropout_probabilities(&self) -> Option<&[f64]> {
        match self {
            Regularizer::Dropout { probabilities } | Regularizer::DropoutBatchNorm { probabilities } => {
                Some(probabilities)
            }
            _ => None,
        }
    }

    pub fn weight_decay(&self) -> f64 {
        match self {
            Regularizer::L2 { weight_decay } => *weight_decay,
            _ => 0.0,
        }
    }

    pub fn uses_batch_norm(&self) -> bool {
        matches!(self, Regularizer::DropoutBatchNorm { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub regularizer: Regularizer,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regularizer: Regularizer::None,
            learning_rate: 0.001,
            momentum: 0.01,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, hidden_layers: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Argument("batch size and epoch budget must be at least 1".into()));
        }
        if let Some(p) = self.regularizer.dropout_probabilities() {
            if p.len() != hidden_layers {
                return Err(Error::Argument(format!(
                    "{} dropout probabilities for {hidden_layers} hidden layers",
                    p.len()
                )));
            }
            if let Some(bad) = p.iter().find(|v| !(0.0..1.0).contains(*v)) {
                return Err(Error::Argument(format!("dropout probability {bad} outside [0, 1)")));
            }
        }
        let decay = self.regularizer.weight_decay();
        if !(decay >= 0.0) {
            return Err(Error::Argument(format!("weight decay {decay} is negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches.
    pub train_loss: f64,
    /// Inference-mode loss on the validation set after the epoch.
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: MlpModel,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// RMSProp with a classical momentum buffer on the normalized step:
///
/// ```text
/// g   = grad + decay * w            (weights only)
/// v   = ρ v + (1 - ρ) g²
/// buf = μ buf + g / (sqrt(v) + ε)
/// w  -= lr * buf
/// ```
pub(crate) struct RmsProp<F> {
    lr: F,
    momentum: F,
    weight_decay: F,
    square_avg: Vec<Vec<F>>,
    buffer: Vec<Vec<F>>,
}

impl<F: Real> RmsProp<F> {
    pub fn new(model: &mut Mlp<F>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let shapes: Vec<usize> = model.param_slices_mut().iter().map(|(_, s)| s.len()).collect();
        Self {
            lr: F::of(lr),
            momentum: F::of(momentum),
            weight_decay: F::of(weight_decay),
            square_avg: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            buffer: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut Mlp<F>, grads: &Gradients<F>) {
        let rho = F::of(RMSPROP_DECAY);
        let eps = F::of(RMSPROP_EPS);
        let grad_slices = grads.slices();
        for (t, (kind, params)) in model.param_slices_mut().into_iter().enumerate() {
            let decay = if kind == ParamKind::Weight {
                self.weight_decay
            } else {
                F::zero()
            };
            let g_t = grad_slices[t];
            let v_t = &mut self.square_avg[t];
            let b_t = &mut self.buffer[t];
            for i in 0..params.len() {
                let g = g_t[i] + decay * params[i];
                v_t[i] = rho * v_t[i] + (F::one() - rho) * g * g;
                b_t[i] = self.momentum * b_t[i] + g / (v_t[i].sqrt() + eps);
                params[i] -= self.lr * b_t[i];
            }
        }
    }
}

/// Trains a fresh `arch` network on `train_set`, early-stopping on the
/// validation loss. Computation is `f32` with `f64` loss accumulation; the
/// returned model is `f64`.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    arch: &[usize],
    activation: Activation,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if arch.len() < 2 {
        return Err(Error::Argument(format!("architecture {arch:?} too short")));
    }
    cfg.validate(arch.len() - 2)?;
    if arch[0] != train_set.dim() || arch[0] != val_set.dim() {
        return Err(Error::shape(
            format!("{} input columns", arch[0]),
            format!("train {} / validation {}", train_set.dim(), val_set.dim()),
        ));
    }
    let classes = *arch.last().expect("len checked");
    if classes != train_set.num_classes() || classes != val_set.num_classes() {
        return Err(Error::Consistency(format!(
            "architecture outputs {classes} classes, datasets have {}",
            train_set.num_classes()
        )));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument("training and validation sets must be non-empty".into()));
    }

    let mut model: Mlp<f32> = Mlp::init(arch, activation, cfg.regularizer.uses_batch_norm(), cfg.seed)?;
    let mut opt = RmsProp::new(
        &mut model,
        cfg.learning_rate,
        cfg.momentum,
        cfg.regularizer.weight_decay(),
    );
    let mut order_rng = seed::stream_rng(cfg.seed, seed::STREAM_BATCH_ORDER, 0);
    let mut dropout_rng = seed::stream_rng(cfg.seed, seed::STREAM_DROPOUT, 0);
    let dropout = cfg.regularizer.dropout_probabilities();
    let bn_momentum = BATCH_NORM_MOMENTUM as f32;

    let x = train_set.features();
    let labels = train_set.labels();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Mlp<f32>)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batches = b + 1;
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let fwd = forward_train(&model, xb, dropout.map(|p| (p, &mut dropout_rng)));
            let (loss, grads) = backward(&model, &fwd, &yb);
            if diverged(loss) {
                return Err(Error::Divergence {
                    epoch,
                    batch: batches,
                    loss,
                });
            }
            loss_sum += loss * chunk.len() as f64;

            if let Some(bn) = model.batch_norm.as_mut() {
                let n = chunk.len() as f32;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for (params, cache) in bn.iter_mut().zip(&fwd.hidden) {
                    let c = cache.bn.as_ref().expect("batch-norm cache present");
                    params
                        .running_mean
                        .zip_mut_with(&c.batch_mean, |r, &m| *r = (1.0 - bn_momentum) * *r + bn_momentum * m);
                    params.running_var.zip_mut_with(&c.batch_var, |r, &v| {
                        *r = (1.0 - bn_momentum) * *r + bn_momentum * v * unbias
                    });
                }
            }
            opt.step(&mut model, &grads);
        }

        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = model.mean_loss(val_set);
        if diverged(val_loss) {
            return Err(Error::Divergence {
                epoch,
                batch: batches,
                loss: val_loss,
            });
        }
        log::debug!("epoch {epoch}: train loss {train_loss:.5}, validation loss {val_loss:.5}");
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });

        if best.as_ref().is_none_or(|(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: best_model.cast(),
        epochs,
        best_epoch,
    })
}
