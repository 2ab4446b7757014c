use ndarray::Array2;

use super::backprop::{backward, batch_loss, forward_train};
use super::MlpModel;
use crate::error::{Error, Result};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

const MAX_BATCH: usize = 8;
const MAX_WIDTH: usize = 32;

/// Largest discrepancy between backpropagated and central finite-difference
/// gradients of the mean cross-entropy over every trainable parameter.
///
/// Each discrepancy is `|analytic - numeric| / max(|analytic|, |numeric|, 1)`,
/// i.e. relative for gradients above one and absolute below. With batch norm
/// the loss uses batch statistics.
pub fn grad_check(model: &MlpModel, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if x.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::Consistency(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if labels.len() > MAX_BATCH {
        return Err(Error::Capability(format!(
            "gradient check takes at most {MAX_BATCH} samples, got {}",
            labels.len()
        )));
    }
    if let Some(&w) = model.layer_sizes().iter().find(|&&w| w > MAX_WIDTH) {
        return Err(Error::Capability(format!(
            "gradient check takes layers of at most {MAX_WIDTH} units, got {w}"
        )));
    }
    if x.ncols() != model.layer_sizes()[0] {
        return Err(Error::shape(model.layer_sizes()[0], x.ncols()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::Consistency(format!("label {y} out of range")));
    }

    let fwd = forward_train::<f64, rand_chacha::ChaCha8Rng>(model, x.clone(), None);
    let (_, grads) = backward(model, &fwd, labels);
    let analytic: Vec<Vec<f64>> = grads.slices().into_iter().map(<[f64]>::to_vec).collect();

    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for (t, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let original = probe.param_slices_mut()[t].1[i];
            probe.param_slices_mut()[t].1[i] = original + GRAD_CHECK_STEP;
            let plus = batch_loss(&probe, x, labels);
            probe.param_slices_mut()[t].1[i] = original - GRAD_CHECK_STEP;
            let minus = batch_loss(&probe, x, labels);
            probe.param_slices_mut()[t].1[i] = original;

            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
