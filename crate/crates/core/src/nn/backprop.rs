//! Training-mode forward pass and backpropagation of the mean cross-entropy.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use super::{cross_entropy_from_logits, softmax_rows, Dense, Mlp, Real, BATCH_NORM_EPS};

pub(crate) struct BnCache<F> {
    pub xhat: Array2<F>,
    pub inv_std: Array1<F>,
    pub batch_mean: Array1<F>,
    pub batch_var: Array1<F>,
}

pub(crate) struct HiddenCache<F> {
    /// Outputs of the previous layer (after its dropout).
    input: Array2<F>,
    /// Argument of the activation function.
    pre: Array2<F>,
    /// Activation output before dropout.
    out: Array2<F>,
    pub bn: Option<BnCache<F>>,
    /// Inverted-dropout multipliers (0 or `1 / (1 - p)`).
    mask: Option<Array2<F>>,
}

pub(crate) struct TrainForward<F> {
    pub hidden: Vec<HiddenCache<F>>,
    last_input: Array2<F>,
    pub logits: Array2<F>,
}

/// Which parameter tensor a flat slice belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

pub(crate) struct Gradients<F> {
    pub dense: Vec<Dense<F>>,
    /// Per hidden layer `(d gamma, d beta)` when batch norm is on.
    pub bn: Option<Vec<(Array1<F>, Array1<F>)>>,
}

impl<F: Real> Gradients<F> {
    /// Flat views in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for (i, d) in self.dense.iter().enumerate() {
            out.push(d.weights.as_slice().expect("standard layout"));
            out.push(d.bias.as_slice().expect("standard layout"));
            if let Some(bn) = &self.bn {
                if let Some((g, b)) = bn.get(i) {
                    out.push(g.as_slice().expect("standard layout"));
                    out.push(b.as_slice().expect("standard layout"));
                }
            }
        }
        out
    }
}

impl<F: Real> Mlp<F> {
    /// Flat mutable views of every trainable tensor: per dense layer the
    /// weights and bias, followed by that layer's batch-norm gamma and beta.
    pub(crate) fn param_slices_mut(&mut self) -> Vec<(ParamKind, &mut [F])> {
        let mut out = Vec::new();
        let mut bn_iter = self.batch_norm.as_mut().map(|bn| bn.iter_mut());
        for d in self.layers.iter_mut() {
            out.push((ParamKind::Weight, d.weights.as_slice_mut().expect("standard layout")));
            out.push((ParamKind::Bias, d.bias.as_slice_mut().expect("standard layout")));
            if let Some(b) = bn_iter.as_mut().and_then(Iterator::next) {
                out.push((ParamKind::Gamma, b.gamma.as_slice_mut().expect("standard layout")));
                out.push((ParamKind::Beta, b.beta.as_slice_mut().expect("standard layout")));
            }
        }
        out
    }
}

/// Forward pass in training mode: batch norm uses batch statistics and,
/// when `dropout` is given, hidden outputs are masked with the listed drop
/// probabilities.
pub(crate) fn forward_train<F: Real, R: Rng>(
    model: &Mlp<F>,
    x: Array2<F>,
    mut dropout: Option<(&[f64], &mut R)>,
) -> TrainForward<F> {
    let act = model.activation;
    let mut input = x;
    let mut hidden = Vec::with_capacity(model.num_hidden());
    for l in 1..=model.num_hidden() {
        let dense = &model.layers[l - 1];
        let z = input.dot(&dense.weights) + &dense.bias;
        let (pre, bn) = match &model.batch_norm {
            Some(bn) => {
                let params = &bn[l - 1];
                let (pre, cache) = batch_norm_train(z, &params.gamma, &params.beta);
                (pre, Some(cache))
            }
            None => (z, None),
        };
        let out = pre.mapv(|v| act.apply(v));
        let mask = match dropout.as_mut() {
            Some((probs, rng)) if probs[l - 1] > 0.0 => {
                let p = probs[l - 1];
                let keep = F::of(1.0 / (1.0 - p));
                Some(out.mapv(|_| if rng.random::<f64>() < p { F::zero() } else { keep }))
            }
            _ => None,
        };
        let next = match &mask {
            Some(m) => &out * m,
            None => out.clone(),
        };
        hidden.push(HiddenCache {
            input,
            pre,
            out,
            bn,
            mask,
        });
        input = next;
    }
    let last = &model.layers[model.num_hidden()];
    let logits = input.dot(&last.weights) + &last.bias;
    TrainForward {
        hidden,
        last_input: input,
        logits,
    }
}

fn batch_norm_train<F: Real>(z: Array2<F>, gamma: &Array1<F>, beta: &Array1<F>) -> (Array2<F>, BnCache<F>) {
    let n = F::of(z.nrows() as f64);
    let mean = z.sum_axis(Axis(0)) / n;
    let centered = &z - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let inv_std = var.mapv(|v| F::one() / (v + F::of(BATCH_NORM_EPS)).sqrt());
    let xhat = &centered * &inv_std;
    let pre = &xhat * gamma + beta;
    (
        pre,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Mean cross-entropy of the batch and its gradients with respect to all
/// trainable parameters. Regularizers are not included.
pub(crate) fn backward<F: Real>(model: &Mlp<F>, fwd: &TrainForward<F>, labels: &[usize]) -> (f64, Gradients<F>) {
    let loss = cross_entropy_from_logits(&fwd.logits.view(), labels);
    let batch = F::of(labels.len() as f64);
    let mut delta = fwd.logits.clone();
    softmax_rows(&mut delta);
    for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
        row[y] -= F::one();
    }
    delta.mapv_inplace(|v| v / batch);

    let hidden_count = model.num_hidden();
    let mut dense: Vec<Option<Dense<F>>> = (0..=hidden_count).map(|_| None).collect();
    let mut bn_grads: Vec<(Array1<F>, Array1<F>)> = Vec::new();

    dense[hidden_count] = Some(Dense {
        weights: fwd.last_input.t().dot(&delta),
        bias: delta.sum_axis(Axis(0)),
    });
    let mut d_act = delta.dot(&model.layers[hidden_count].weights.t());
    let act = model.activation;

    for l in (1..=hidden_count).rev() {
        let cache = &fwd.hidden[l - 1];
        if let Some(mask) = &cache.mask {
            d_act *= mask;
        }
        Zip::from(&mut d_act)
            .and(&cache.pre)
            .and(&cache.out)
            .for_each(|d, &x, &y| *d *= act.derivative(x, y));
        let d_z = match (&cache.bn, &model.batch_norm) {
            (Some(bc), Some(bn)) => {
                let gamma = &bn[l - 1].gamma;
                let d_gamma = (&d_act * &bc.xhat).sum_axis(Axis(0));
                let d_beta = d_act.sum_axis(Axis(0));
                let d_xhat = &d_act * gamma;
                let sum_dx = d_xhat.sum_axis(Axis(0));
                let sum_dx_xhat = (&d_xhat * &bc.xhat).sum_axis(Axis(0));
                let d_z = (d_xhat * batch - &sum_dx - &bc.xhat * &sum_dx_xhat) * &bc.inv_std / batch;
                bn_grads.push((d_gamma, d_beta));
                d_z
            }
            _ => d_act,
        };
        dense[l - 1] = Some(Dense {
            weights: cache.input.t().dot(&d_z),
            bias: d_z.sum_axis(Axis(0)),
        });
        d_act = if l > 1 {
            d_z.dot(&model.layers[l - 1].weights.t())
        } else {
            Array2::zeros((0, 0))
        };
    }
    bn_grads.reverse();
    let grads = Gradients {
        dense: dense.into_iter().map(|d| d.expect("every layer visited")).collect(),
        bn: model.batch_norm.as_ref().map(|_| bn_grads),
    };
    (loss, grads)
}

/// Mean cross-entropy of a batch in training mode without dropout.
pub(crate) fn batch_loss<F: Real>(model: &Mlp<F>, x: &Array2<F>, labels: &[usize]) -> f64 {
    let fwd = forward_train::<F, rand_chacha::ChaCha8Rng>(model, x.clone(), None);
    cross_entropy_from_logits(&fwd.logits.view(), labels)
}
