//! Fully-connected feed-forward classifiers.
//!
//! Hidden layer `i` (1-based) computes `t^(i) = σ(b^(i) + t^(i-1) · W^(i-1))`
//! with `t^(0)` the input sample; the output layer is a softmax over the
//! classes. Weight matrix `W^(i-1)` is stored input-major, shape
//! `(layer_sizes[i-1], layer_sizes[i])`, so `W[[p, j]]` connects neuron `p`
//! of the previous layer to neuron `j`.
//!
//! Parameters are generic over [`Real`]: training runs in `f32`, while
//! inference, recorded activations, and gradient checks use `f64`.

mod backprop;
pub mod checkpoint;
mod gradcheck;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::seed;

pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use train::{train, EpochLog, Regularizer, TrainConfig, TrainOutcome};

/// Added to the running variance before taking the square root.
pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Rows per chunk when running inference over a whole dataset.
const INFERENCE_CHUNK: usize = 2048;

/// Floating-point element type of a network.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Identity map. Only meant for gradient-check tests; quantizers reject it.
    Linear,
}

impl Activation {
    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Relu => x.max(F::zero()),
            Activation::Sigmoid => F::one() / (F::one() + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative<F: Real>(self, x: F, y: F) -> F {
        match self {
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => y * (F::one() - y),
            Activation::Linear => F::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One affine map between consecutive layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// Shape `(fan_in, fan_out)`.
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

/// Batch normalization of a hidden layer's pre-activation sum.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

impl<F: Real> BatchNorm<F> {
    fn identity(n: usize) -> Self {
        Self {
            gamma: Array1::ones(n),
            beta: Array1::zeros(n),
            running_mean: Array1::zeros(n),
            running_var: Array1::ones(n),
        }
    }

    fn infer(&self, z: &mut Array2<F>) {
        let eps = F::of(BATCH_NORM_EPS);
        for mut row in z.rows_mut() {
            Zip::from(&mut row)
                .and(&self.gamma)
                .and(&self.beta)
                .and(&self.running_mean)
                .and(&self.running_var)
                .for_each(|x, &g, &b, &m, &v| *x = g * (*x - m) / (v + eps).sqrt() + b);
        }
    }
}

/// Identifies hidden neuron `neuron` (0-based) of hidden layer `layer` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub neuron: usize,
}

impl NeuronId {
    pub fn new(layer: usize, neuron: usize) -> Self {
        Self { layer, neuron }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.neuron)
    }
}

/// Constant substitutions for hidden neuron outputs.
///
/// An override `(i, j) -> v` replaces `t_j^(i)` by `v` before it feeds layer
/// `i + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    values: BTreeMap<NeuronId, f64>,
}

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, id: NeuronId, value: f64) -> &mut Self {
        self.values.insert(id, value);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NeuronId, f64)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    fn for_layer(&self, layer: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .range(NeuronId::new(layer, 0)..NeuronId::new(layer + 1, 0))
            .map(|(k, &v)| (k.neuron, v))
    }
}

impl FromIterator<(NeuronId, f64)> for Overrides {
    fn from_iter<T: IntoIterator<Item = (NeuronId, f64)>>(iter: T) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

/// Post-activation outputs of one hidden layer over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    /// 1-based hidden layer index.
    pub layer_index: usize,
    /// Shape `(samples, neurons)`.
    pub values: Array2<f64>,
}

/// Class probabilities plus every hidden layer's outputs.
#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    pub probabilities: Array2<F>,
    /// Index `i - 1` holds hidden layer `i`.
    pub hidden: Vec<Array2<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F = f64> {
    layer_sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Dense<F>>,
    batch_norm: Option<Vec<BatchNorm<F>>>,
}

/// The `f64` network every measurement runs on.
pub type MlpModel = Mlp<f64>;

impl<F: Real> Mlp<F> {
    /// Network with all weights and biases zero.
    pub fn zeros(layer_sizes: &[usize], activation: Activation, batch_norm: bool) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        let batch_norm = batch_norm.then(|| {
            layer_sizes[1..layer_sizes.len() - 1]
                .iter()
                .map(|&n| BatchNorm::identity(n))
                .collect()
        });
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            layers,
            batch_norm,
        })
    }

    /// Uniform fan-in/fan-out initialization `±sqrt(6 / (fan_in + fan_out))`,
    /// zero biases, drawn from the `init` stream of `seed`.
    pub fn init(layer_sizes: &[usize], activation: Activation, batch_norm: bool, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, activation, batch_norm)?;
        let mut rng = seed::stream_rng(seed, seed::STREAM_INIT, 0);
        for layer in &mut model.layers {
            let (fan_in, fan_out) = layer.weights.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            layer.weights.mapv_inplace(|_| F::of(dist.sample(&mut rng)));
        }
        Ok(model)
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activation: Activation,
        layers: Vec<Dense<F>>,
        batch_norm: Option<Vec<BatchNorm<F>>>,
    ) -> Result<Self> {
        check_sizes(&layer_sizes)?;
        if layers.len() != layer_sizes.len() - 1 {
            return Err(Error::shape(
                format!("{} dense layers", layer_sizes.len() - 1),
                format!("{} dense layers", layers.len()),
            ));
        }
        for (i, (layer, w)) in layers.iter().zip(layer_sizes.windows(2)).enumerate() {
            if layer.weights.dim() != (w[0], w[1]) || layer.bias.len() != w[1] {
                return Err(Error::shape(
                    format!("layer {} weights {}x{}, bias {}", i + 1, w[0], w[1], w[1]),
                    format!("weights {:?}, bias {}", layer.weights.dim(), layer.bias.len()),
                ));
            }
        }
        if let Some(bn) = &batch_norm {
            let hidden = &layer_sizes[1..layer_sizes.len() - 1];
            if bn.len() != hidden.len() {
                return Err(Error::shape(format!("{} batch-norm layers", hidden.len()), bn.len()));
            }
            for (b, &n) in bn.iter().zip(hidden) {
                let lens = [b.gamma.len(), b.beta.len(), b.running_mean.len(), b.running_var.len()];
                if lens.iter().any(|&l| l != n) {
                    return Err(Error::shape(format!("batch-norm vectors of {n}"), format!("{lens:?}")));
                }
                if b.running_var.iter().any(|&v| !(v > F::zero())) {
                    return Err(Error::Domain("running variance must be positive".into()));
                }
            }
        }
        Ok(Self {
            layer_sizes,
            activation,
            layers,
            batch_norm,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_hidden(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("checked non-empty")
    }

    /// Width of hidden layer `layer` (1-based).
    pub fn hidden_size(&self, layer: usize) -> usize {
        self.layer_sizes[layer]
    }

    /// Dense map `i` (0-based) from layer `i` into layer `i + 1`.
    pub fn dense(&self, i: usize) -> &Dense<F> {
        &self.layers[i]
    }

    pub fn dense_mut(&mut self, i: usize) -> &mut Dense<F> {
        &mut self.layers[i]
    }

    pub fn dense_layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn batch_norm(&self) -> Option<&[BatchNorm<F>]> {
        self.batch_norm.as_deref()
    }

    pub fn batch_norm_mut(&mut self) -> Option<&mut [BatchNorm<F>]> {
        self.batch_norm.as_deref_mut()
    }

    /// All hidden neurons, layer by layer.
    pub fn hidden_neurons(&self) -> impl Iterator<Item = NeuronId> + '_ {
        (1..=self.num_hidden()).flat_map(move |l| (0..self.layer_sizes[l]).map(move |j| NeuronId::new(l, j)))
    }

    pub fn cast<G: Real>(&self) -> Mlp<G> {
        let c1 = |a: &Array1<F>| a.mapv(|x| G::of(x.to_f64()));
        Mlp {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: l.weights.mapv(|x| G::of(x.to_f64())),
                    bias: c1(&l.bias),
                })
                .collect(),
            batch_norm: self.batch_norm.as_ref().map(|bn| {
                bn.iter()
                    .map(|b| BatchNorm {
                        gamma: c1(&b.gamma),
                        beta: c1(&b.beta),
                        running_mean: c1(&b.running_mean),
                        running_var: c1(&b.running_var),
                    })
                    .collect()
            }),
        }
    }

    /// Checks that every override names an existing hidden neuron.
    pub fn validate_overrides(&self, overrides: &Overrides) -> Result<()> {
        for (id, v) in overrides.iter() {
            if id.layer == 0 || id.layer > self.num_hidden() {
                return Err(Error::Argument(format!(
                    "override {id} does not reference a hidden layer (network has {} hidden layers)",
                    self.num_hidden()
                )));
            }
            if id.neuron >= self.layer_sizes[id.layer] {
                return Err(Error::Argument(format!(
                    "override {id}: layer {} has {} neurons",
                    id.layer, self.layer_sizes[id.layer]
                )));
            }
            if !v.is_finite() {
                return Err(Error::Argument(format!("override {id} has value {v}")));
            }
        }
        Ok(())
    }

    /// Inference-mode output of hidden layer `layer` before any override,
    /// given the outputs of layer `layer - 1`.
    fn hidden_step(&self, layer: usize, input: ArrayView2<F>) -> Array2<F> {
        let dense = &self.layers[layer - 1];
        let mut z = input.dot(&dense.weights) + &dense.bias;
        if let Some(bn) = &self.batch_norm {
            bn[layer - 1].infer(&mut z);
        }
        let act = self.activation;
        z.mapv_inplace(|x| act.apply(x));
        z
    }

    /// Runs layers `start + 1 ..` given the outputs `acts` of layer `start`
    /// (0 = input) and returns the output logits. Overrides for layers
    /// `>= start` are applied; if `keep_hidden`, the (overridden) hidden
    /// outputs are returned too.
    fn propagate(
        &self,
        start: usize,
        mut acts: Array2<F>,
        overrides: &Overrides,
        keep_hidden: bool,
    ) -> (Array2<F>, Vec<Array2<F>>) {
        let hidden_count = self.num_hidden();
        let mut hidden = Vec::new();
        for layer in start..=hidden_count {
            if layer > start {
                acts = self.hidden_step(layer, acts.view());
            }
            if layer >= 1 {
                for (j, v) in overrides.for_layer(layer) {
                    acts.column_mut(j).fill(F::of(v));
                }
                if keep_hidden {
                    hidden.push(acts.clone());
                }
            }
        }
        let out = &self.layers[hidden_count];
        (acts.dot(&out.weights) + &out.bias, hidden)
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.layer_sizes[0] {
            return Err(Error::shape(
                format!("{} input columns", self.layer_sizes[0]),
                format!("{} columns", x.ncols()),
            ));
        }
        Ok(())
    }

    /// Inference-mode forward pass (dropout off, batch norm on running
    /// statistics) with optional per-neuron constant substitutions.
    pub fn forward(&self, x: ArrayView2<F>, overrides: &Overrides) -> Result<ForwardOutput<F>> {
        self.check_input(&x)?;
        self.validate_overrides(overrides)?;
        let (mut probabilities, hidden) = self.propagate(0, x.to_owned(), overrides, true);
        softmax_rows(&mut probabilities);
        Ok(ForwardOutput { probabilities, hidden })
    }

    /// Class probabilities for a batch.
    pub fn predict_proba(&self, x: ArrayView2<F>, overrides: &Overrides) -> Result<Array2<F>> {
        self.check_input(&x)?;
        self.validate_overrides(overrides)?;
        let mut p = self.propagate(0, x.to_owned(), overrides, false).0;
        softmax_rows(&mut p);
        Ok(p)
    }

    /// Continues inference from the outputs of hidden layer `layer`
    /// (computed without overrides), applying `overrides` from that layer on.
    /// Overrides on layers below `layer` cannot take effect and are rejected.
    pub fn predict_proba_from(&self, layer: usize, acts: ArrayView2<F>, overrides: &Overrides) -> Result<Array2<F>> {
        if layer == 0 || layer > self.num_hidden() {
            return Err(Error::Argument(format!("{layer} is not a hidden layer")));
        }
        if acts.ncols() != self.layer_sizes[layer] {
            return Err(Error::shape(
                format!("{} columns", self.layer_sizes[layer]),
                acts.ncols(),
            ));
        }
        self.validate_overrides(overrides)?;
        if let Some((id, _)) = overrides.iter().find(|(id, _)| id.layer < layer) {
            return Err(Error::Argument(format!(
                "override {id} lies below starting layer {layer}"
            )));
        }
        let mut p = self.propagate(layer, acts.to_owned(), overrides, false).0;
        softmax_rows(&mut p);
        Ok(p)
    }

    /// Inference-mode outputs of hidden layer `layer` with no overrides.
    pub fn hidden_outputs(&self, layer: usize, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        if layer == 0 || layer > self.num_hidden() {
            return Err(Error::Argument(format!("{layer} is not a hidden layer")));
        }
        let mut acts = x.to_owned();
        for l in 1..=layer {
            acts = self.hidden_step(l, acts.view());
        }
        Ok(acts)
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Argument(format!(
            "layer sizes must be positive: {layer_sizes:?}"
        )));
    }
    Ok(())
}

pub(crate) fn softmax_rows<F: Real>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(row: impl IntoIterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_val = None;
    for (i, v) in row.into_iter().enumerate() {
        if best_val.is_none_or(|b| v > b) {
            best = i;
            best_val = Some(v);
        }
    }
    best
}

/// Calls `f(row_offset, chunk_as_f64)` over consecutive row chunks of `set`.
pub(crate) fn for_each_chunk<E>(
    set: &Dataset,
    mut f: impl FnMut(usize, Array2<f64>) -> std::result::Result<(), E>,
) -> std::result::Result<(), E> {
    let x = set.features();
    let mut start = 0;
    while start < set.len() {
        let end = (start + INFERENCE_CHUNK).min(set.len());
        f(start, x.slice(s![start..end, ..]).mapv(f64::from))?;
        start = end;
    }
    Ok(())
}

fn check_dataset(model: &MlpModel, set: &Dataset) -> Result<()> {
    if set.dim() != model.layer_sizes[0] {
        return Err(Error::shape(
            format!("{} input columns", model.layer_sizes[0]),
            format!("dataset with {} columns", set.dim()),
        ));
    }
    if set.num_classes() != model.num_classes() {
        return Err(Error::Consistency(format!(
            "dataset has {} classes, network outputs {}",
            set.num_classes(),
            model.num_classes()
        )));
    }
    Ok(())
}

/// Number of argmax misclassifications of `probabilities` against `labels`.
pub fn count_errors(probabilities: &Array2<f64>, labels: &[usize]) -> usize {
    probabilities
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) != y)
        .count()
}

/// Fraction of argmax-misclassified samples.
pub fn evaluate(model: &MlpModel, set: &Dataset, overrides: &Overrides) -> Result<f64> {
    check_dataset(model, set)?;
    model.validate_overrides(overrides)?;
    if set.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    let labels = set.labels();
    let mut errors = 0;
    for_each_chunk(set, |start, x| {
        let (mut probs, _) = model.propagate(0, x, overrides, false);
        softmax_rows(&mut probs);
        errors += count_errors(&probs, &labels[start..start + probs.nrows()]);
        Ok::<_, Error>(())
    })?;
    Ok(errors as f64 / set.len() as f64)
}

/// Inference-mode outputs of every hidden layer over the whole set.
pub fn record_activations(model: &MlpModel, set: &Dataset) -> Result<Vec<ActivationMatrix>> {
    check_dataset(model, set)?;
    let mut out: Vec<ActivationMatrix> = (1..=model.num_hidden())
        .map(|l| ActivationMatrix {
            layer_index: l,
            values: Array2::zeros((set.len(), model.layer_sizes[l])),
        })
        .collect();
    let none = Overrides::new();
    for_each_chunk(set, |start, x| {
        let (_, hidden) = model.propagate(0, x, &none, true);
        for (m, h) in out.iter_mut().zip(hidden) {
            m.values.slice_mut(s![start..start + h.nrows(), ..]).assign(&h);
        }
        Ok::<_, Error>(())
    })?;
    Ok(out)
}

/// Mean cross-entropy (natural log) of softmax(`logits`) against `labels`,
/// accumulated in `f64`. Non-finite logits give a non-finite loss.
pub fn cross_entropy_from_logits<F: Real>(logits: &ArrayView2<F>, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x.to_f64()));
            let lse = max + row.iter().map(|&x| (x.to_f64() - max).exp()).sum::<f64>().ln();
            lse - row[y].to_f64()
        })
        .sum();
    total / labels.len() as f64
}

impl<F: Real> Mlp<F> {
    /// Inference-mode mean cross-entropy over a dataset.
    pub fn mean_loss(&self, set: &Dataset) -> f64 {
        let labels = set.labels();
        let x = set.features();
        let none = Overrides::new();
        let mut total = 0.0;
        let mut start = 0;
        while start < set.len() {
            let end = (start + INFERENCE_CHUNK).min(set.len());
            let chunk = x.slice(s![start..end, ..]).mapv(|v| F::of(f64::from(v)));
            let (logits, _) = self.propagate(0, chunk, &none, false);
            total += cross_entropy_from_logits(&logits.view(), &labels[start..end]) * (end - start) as f64;
            start = end;
        }
        total / set.len() as f64
    }
}

#[cfg(test)]
mod tests;
