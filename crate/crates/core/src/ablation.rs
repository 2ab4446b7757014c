//! Cumulative ablation: rank hidden neurons, replace the outputs of the first
//! `k` by a constant, and track test error as `k` grows.

use std::fmt;

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::infotheory::Measure;
pub use crate::infotheory::MeasureTable;
use crate::nn::{self, count_errors, MlpModel, NeuronId, Overrides};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    WholeNetwork,
    /// One hidden layer, 1-based.
    Layer(usize),
}

impl Scope {
    /// Neurons in the scope in (layer, neuron) order.
    pub fn neurons(self, model: &MlpModel) -> Result<Vec<NeuronId>> {
        match self {
            Scope::WholeNetwork => Ok(model.hidden_neurons().collect()),
            Scope::Layer(l) if (1..=model.num_hidden()).contains(&l) => {
                Ok((0..model.hidden_size(l)).map(|j| NeuronId::new(l, j)).collect())
            }
            Scope::Layer(l) => Err(Error::Argument(format!(
                "layer {l} is not a hidden layer of a network with {} hidden layers",
                model.num_hidden()
            ))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::WholeNetwork => f.write_str("whole_network"),
            Scope::Layer(l) => write!(f, "layer{l}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowestFirst,
    HighestFirst,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::LowestFirst => "lowest_first",
            Direction::HighestFirst => "highest_first",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    Measure {
        measure: Measure,
        direction: Direction,
    },
    /// Uniform shuffle of the scope; replicate `r` uses sub-stream `r`.
    Random {
        seed: u64,
    },
}

impl fmt::Display for Ranking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ranking::Measure { measure, direction } => write!(f, "{measure}_{}", direction.name()),
            Ranking::Random { .. } => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    ToZero,
    /// Replace by the neuron's mean output on the training split.
    ToMean,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::ToZero => "to_zero",
            Strategy::ToMean => "to_mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationPlan {
    pub scope: Scope,
    pub ranking: Ranking,
    pub strategy: Strategy,
    pub step: usize,
}

impl AblationPlan {
    /// File-name friendly identifier, e.g. `layer1_mi_highest_first_to_zero`.
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.scope, self.ranking, self.strategy.name())
    }

    pub fn validate(&self, model: &MlpModel) -> Result<()> {
        if self.step == 0 {
            return Err(Error::Argument("ablation step must be at least 1".into()));
        }
        self.scope.neurons(model).map(|_| ())
    }
}

/// Step size for a scope of `neurons` units: 1 up to 100 units, 5 beyond.
pub fn default_step(neurons: usize) -> usize {
    if neurons <= 100 {
        1
    } else {
        5
    }
}

/// Orders `scope` by `ranking`. Equal values keep (layer, neuron) order.
pub fn rank_neurons(scope: &[NeuronId], measures: &MeasureTable, ranking: &Ranking) -> Result<Vec<NeuronId>> {
    rank_for_replicate(scope, measures, ranking, 0)
}

fn rank_for_replicate(
    scope: &[NeuronId],
    measures: &MeasureTable,
    ranking: &Ranking,
    replicate: u64,
) -> Result<Vec<NeuronId>> {
    let mut order = scope.to_vec();
    order.sort_unstable();
    match *ranking {
        Ranking::Random { seed: s } => {
            let mut rng = seed::stream_rng(s, seed::STREAM_RANDOM_ABLATION, replicate);
            order.shuffle(&mut rng);
        }
        Ranking::Measure { measure, direction } => {
            let mut keyed = order
                .into_iter()
                .map(|id| {
                    let m = measures
                        .get(&id)
                        .ok_or_else(|| Error::Argument(format!("no measures for neuron {id}")))?;
                    let v = m
                        .get(measure)
                        .ok_or_else(|| Error::Argument(format!("measure {measure} not computed for neuron {id}")))?;
                    Ok((v, id))
                })
                .collect::<Result<Vec<_>>>()?;
            keyed.sort_by(|(va, ia), (vb, ib)| {
                let by_value = match direction {
                    Direction::LowestFirst => va.total_cmp(vb),
                    Direction::HighestFirst => vb.total_cmp(va),
                };
                by_value.then(ia.cmp(ib))
            });
            order = keyed.into_iter().map(|(_, id)| id).collect();
        }
    }
    Ok(order)
}

/// Mean inference-mode output of every hidden neuron over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronMean {
    /// Index `i - 1` holds hidden layer `i`.
    pub layers: Vec<Vec<f64>>,
}

impl NeuronMean {
    pub fn get(&self, id: NeuronId) -> Option<f64> {
        self.layers.get(id.layer.checked_sub(1)?)?.get(id.neuron).copied()
    }
}

pub fn compute_means(model: &MlpModel, train: &Dataset) -> Result<NeuronMean> {
    if train.is_empty() {
        return Err(Error::Argument("cannot average over an empty dataset".into()));
    }
    let mut sums: Vec<Array1<f64>> = (1..=model.num_hidden())
        .map(|l| Array1::zeros(model.hidden_size(l)))
        .collect();
    let none = Overrides::new();
    nn::for_each_chunk(train, |_, x| {
        let out = model.forward(x.view(), &none)?;
        for (s, h) in sums.iter_mut().zip(&out.hidden) {
            *s += &h.sum_axis(ndarray::Axis(0));
        }
        Ok::<_, Error>(())
    })?;
    let n = train.len() as f64;
    Ok(NeuronMean {
        layers: sums.into_iter().map(|s| (s / n).to_vec()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub points: Vec<CurvePoint>,
    pub replicates: usize,
    /// Error at every `k` for each replicate.
    pub per_replicate: Vec<Vec<f64>>,
    pub plan: Option<AblationPlan>,
}

impl AblationCurve {
    pub fn at(&self, k: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.k == k)
    }

    /// Mean and population standard deviation per `k` over replicate curves
    /// that share one `k` grid.
    pub fn aggregate(ks: &[usize], per_replicate: Vec<Vec<f64>>, plan: Option<AblationPlan>) -> Result<Self> {
        if per_replicate.is_empty() {
            return Err(Error::Argument("no replicate curves to aggregate".into()));
        }
        if per_replicate.iter().any(|c| c.len() != ks.len()) {
            return Err(Error::Consistency("replicate curves have different k grids".into()));
        }
        let r = per_replicate.len() as f64;
        let points = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mean = per_replicate.iter().map(|c| c[i]).sum::<f64>() / r;
                let var = per_replicate.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / r;
                CurvePoint {
                    k,
                    mean_error: mean,
                    std_error: var.sqrt(),
                }
            })
            .collect();
        Ok(Self {
            points,
            replicates: per_replicate.len(),
            per_replicate,
            plan,
        })
    }
}

/// `0, step, 2·step, …`, always ending at `total`.
pub fn k_grid(total: usize, step: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..=total).step_by(step.max(1)).collect();
    if ks.last() != Some(&total) {
        ks.push(total);
    }
    ks
}

/// Test-set evaluator that caches the outputs of the first hidden layer an
/// ablation can touch, so each `k` only reruns the layers above it.
pub struct AblationEvaluator<'a> {
    model: &'a MlpModel,
    labels: &'a [usize],
    start: usize,
    cached: Array2<f64>,
}

const EVAL_CHUNK: usize = 4096;

impl<'a> AblationEvaluator<'a> {
    pub fn new(model: &'a MlpModel, test: &'a Dataset, start_layer: usize) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
        }
        if test.dim() != model.layer_sizes()[0] || test.num_classes() != model.num_classes() {
            return Err(Error::shape(
                format!("{} inputs / {} classes", model.layer_sizes()[0], model.num_classes()),
                format!("{} inputs / {} classes", test.dim(), test.num_classes()),
            ));
        }
        if start_layer == 0 || start_layer > model.num_hidden() {
            return Err(Error::Argument(format!("{start_layer} is not a hidden layer")));
        }
        let mut cached = Array2::zeros((test.len(), model.hidden_size(start_layer)));
        nn::for_each_chunk(test, |offset, x| {
            let h = model.hidden_outputs(start_layer, x.view())?;
            cached.slice_mut(s![offset..offset + h.nrows(), ..]).assign(&h);
            Ok::<_, Error>(())
        })?;
        Ok(Self {
            model,
            labels: test.labels(),
            start: start_layer,
            cached,
        })
    }

    /// Test error with `overrides` applied; overrides must target layers at
    /// or above the cached one.
    pub fn error(&self, overrides: &Overrides) -> Result<f64> {
        let n = self.labels.len();
        let mut errors = 0;
        let mut offset = 0;
        while offset < n {
            let end = (offset + EVAL_CHUNK).min(n);
            let p = self
                .model
                .predict_proba_from(self.start, self.cached.slice(s![offset..end, ..]), overrides)?;
            errors += count_errors(&p, &self.labels[offset..end]);
            offset = end;
        }
        Ok(errors as f64 / n as f64)
    }
}

fn ablation_value(id: NeuronId, strategy: Strategy, means: Option<&NeuronMean>) -> Result<f64> {
    match strategy {
        Strategy::ToZero => Ok(0.0),
        Strategy::ToMean => means
            .ok_or_else(|| Error::Argument("ablation to the mean needs neuron means".into()))?
            .get(id)
            .ok_or_else(|| Error::Argument(format!("no mean for neuron {id}"))),
    }
}

/// Single-replicate curve: error with the first `k` neurons of `order`
/// ablated, for `k` on [`k_grid`].
pub fn cumulative_ablate(
    model: &MlpModel,
    test: &Dataset,
    order: &[NeuronId],
    strategy: Strategy,
    means: Option<&NeuronMean>,
    step: usize,
) -> Result<AblationCurve> {
    let (ks, errors) = ablate_errors(model, test, order, strategy, means, step)?;
    AblationCurve::aggregate(&ks, vec![errors], None)
}

fn ablate_errors(
    model: &MlpModel,
    test: &Dataset,
    order: &[NeuronId],
    strategy: Strategy,
    means: Option<&NeuronMean>,
    step: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if step == 0 {
        return Err(Error::Argument("ablation step must be at least 1".into()));
    }
    let mut overrides = Overrides::new();
    for &id in order {
        overrides.set(id, ablation_value(id, strategy, means)?);
    }
    model.validate_overrides(&overrides)?;
    if overrides.len() != order.len() {
        return Err(Error::Argument("ablation order lists a neuron twice".into()));
    }
    let start = order.iter().map(|id| id.layer).min().unwrap_or(1);
    let eval = AblationEvaluator::new(model, test, start)?;

    let ks = k_grid(order.len(), step);
    let mut active = Overrides::new();
    let mut done = 0;
    let mut errors = Vec::with_capacity(ks.len());
    for &k in &ks {
        for &id in &order[done..k] {
            active.set(id, ablation_value(id, strategy, means)?);
        }
        done = k;
        errors.push(eval.error(&active)?);
    }
    Ok((ks, errors))
}

/// Runs `plan` on every replicate (each ranked by its own measures) and
/// aggregates the curves. `measures` may be empty for random rankings;
/// `means` is needed only for ablation to the mean.
pub fn run_experiment(
    models: &[MlpModel],
    test: &Dataset,
    plan: &AblationPlan,
    measures: &[MeasureTable],
    means: Option<&[NeuronMean]>,
) -> Result<AblationCurve> {
    let first = models
        .first()
        .ok_or_else(|| Error::Argument("at least one replicate model is required".into()))?;
    if let Some(m) = models
        .iter()
        .find(|m| m.layer_sizes() != first.layer_sizes() || m.activation() != first.activation())
    {
        return Err(Error::Consistency(format!(
            "replicate architectures differ: {:?} {} vs {:?} {}",
            first.layer_sizes(),
            first.activation(),
            m.layer_sizes(),
            m.activation()
        )));
    }
    let needs_measures = matches!(plan.ranking, Ranking::Measure { .. });
    if needs_measures && measures.len() != models.len() {
        return Err(Error::Consistency(format!(
            "{} measure tables for {} replicates",
            measures.len(),
            models.len()
        )));
    }
    if let Some(means) = means {
        if means.len() != models.len() {
            return Err(Error::Consistency(format!(
                "{} mean tables for {} replicates",
                means.len(),
                models.len()
            )));
        }
    }
    plan.validate(first)?;
    let scope = plan.scope.neurons(first)?;
    let empty = MeasureTable::new();

    let mut ks = Vec::new();
    let mut per_replicate = Vec::with_capacity(models.len());
    for (r, model) in models.iter().enumerate() {
        let table = if needs_measures { &measures[r] } else { &empty };
        let order = rank_for_replicate(&scope, table, &plan.ranking, r as u64)?;
        let (grid, errors) = ablate_errors(model, test, &order, plan.strategy, means.map(|m| &m[r]), plan.step)?;
        ks = grid;
        per_replicate.push(errors);
    }
    AblationCurve::aggregate(&ks, per_replicate, Some(*plan))
}
