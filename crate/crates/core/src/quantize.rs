//! Quantization of neuron outputs and per-neuron joint histograms with the
//! class label.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, NeuronId};

pub const HISTOGRAM_CSV_HEADER: &str = "layer,neuron,bin,class,count";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub bins: usize,
    pub activation: Activation,
}

impl QuantizerSpec {
    pub fn new(bins: usize, activation: Activation) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Argument(format!("quantizer needs at least 2 bins, got {bins}")));
        }
        if activation == Activation::Linear {
            return Err(Error::Argument("no quantizer is defined for linear units".into()));
        }
        Ok(Self { bins, activation })
    }

    /// Whether [`quantize`] needs the neuron's maximum output.
    pub fn needs_max(&self) -> bool {
        self.activation == Activation::Relu && self.bins > 2
    }
}

/// Maps neuron outputs to bin indices in `0..spec.bins`.
///
/// Sigmoid outputs use the half-open intervals `[k/bins, (k+1)/bins)`, the
/// last one closed; with two bins the threshold is 0.5. ReLU outputs map an
/// exact 0 to bin 0 and split `(0, neuron_max]` into `bins - 1` equal
/// intervals closed on the right; values above `neuron_max` fall into the
/// last bin. With two bins ReLU reduces to `value > 0`.
pub fn quantize(values: &[f64], spec: &QuantizerSpec, neuron_max: Option<f64>) -> Result<Vec<usize>> {
    let spec = QuantizerSpec::new(spec.bins, spec.activation)?;
    let bins = spec.bins;
    match spec.activation {
        Activation::Sigmoid => values
            .iter()
            .map(|&v| {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Domain(format!("sigmoid output {v} outside [0, 1]")));
                }
                Ok(((v * bins as f64).floor() as usize).min(bins - 1))
            })
            .collect(),
        Activation::Relu => {
            let width = if bins > 2 {
                let max = neuron_max
                    .ok_or_else(|| Error::Argument(format!("{bins}-bin ReLU quantizer needs the neuron maximum")))?;
                if !(max >= 0.0) || !max.is_finite() {
                    return Err(Error::Domain(format!(
                        "neuron maximum {max} is not a finite value >= 0"
                    )));
                }
                max / (bins - 1) as f64
            } else {
                f64::INFINITY
            };
            values
                .iter()
                .map(|&v| {
                    if !(v >= 0.0) {
                        return Err(Error::Domain(format!("ReLU output {v} is negative")));
                    }
                    if v == 0.0 {
                        return Ok(0);
                    }
                    let k = if width > 0.0 { (v / width).ceil() } else { f64::INFINITY };
                    Ok((k.min((bins - 1) as f64) as usize).max(1))
                })
                .collect()
        }
        Activation::Linear => unreachable!("rejected by QuantizerSpec::new"),
    }
}

/// Empirical joint counts of (bin, class) over `n` samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointHistogram {
    counts: Array2<u64>,
    n: u64,
}

impl JointHistogram {
    /// Histogram from a `bins × classes` count matrix with a positive total.
    pub fn from_counts(counts: Array2<u64>) -> Result<Self> {
        if counts.nrows() == 0 || counts.ncols() == 0 {
            return Err(Error::Consistency(
                "histogram needs at least one bin and one class".into(),
            ));
        }
        let n = counts.sum();
        if n == 0 {
            return Err(Error::Consistency("histogram has no samples".into()));
        }
        Ok(Self { counts, n })
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn bins(&self) -> usize {
        self.counts.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.ncols()
    }

    /// Samples per bin.
    pub fn bin_counts(&self) -> Vec<u64> {
        self.counts.sum_axis(Axis(1)).to_vec()
    }

    /// Samples per class.
    pub fn class_counts(&self) -> Vec<u64> {
        self.counts.sum_axis(Axis(0)).to_vec()
    }

    /// Histogram of `T` against the binary label `class ∈ subset`, where
    /// bit `c` of `subset` marks class `c`. Column 1 holds the members.
    pub fn collapse(&self, subset: u64) -> JointHistogram {
        let mut counts = Array2::zeros((self.bins(), 2));
        for ((t, c), &k) in self.counts.indexed_iter() {
            counts[[t, usize::from(subset >> c & 1 == 1)]] += k;
        }
        JointHistogram { counts, n: self.n }
    }
}

pub fn build_joint(quantized: &[usize], labels: &[usize], bins: usize, num_classes: usize) -> Result<JointHistogram> {
    if quantized.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} quantized values but {} labels",
            quantized.len(),
            labels.len()
        )));
    }
    if quantized.is_empty() {
        return Err(Error::Consistency("cannot build a histogram from zero samples".into()));
    }
    if bins == 0 || num_classes == 0 {
        return Err(Error::Consistency(
            "histogram needs at least one bin and one class".into(),
        ));
    }
    let n = quantized.len();
    if n < 10 * bins * num_classes {
        log::warn!("only {n} samples for a {bins}x{num_classes} histogram; estimates will be noisy");
    }
    let mut counts = Array2::<u64>::zeros((bins, num_classes));
    for (&t, &c) in quantized.iter().zip(labels) {
        if t >= bins {
            return Err(Error::Consistency(format!("bin {t} outside 0..{bins}")));
        }
        if c >= num_classes {
            return Err(Error::Consistency(format!("label {c} outside 0..{num_classes}")));
        }
        counts[[t, c]] += 1;
    }
    JointHistogram::from_counts(counts)
}

/// Pairs two quantized outputs into one alphabet of size `bins_a * bins_b`
/// (code `a * bins_b + b`).
pub fn combine_codes(a: &[usize], b: &[usize], bins_b: usize) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::Consistency(format!("{} vs {} samples", a.len(), b.len())));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if y >= bins_b {
                Err(Error::Consistency(format!("bin {y} outside 0..{bins_b}")))
            } else {
                Ok(x * bins_b + y)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub p_t: Vec<f64>,
    pub p_y: Vec<f64>,
    /// `P(T | Y = c)`, `None` for classes without samples.
    pub conditionals: Vec<Option<Vec<f64>>>,
}

pub fn marginals(h: &JointHistogram) -> Marginals {
    let n = h.n as f64;
    let class_counts = h.class_counts();
    let conditionals = class_counts
        .iter()
        .enumerate()
        .map(|(c, &nc)| (nc > 0).then(|| h.counts.column(c).iter().map(|&k| k as f64 / nc as f64).collect()))
        .collect();
    Marginals {
        p_t: h.bin_counts().iter().map(|&k| k as f64 / n).collect(),
        p_y: class_counts.iter().map(|&k| k as f64 / n).collect(),
        conditionals,
    }
}

/// One histogram per neuron (column) of a layer's activations. ReLU maxima
/// for more than two bins are taken per neuron from the same activations.
pub fn layer_histograms(
    activations: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    spec: &QuantizerSpec,
) -> Result<Vec<JointHistogram>> {
    if activations.nrows() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} activation rows but {} labels",
            activations.nrows(),
            labels.len()
        )));
    }
    activations
        .columns()
        .into_iter()
        .map(|col| {
            let values = col.to_vec();
            let max = spec.needs_max().then(|| values.iter().copied().fold(0.0, f64::max));
            let q = quantize(&values, spec, max)?;
            build_joint(&q, labels, spec.bins, num_classes)
        })
        .collect()
}

/// Writes one `layer,neuron,bin,class,count` row per histogram cell.
pub fn write_histogram_rows(out: &mut impl Write, id: NeuronId, h: &JointHistogram) -> std::io::Result<()> {
    for ((t, c), k) in h.counts.indexed_iter() {
        writeln!(out, "{},{},{t},{c},{k}", id.layer, id.neuron)?;
    }
    Ok(())
}
