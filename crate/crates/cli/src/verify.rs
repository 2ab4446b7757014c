//! Self-check suite behind `neuroinfo verify`: measure relations on seeded
//! random histograms, known measure values, gradient checks and the
//! constant-override identity.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use neuroinfo::infotheory::{entropy, kl_divergence, kl_selectivity, lemma_oracles_with, mutual_information, KlFn};
use neuroinfo::nn::{grad_check, Activation, MlpModel, NeuronId, Overrides};
use neuroinfo::quantize::{build_joint, combine_codes, JointHistogram};
use neuroinfo::Result;

pub const RANDOM_HISTOGRAMS: usize = 500;
pub const HISTOGRAM_CLASSES: usize = 10;
pub const HISTOGRAM_BINS: [usize; 3] = [2, 4, 8];
pub const GRAD_CHECK_NETS: usize = 20;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
pub const IDENTITY_NETS: usize = 10;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;
pub const UNIT_TOLERANCE: f64 = 1e-6;

const SEED: u64 = 0x5eed_0f7e57;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl VerifyLine {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn run_verify() -> Result<Vec<VerifyLine>> {
    run_verify_with(kl_divergence)
}

/// The full suite with the divergence used by the measure-relation checks
/// replaced by `kl`, so that a broken divergence can be shown to be caught.
pub fn run_verify_with(kl: KlFn) -> Result<Vec<VerifyLine>> {
    let mut lines = lemma_lines(kl)?;
    lines.extend(unit_lines()?);
    lines.push(xor_line()?);
    lines.extend(grad_check_lines()?);
    lines.push(identity_line()?);
    Ok(lines)
}

/// A random joint histogram with roughly a third of its cells empty, so
/// that absent bins and classes are exercised.
pub fn random_histogram(rng: &mut impl Rng, bins: usize, classes: usize) -> Result<JointHistogram> {
    let mut counts = Array2::from_shape_fn((bins, classes), |_| {
        if rng.random_bool(0.3) {
            0
        } else {
            rng.random_range(1..50)
        }
    });
    if counts.sum() == 0 {
        counts[[0, 0]] = 1;
    }
    JointHistogram::from_counts(counts)
}

pub fn lemma_lines(kl: KlFn) -> Result<Vec<VerifyLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    // check name -> (failures, smallest slack)
    let mut summary: Vec<(&'static str, usize, f64)> = Vec::new();
    for i in 0..RANDOM_HISTOGRAMS {
        let bins = HISTOGRAM_BINS[i % HISTOGRAM_BINS.len()];
        let h = random_histogram(&mut rng, bins, HISTOGRAM_CLASSES)?;
        for check in lemma_oracles_with(&h, kl)?.checks {
            let entry = match summary.iter_mut().find(|(n, _, _)| *n == check.name) {
                Some(e) => e,
                None => {
                    summary.push((check.name, 0, f64::INFINITY));
                    summary.last_mut().expect("just pushed")
                }
            };
            entry.1 += usize::from(!check.passed);
            entry.2 = entry.2.min(check.slack);
        }
    }
    Ok(summary
        .into_iter()
        .map(|(name, failed, slack)| {
            VerifyLine::new(
                name,
                failed == 0,
                format!("{failed}/{RANDOM_HISTOGRAMS} histograms violate, min slack {slack:.3e}"),
            )
        })
        .collect())
}

pub fn unit_lines() -> Result<Vec<VerifyLine>> {
    let h = entropy(&[0.25, 0.75])?;
    let mi = mutual_information(&JointHistogram::from_counts(ndarray::array![[40, 10], [10, 40]])?);
    // One neuron per class: bin c fires exactly for class c.
    let uniform = JointHistogram::from_counts(Array2::from_shape_fn((10, 10), |(t, y)| u64::from(t == y) * 7))?;
    let sel = kl_selectivity(&uniform).value;
    let ten = 10f64.log2();
    Ok(vec![
        VerifyLine::new(
            "entropy-of-quarter-split",
            (h - 0.811278).abs() <= UNIT_TOLERANCE,
            format!("{h:.9} vs 0.811278"),
        ),
        VerifyLine::new(
            "mi-of-symmetric-channel",
            (mi - 0.278072).abs() <= UNIT_TOLERANCE,
            format!("{mi:.9} vs 0.278072"),
        ),
        VerifyLine::new(
            "kl-selectivity-of-one-hot-code",
            (sel - ten).abs() <= 1e-9,
            format!("{sel:.12} vs log2(10) = {ten:.12}"),
        ),
    ])
}

pub fn xor_line() -> Result<VerifyLine> {
    let (mut t1, mut t2, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for a in 0..2 {
        for b in 0..2 {
            for _ in 0..25 {
                t1.push(a);
                t2.push(b);
                y.push(a ^ b);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for t in [&t1, &t2] {
        let h = build_joint(t, &y, 2, 2)?;
        worst = worst.max(mutual_information(&h)).max(kl_selectivity(&h).value);
    }
    let pair = mutual_information(&build_joint(&combine_codes(&t1, &t2, 2)?, &y, 4, 2)?);
    Ok(VerifyLine::new(
        "xor-pair-synergy",
        worst <= 1e-12 && pair == 1.0,
        format!("single-neuron max {worst:.3e}, pair MI {pair}"),
    ))
}

fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], activation: Activation) -> Result<MlpModel> {
    let mut m = MlpModel::init(sizes, activation, false, rng.random())?;
    for d in 0..m.dense_layers().len() {
        m.dense_mut(d).bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    Ok(m)
}

fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Central differences are meaningless across a ReLU kink, so ReLU batches
/// whose pre-activations come this close to zero are redrawn.
const KINK_MARGIN: f64 = 1e-3;

/// Smallest absolute hidden pre-activation of `m` on `x` (no batch norm).
fn kink_margin(m: &MlpModel, x: &Array2<f64>) -> f64 {
    let mut a = x.clone();
    let mut margin = f64::INFINITY;
    for d in &m.dense_layers()[..m.num_hidden()] {
        let z = a.dot(&d.weights) + &d.bias;
        margin = z.iter().fold(margin, |acc, v| acc.min(v.abs()));
        a = z.mapv(|v| v.max(0.0));
    }
    margin
}

fn grad_check_input(rng: &mut ChaCha8Rng, m: &MlpModel, rows: usize) -> Array2<f64> {
    loop {
        let x = random_input(rng, rows, m.layer_sizes()[0]);
        if m.activation() != Activation::Relu || kink_margin(m, &x) > KINK_MARGIN {
            return x;
        }
    }
}

pub fn grad_check_lines() -> Result<Vec<VerifyLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 1);
    let mut worst: f64 = 0.0;
    for i in 0..GRAD_CHECK_NETS {
        let activation = if i % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Sigmoid
        };
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(2..=12)];
        sizes.extend((0..depth).map(|_| rng.random_range(2..=32)));
        sizes.push(rng.random_range(2..=10));
        let m = random_net(&mut rng, &sizes, activation)?;
        let x = grad_check_input(&mut rng, &m, 8);
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..m.num_classes())).collect();
        worst = worst.max(grad_check(&m, &x, &labels)?);
    }

    let m = random_net(&mut rng, &[4, 5, 3], Activation::Relu)?;
    let x = grad_check_input(&mut rng, &m, 6);
    let small = grad_check(&m, &x, &[0, 1, 2, 0, 1, 2])?;
    Ok(vec![
        VerifyLine::new(
            "grad-check-random-nets",
            worst < GRAD_CHECK_TOLERANCE,
            format!("max relative error {worst:.3e} over {GRAD_CHECK_NETS} nets"),
        ),
        VerifyLine::new(
            "grad-check-4-5-3",
            small < GRAD_CHECK_TOLERANCE,
            format!("max relative error {small:.3e}"),
        ),
    ])
}

/// Largest probability difference between overriding one hidden neuron with
/// a constant and folding that constant into the next layer's bias.
pub fn identity_gap(m: &MlpModel, x: &Array2<f64>, id: NeuronId, value: f64) -> Result<f64> {
    let mut ov = Overrides::new();
    ov.set(id, value);
    let a = m.predict_proba(x.view(), &ov)?;
    let mut adapted = m.clone();
    let row = adapted.dense(id.layer).weights.row(id.neuron).to_owned();
    let d = adapted.dense_mut(id.layer);
    d.bias = &d.bias + &(row * value);
    d.weights.row_mut(id.neuron).fill(0.0);
    let b = adapted.predict_proba(x.view(), &Overrides::new())?;
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
}

pub fn identity_line() -> Result<VerifyLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 2);
    let mut worst: f64 = 0.0;
    for i in 0..IDENTITY_NETS {
        let activation = if i % 2 == 0 {
            Activation::Relu
        } else {
            Activation::Sigmoid
        };
        let sizes = [6, rng.random_range(3..=16), rng.random_range(3..=16), 4];
        let m = random_net(&mut rng, &sizes, activation)?;
        let x = random_input(&mut rng, 20, 6);
        let layer = 1 + i % 2;
        let id = NeuronId::new(layer, rng.random_range(0..m.hidden_size(layer)));
        worst = worst.max(identity_gap(&m, &x, id, rng.random_range(0.0..2.0))?);
    }
    Ok(VerifyLine::new(
        "constant-override-equals-bias-folding",
        worst <= IDENTITY_TOLERANCE,
        format!("max probability gap {worst:.3e} over {IDENTITY_NETS} nets"),
    ))
}
