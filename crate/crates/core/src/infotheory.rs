//! Information-theoretic importance measures of a quantized neuron output `T`
//! with respect to the class label `Y`, computed from a [`JointHistogram`].
//! All values are in bits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nn::{record_activations, MlpModel, NeuronId};
use crate::quantize::{layer_histograms, JointHistogram, QuantizerSpec};

/// Largest class count for the exhaustive subset search.
pub const MAX_SUBSET_CLASSES: usize = 20;
/// Largest class count for [`lemma_oracles`].
pub const MAX_ORACLE_CLASSES: usize = 12;
/// Slack allowed on inequalities between measures.
pub const INEQUALITY_SLACK: f64 = 1e-10;
/// Tolerance for identities and for "is zero" decisions.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

const DIST_TOLERANCE: f64 = 1e-12;

/// Clamps rounding residues below zero.
fn nonneg(x: f64) -> f64 {
    x.max(0.0)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Argument("empty distribution".into()));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Argument(format!("probability {v} is not a finite value >= 0")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DIST_TOLERANCE {
        return Err(Error::Argument(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Shannon entropy `-Σ p log2 p`, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(nonneg(p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()))
}

fn entropy_of_counts(counts: impl Iterator<Item = u64>, total: u64) -> f64 {
    let n = total as f64;
    counts
        .filter(|&k| k > 0)
        .map(|k| {
            let k = k as f64;
            k / n * (n / k).log2()
        })
        .sum()
}

/// `D(p || q)` in bits. Infinite if `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| if b > 0.0 { a * (a / b).log2() } else { f64::INFINITY })
        .sum()
}

/// Signature of the divergence used by [`lemma_oracles_with`].
pub type KlFn = fn(&[f64], &[f64]) -> f64;

/// `H(T) - H(T | Y)`.
pub fn mutual_information(h: &JointHistogram) -> f64 {
    let n = h.n();
    let h_t = entropy_of_counts(h.bin_counts().into_iter(), n);
    let h_t_given_y: f64 = h
        .counts()
        .columns()
        .into_iter()
        .zip(h.class_counts())
        .filter(|(_, nc)| *nc > 0)
        .map(|(col, nc)| nc as f64 / n as f64 * entropy_of_counts(col.iter().copied(), nc))
        .sum();
    nonneg(h_t - h_t_given_y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlSelectivity {
    pub value: f64,
    pub argmax_class: usize,
    /// `D(P_{T|Y=y} || P_T)` per class; `None` for classes without samples.
    pub specific_information: Vec<Option<f64>>,
}

/// Maximum over present classes of `D(P_{T|Y=y} || P_T)`.
pub fn kl_selectivity(h: &JointHistogram) -> KlSelectivity {
    kl_selectivity_with(h, kl_divergence)
}

fn kl_selectivity_with(h: &JointHistogram, kl: KlFn) -> KlSelectivity {
    let n = h.n() as f64;
    let p_t: Vec<f64> = h.bin_counts().iter().map(|&k| k as f64 / n).collect();
    let spectrum: Vec<Option<f64>> = h
        .counts()
        .columns()
        .into_iter()
        .zip(h.class_counts())
        .map(|(col, nc)| {
            (nc > 0).then(|| {
                let cond: Vec<f64> = col.iter().map(|&k| k as f64 / nc as f64).collect();
                nonneg(kl(&cond, &p_t))
            })
        })
        .collect();
    let (argmax_class, value) =
        spectrum
            .iter()
            .enumerate()
            .filter_map(|(c, v)| v.map(|v| (c, v)))
            .fold(
                (0, f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
    KlSelectivity {
        value,
        argmax_class,
        specific_information: spectrum,
    }
}

/// `π D(P1 || M) + (1 - π) D(P2 || M)` with `M = π P1 + (1 - π) P2`.
pub fn js_divergence(pi: f64, p1: &[f64], p2: &[f64]) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::Argument(format!("weight {pi} outside [0, 1]")));
    }
    check_distribution(p1)?;
    check_distribution(p2)?;
    if p1.len() != p2.len() {
        return Err(Error::Argument(format!(
            "distributions over {} and {} symbols",
            p1.len(),
            p2.len()
        )));
    }
    let m: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| pi * a + (1.0 - pi) * b).collect();
    let mut total = 0.0;
    if pi > 0.0 {
        total += pi * kl_divergence(p1, &m);
    }
    if pi < 1.0 {
        total += (1.0 - pi) * kl_divergence(p2, &m);
    }
    Ok(nonneg(total))
}

/// Bitmask subset of classes: bit `c` set means class `c` is a member.
pub type ClassSubset = u64;

pub fn subset_members(subset: ClassSubset, num_classes: usize) -> Vec<usize> {
    (0..num_classes).filter(|&c| subset >> c & 1 == 1).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetSeparation {
    pub value: f64,
    /// Representative containing class 0; the complement scores the same.
    pub subset: ClassSubset,
}

/// The split of `h` into `Y ∈ A` vs `Y ∉ A`: `(π, P_{T|Y∈A}, P_{T|Y∉A})`.
/// `None` if either side has no samples.
fn subset_split(h: &JointHistogram, subset: ClassSubset) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let c = h.collapse(subset);
    let totals = c.class_counts();
    if totals[0] == 0 || totals[1] == 0 {
        return None;
    }
    let inside = c
        .counts()
        .column(1)
        .iter()
        .map(|&k| k as f64 / totals[1] as f64)
        .collect();
    let outside = c
        .counts()
        .column(0)
        .iter()
        .map(|&k| k as f64 / totals[0] as f64)
        .collect();
    Some((totals[1] as f64 / h.n() as f64, inside, outside))
}

/// JSD between the class-conditional output distributions inside and
/// outside `subset`, weighted by the subset's prior.
pub fn subset_jsd(h: &JointHistogram, subset: ClassSubset) -> f64 {
    match subset_split(h, subset) {
        Some((pi, inside, outside)) => js_divergence(pi, &inside, &outside).expect("conditionals are distributions"),
        None => 0.0,
    }
}

/// Every subset containing class 0 other than the full set.
fn representative_subsets(num_classes: usize) -> impl Iterator<Item = ClassSubset> {
    let rest = if num_classes == 0 {
        0
    } else {
        (1u64 << (num_classes - 1)) - 1
    };
    (0..rest).map(|m| m << 1 | 1)
}

/// Maximum over nonempty proper class subsets `A` of
/// `JS_{P_Y(A)}(P_{T|Y∈A}, P_{T|Y∉A})`. Ties go to the smallest bitmask.
pub fn js_subset_separation(h: &JointHistogram) -> Result<SubsetSeparation> {
    let classes = h.num_classes();
    if classes > MAX_SUBSET_CLASSES {
        return Err(Error::Capability(format!(
            "subset search over {classes} classes exceeds the limit of {MAX_SUBSET_CLASSES}; \
             use labeled mutual information instead"
        )));
    }
    let mut best = SubsetSeparation { value: 0.0, subset: 1 };
    let mut first = true;
    for subset in representative_subsets(classes) {
        let v = subset_jsd(h, subset);
        if first || v > best.value {
            best = SubsetSeparation { value: v, subset };
            first = false;
        }
    }
    Ok(best)
}

/// Maximum over classes `c` of `I(T; 1{Y = c})`, ties to the lowest class.
pub fn labeled_mi(h: &JointHistogram) -> (f64, usize) {
    (0..h.num_classes())
        .map(|c| (c, mutual_information(&h.collapse(1 << c))))
        .fold(
            (f64::NEG_INFINITY, 0),
            |best, (c, v)| if v > best.0 { (v, c) } else { best },
        )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Entropy,
    #[serde(rename = "mi")]
    MutualInformation,
    KlSelectivity,
    #[serde(rename = "js")]
    JsSubsetSeparation,
    LabeledMi,
}

impl Measure {
    pub const ALL: [Measure; 5] = [
        Measure::Entropy,
        Measure::MutualInformation,
        Measure::KlSelectivity,
        Measure::JsSubsetSeparation,
        Measure::LabeledMi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Entropy => "entropy",
            Measure::MutualInformation => "mi",
            Measure::KlSelectivity => "kl_selectivity",
            Measure::JsSubsetSeparation => "js",
            Measure::LabeledMi => "labeled_mi",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::Argument(format!(
                "unknown measure {s:?}; expected one of entropy, mi, kl_selectivity, js, labeled_mi"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronMeasures {
    pub entropy: f64,
    pub mutual_information: f64,
    pub kl_selectivity: f64,
    pub kl_argmax_class: usize,
    pub specific_information: Vec<Option<f64>>,
    pub js_subset_separation: Option<f64>,
    pub js_argmax_subset: Option<ClassSubset>,
    pub labeled_mi: f64,
    pub labeled_mi_argmax_class: usize,
}

impl NeuronMeasures {
    /// Value of `measure`, or `None` for a JS value that was not computed.
    pub fn get(&self, measure: Measure) -> Option<f64> {
        match measure {
            Measure::Entropy => Some(self.entropy),
            Measure::MutualInformation => Some(self.mutual_information),
            Measure::KlSelectivity => Some(self.kl_selectivity),
            Measure::JsSubsetSeparation => self.js_subset_separation,
            Measure::LabeledMi => Some(self.labeled_mi),
        }
    }
}

pub fn measure_all(h: &JointHistogram, compute_js: bool) -> Result<NeuronMeasures> {
    let kl = kl_selectivity(h);
    let js = if compute_js {
        Some(js_subset_separation(h)?)
    } else {
        None
    };
    let (lmi, lmi_class) = labeled_mi(h);
    Ok(NeuronMeasures {
        entropy: nonneg(entropy_of_counts(h.bin_counts().into_iter(), h.n())),
        mutual_information: mutual_information(h),
        kl_selectivity: kl.value,
        kl_argmax_class: kl.argmax_class,
        specific_information: kl.specific_information,
        js_subset_separation: js.map(|s| s.value),
        js_argmax_subset: js.map(|s| s.subset),
        labeled_mi: lmi,
        labeled_mi_argmax_class: lmi_class,
    })
}

/// Per-neuron measures of one network.
pub type MeasureTable = BTreeMap<NeuronId, NeuronMeasures>;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMeasures {
    pub measures: MeasureTable,
    pub histograms: BTreeMap<NeuronId, JointHistogram>,
}

/// Quantizes every hidden neuron's outputs on `set` into `bins` bins and
/// computes all measures from the resulting histograms.
pub fn measure_network(model: &MlpModel, set: &Dataset, bins: usize, compute_js: bool) -> Result<NetworkMeasures> {
    let spec = QuantizerSpec::new(bins, model.activation())?;
    let mut out = NetworkMeasures {
        measures: MeasureTable::new(),
        histograms: BTreeMap::new(),
    };
    for layer in record_activations(model, set)? {
        let hs = layer_histograms(layer.values.view(), set.labels(), set.num_classes(), &spec)?;
        for (j, h) in hs.into_iter().enumerate() {
            let id = NeuronId::new(layer.layer_index, j);
            out.measures.insert(id, measure_all(&h, compute_js)?);
            out.histograms.insert(id, h);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Smallest margin by which the check held; negative when violated.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &LemmaCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub const CHECK_SUBSET_KL: &str = "subset-kl-max-equals-class-kl-max";
pub const CHECK_KL_BOUNDS_MI: &str = "kl-selectivity-bounds-mi";
pub const CHECK_KL_MI_ZERO: &str = "kl-selectivity-zero-iff-mi-zero";
pub const CHECK_JSD_IS_MI: &str = "subset-jsd-equals-indicator-mi";
pub const CHECK_CHAIN: &str = "ordering-chain";

/// Checks the relations between the measures on `h`:
///
/// * the maximum of `D(P_{T|Y∈A} || P_T)` over all class subsets equals the
///   maximum over single classes;
/// * KL selectivity is at least the mutual information, and one is zero
///   exactly when the other is;
/// * the subset JSD equals `I(T; 1{Y∈A})` for every subset;
/// * `H(T) ≥ I(T;Y) ≥ max_A I(T; 1{Y∈A}) ≥ max_c I(T; 1{Y=c})`.
pub fn lemma_oracles(h: &JointHistogram) -> Result<LemmaReport> {
    lemma_oracles_with(h, kl_divergence)
}

/// [`lemma_oracles`] with the divergence used for KL selectivity and the
/// subset KL maximum replaced by `kl`.
pub fn lemma_oracles_with(h: &JointHistogram, kl: KlFn) -> Result<LemmaReport> {
    let classes = h.num_classes();
    if classes > MAX_ORACLE_CLASSES {
        return Err(Error::Capability(format!(
            "lemma oracles enumerate class subsets and take at most {MAX_ORACLE_CLASSES} classes, got {classes}"
        )));
    }
    let mut report = LemmaReport::default();
    let mut push = |name, slack: f64, tolerance: f64| {
        report.checks.push(LemmaCheck {
            name,
            passed: slack >= -tolerance,
            slack,
        })
    };

    let sel = kl_selectivity_with(h, kl);
    let n = h.n() as f64;
    let p_t: Vec<f64> = h.bin_counts().iter().map(|&k| k as f64 / n).collect();
    let subset_max = (1..1u64 << classes)
        .filter_map(|a| subset_split(h, a).map(|(_, inside, _)| kl(&inside, &p_t)))
        .chain((classes > 0).then_some(0.0))
        .fold(f64::NEG_INFINITY, f64::max);
    push(CHECK_SUBSET_KL, -(subset_max - sel.value).abs(), INEQUALITY_SLACK);

    let mi = mutual_information(h);
    push(CHECK_KL_BOUNDS_MI, sel.value - mi, INEQUALITY_SLACK);
    let zero_agrees = (sel.value.abs() <= IDENTITY_TOLERANCE) == (mi <= IDENTITY_TOLERANCE);
    push(CHECK_KL_MI_ZERO, if zero_agrees { 0.0 } else { -1.0 }, 0.0);

    let mut jsd_gap = 0.0_f64;
    let mut js_max = 0.0_f64;
    for a in representative_subsets(classes) {
        let jsd = subset_jsd(h, a);
        jsd_gap = jsd_gap.max((jsd - mutual_information(&h.collapse(a))).abs());
        js_max = js_max.max(jsd);
    }
    push(CHECK_JSD_IS_MI, -jsd_gap, IDENTITY_TOLERANCE);

    let entropy = entropy_of_counts(h.bin_counts().into_iter(), h.n());
    let (lmi, _) = labeled_mi(h);
    let chain_slack = (entropy - mi).min(mi - js_max).min(js_max - lmi);
    push(CHECK_CHAIN, chain_slack, INEQUALITY_SLACK);

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{build_joint, combine_codes};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn hist(counts: Array2<u64>) -> JointHistogram {
        JointHistogram::from_counts(counts).unwrap()
    }

    /// Σ p(t,y) log2(p(t,y) / (p(t) p(y))) evaluated cell by cell.
    fn mi_oracle(h: &JointHistogram) -> f64 {
        let n = h.n() as f64;
        let c = h.counts();
        let mut total = 0.0;
        for t in 0..c.nrows() {
            for y in 0..c.ncols() {
                let p = c[[t, y]] as f64 / n;
                if p > 0.0 {
                    let pt = c.row(t).sum() as f64 / n;
                    let py = c.column(y).sum() as f64 / n;
                    total += p * (p / (pt * py)).log2();
                }
            }
        }
        total
    }

    fn one_vs_rest() -> JointHistogram {
        let mut c = Array2::zeros((2, 10));
        c[[1, 0]] = 100;
        for y in 1..10 {
            c[[0, y]] = 100;
        }
        hist(c)
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        let oracle = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        assert_abs_diff_eq!(entropy(&[0.25, 0.75]).unwrap(), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(entropy(&[0.25, 0.75]).unwrap(), 0.811278, epsilon = 1e-6);
        assert!(matches!(entropy(&[0.5, 0.6]), Err(Error::Argument(_))));
        assert!(matches!(entropy(&[-0.5, 1.5]), Err(Error::Argument(_))));
    }

    #[test]
    fn mutual_information_values() {
        assert_eq!(mutual_information(&hist(array![[25, 25], [25, 25]])), 0.0);
        assert_abs_diff_eq!(
            mutual_information(&hist(array![[50, 0], [0, 50]])),
            1.0,
            epsilon = 1e-15
        );
        let h = hist(array![[40, 10], [10, 40]]);
        assert_abs_diff_eq!(mutual_information(&h), mi_oracle(&h), epsilon = 1e-14);
        assert_abs_diff_eq!(mutual_information(&h), 0.278072, epsilon = 1e-6);
    }

    #[test]
    fn kl_selectivity_values() {
        let ind = kl_selectivity(&hist(array![[10, 20, 30], [10, 20, 30]]));
        assert!(ind.specific_information.iter().all(|v| v.unwrap().abs() < 1e-15));

        let s = kl_selectivity(&one_vs_rest());
        assert_eq!(s.argmax_class, 0);
        assert_abs_diff_eq!(s.value, 10f64.log2(), epsilon = 1e-12);

        let s = kl_selectivity(&hist(array![[40, 10], [10, 40]]));
        assert_eq!(s.specific_information[0], s.specific_information[1]);
        assert_eq!(s.argmax_class, 0);
    }

    #[test]
    fn kl_selectivity_skips_absent_classes() {
        let s = kl_selectivity(&hist(array![[10, 0, 0], [0, 0, 10]]));
        assert_eq!(s.specific_information[1], None);
        assert_eq!(s.argmax_class, 0);
        assert_abs_diff_eq!(s.value, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn js_divergence_values() {
        assert!(js_divergence(0.3, &[0.2, 0.8], &[0.2, 0.8]).unwrap() < 1e-15);
        assert_abs_diff_eq!(
            js_divergence(0.5, &[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(js_divergence(1.5, &[1.0], &[1.0]).is_err());
        assert!(js_divergence(0.5, &[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn js_subset_values() {
        let s = js_subset_separation(&hist(array![[10, 20, 30], [10, 20, 30]])).unwrap();
        assert!(s.value.abs() < 1e-15);
        let s = js_subset_separation(&hist(array![[50, 0], [0, 50]])).unwrap();
        assert_abs_diff_eq!(s.value, 1.0, epsilon = 1e-15);
        assert_eq!(s.subset, 0b1);
        let big = JointHistogram::from_counts(Array2::ones((2, 21))).unwrap();
        assert!(matches!(js_subset_separation(&big), Err(Error::Capability(_))));
    }

    #[test]
    fn labeled_mi_values() {
        let (v, _) = labeled_mi(&hist(array![[10, 20, 30], [10, 20, 30]]));
        assert!(v.abs() < 1e-15);
        let (v, c) = labeled_mi(&one_vs_rest());
        let h2 = -(0.1f64 * 0.1f64.log2() + 0.9 * 0.9f64.log2());
        assert_eq!(c, 0);
        assert_abs_diff_eq!(v, h2, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.468996, epsilon = 1e-6);
    }

    #[test]
    fn measure_all_perfect_binary() {
        let m = measure_all(&hist(array![[50, 0], [0, 50]]), true).unwrap();
        for v in [
            m.entropy,
            m.mutual_information,
            m.kl_selectivity,
            m.js_subset_separation.unwrap(),
            m.labeled_mi,
        ] {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        }
        let m = measure_all(&hist(array![[50, 0], [0, 50]]), false).unwrap();
        assert_eq!(m.js_subset_separation, None);
        assert_eq!(m.get(Measure::JsSubsetSeparation), None);
    }

    #[test]
    fn measure_all_independent() {
        let m = measure_all(&hist(array![[10, 20, 30], [30, 60, 90]]), true).unwrap();
        assert!(m.entropy > 0.0);
        for v in [
            m.mutual_information,
            m.kl_selectivity,
            m.js_subset_separation.unwrap(),
            m.labeled_mi,
        ] {
            assert!(v.abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn xor_pair_is_jointly_informative() {
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        let mut y = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                for _ in 0..25 {
                    t1.push(a);
                    t2.push(b);
                    y.push(a ^ b);
                }
            }
        }
        for t in [&t1, &t2] {
            let h = build_joint(t, &y, 2, 2).unwrap();
            assert!(mutual_information(&h) <= 1e-12);
            assert!(kl_selectivity(&h).value <= 1e-12);
        }
        let pair = build_joint(&combine_codes(&t1, &t2, 2).unwrap(), &y, 4, 2).unwrap();
        assert_eq!(mutual_information(&pair), 1.0);
    }

    #[test]
    fn zero_entropy_means_zero_measures() {
        let m = measure_all(&hist(array![[10, 20, 30], [0, 0, 0]]), true).unwrap();
        assert_eq!(m.entropy, 0.0);
        assert_eq!(m.mutual_information, 0.0);
        assert_eq!(m.kl_selectivity, 0.0);
        assert_eq!(m.js_subset_separation, Some(0.0));
        assert_eq!(m.labeled_mi, 0.0);
    }

    #[test]
    fn oracles_on_examples() {
        let r = lemma_oracles(&hist(array![[40, 10], [10, 40]])).unwrap();
        assert!(r.all_passed(), "{r:?}");
        let strict = kl_selectivity(&hist(array![[40, 10], [10, 40]])).value
            - mutual_information(&hist(array![[40, 10], [10, 40]]));
        assert!(strict > 0.0);

        let r = lemma_oracles(&hist(array![[10, 20, 30], [30, 60, 90]])).unwrap();
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn faulty_divergence_is_caught() {
        fn negated(p: &[f64], q: &[f64]) -> f64 {
            -kl_divergence(p, q)
        }
        let r = lemma_oracles_with(&hist(array![[40, 10], [10, 40]]), negated).unwrap();
        assert!(!r.all_passed());
        assert!(r.failures().any(|c| c.name == CHECK_KL_BOUNDS_MI));
    }

    #[test]
    fn measure_names_round_trip() {
        for m in Measure::ALL {
            assert_eq!(m.name().parse::<Measure>().unwrap(), m);
        }
        assert!("mutual".parse::<Measure>().is_err());
    }

    fn histogram_strategy() -> impl Strategy<Value = JointHistogram> {
        (prop_oneof![Just(2usize), Just(4), Just(8)], 2usize..7).prop_flat_map(|(bins, classes)| {
            proptest::collection::vec(prop_oneof![Just(0u64), 0u64..40], bins * classes)
                .prop_filter_map("empty histogram", move |cells| {
                    JointHistogram::from_counts(Array2::from_shape_vec((bins, classes), cells).unwrap()).ok()
                })
        })
    }

    proptest! {
        #[test]
        fn measures_bounded(h in histogram_strategy()) {
            let m = measure_all(&h, true).unwrap();
            let log_t = (h.bins() as f64).log2();
            let log_c = (h.num_classes() as f64).log2();
            prop_assert!(m.entropy >= 0.0 && m.entropy <= log_t + 1e-12);
            prop_assert!(m.mutual_information <= m.entropy.min(log_c) + 1e-10);
            prop_assert!((m.mutual_information - mi_oracle(&h)).abs() < 1e-12);
            for v in [m.kl_selectivity, m.js_subset_separation.unwrap(), m.labeled_mi] {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
        }

        #[test]
        fn oracles_hold(h in histogram_strategy()) {
            let r = lemma_oracles(&h).unwrap();
            prop_assert!(r.all_passed(), "{:?}", r);
        }

        #[test]
        fn js_matches_collapsed_mi_max(h in histogram_strategy()) {
            let js = js_subset_separation(&h).unwrap().value;
            let brute = (1..(1u64 << h.num_classes()) - 1)
                .map(|a| mi_oracle(&h.collapse(a)))
                .fold(0.0, f64::max);
            prop_assert!((js - brute).abs() < 1e-12);
            prop_assert!(labeled_mi(&h).0 <= js + 1e-12);
        }

        #[test]
        fn jsd_weighted_entropy_form(
            pi in 0.0f64..=1.0,
            a in proptest::collection::vec(0.0f64..1.0, 4),
            b in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            let norm = |v: Vec<f64>| {
                let s: f64 = v.iter().sum::<f64>() + 1e-3;
                let mut out: Vec<f64> = v.iter().map(|x| (x + 2.5e-4) / s).collect();
                let r: f64 = out.iter().sum();
                out.iter_mut().for_each(|x| *x /= r);
                out
            };
            let (p1, p2) = (norm(a), norm(b));
            let m: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| pi * x + (1.0 - pi) * y).collect();
            let form = entropy(&m).unwrap() - pi * entropy(&p1).unwrap() - (1.0 - pi) * entropy(&p2).unwrap();
            prop_assert!((js_divergence(pi, &p1, &p2).unwrap() - form).abs() < 1e-12);
        }
    }
}
