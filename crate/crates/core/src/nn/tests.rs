use approx::assert_abs_diff_eq;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datasets::{Dataset, SplitTag};

fn random_model(sizes: &[usize], act: Activation, bn: bool, seed: u64) -> MlpModel {
    let mut m = MlpModel::init(sizes, act, bn, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for d in 0..m.dense_layers().len() {
        m.dense_mut(d).bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    if let Some(bn) = m.batch_norm_mut() {
        for b in bn {
            b.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            b.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            b.running_mean.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            b.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
        }
    }
    m
}

fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn zero_sigmoid_network_is_uniform() {
    let m = MlpModel::zeros(&[5, 3, 4, 10], Activation::Sigmoid, false).unwrap();
    let out = m.forward(random_input(7, 5, 1).view(), &Overrides::new()).unwrap();
    for h in &out.hidden {
        assert!(h.iter().all(|&v| v == 0.5));
    }
    assert!(out.probabilities.iter().all(|&p| (p - 0.1).abs() < 1e-15));
}

#[test]
fn softmax_rows_sum_to_one() {
    let m = random_model(&[6, 8, 5], Activation::Relu, false, 3);
    let mut x = random_input(20, 6, 4);
    x.mapv_inplace(|v| v * 50.0);
    let p = m.predict_proba(x.view(), &Overrides::new()).unwrap();
    for row in p.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn identity_override_changes_nothing() {
    let m = random_model(&[4, 6, 5, 3], Activation::Relu, false, 9);
    let x = random_input(1, 4, 10);
    let base = m.forward(x.view(), &Overrides::new()).unwrap();
    let mut ov = Overrides::new();
    for (l, h) in base.hidden.iter().enumerate() {
        for j in 0..h.ncols() {
            ov.set(NeuronId::new(l + 1, j), h[[0, j]]);
        }
    }
    let again = m.forward(x.view(), &ov).unwrap();
    assert_eq!(base.probabilities, again.probabilities);
}

#[test]
fn zero_override_equals_removed_outgoing_weights() {
    for seed in 0..10 {
        let m = random_model(&[3, 4, 3], Activation::Relu, false, seed);
        let x = random_input(16, 3, seed + 100);
        let j = (seed % 4) as usize;
        let mut ov = Overrides::new();
        ov.set(NeuronId::new(1, j), 0.0);
        let a = m.predict_proba(x.view(), &ov).unwrap();

        let mut cut = m.clone();
        cut.dense_mut(1).weights.row_mut(j).fill(0.0);
        let b = cut.predict_proba(x.view(), &Overrides::new()).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-15);
        }
    }
}

#[test]
fn constant_override_equals_bias_adapted_network() {
    for seed in 0..10 {
        let m = random_model(&[5, 6, 4, 3], Activation::Sigmoid, false, seed);
        let x = random_input(12, 5, seed + 7);
        let layer = 1 + (seed as usize % 2);
        let j = seed as usize % m.hidden_size(layer);
        let v = 0.37 + seed as f64 * 0.01;
        let mut ov = Overrides::new();
        ov.set(NeuronId::new(layer, j), v);
        let a = m.predict_proba(x.view(), &ov).unwrap();

        let mut adapted = m.clone();
        let w_row = adapted.dense(layer).weights.row(j).to_owned();
        let d = adapted.dense_mut(layer);
        d.bias = &d.bias + &(w_row * v);
        d.weights.row_mut(j).fill(0.0);
        let b = adapted.predict_proba(x.view(), &Overrides::new()).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-12);
        }
    }
}

#[test]
fn shape_and_override_errors() {
    let m = random_model(&[4, 5, 3], Activation::Relu, false, 1);
    let x = random_input(2, 3, 1);
    assert!(matches!(
        m.forward(x.view(), &Overrides::new()),
        Err(Error::Shape { .. })
    ));
    let x = random_input(2, 4, 1);
    for id in [NeuronId::new(2, 0), NeuronId::new(0, 0), NeuronId::new(1, 5)] {
        let mut ov = Overrides::new();
        ov.set(id, 0.0);
        assert!(matches!(m.forward(x.view(), &ov), Err(Error::Argument(_))), "{id}");
    }
}

#[test]
fn predict_from_cached_layer_matches_full_pass() {
    let m = random_model(&[5, 7, 6, 4], Activation::Relu, true, 5);
    let x = random_input(9, 5, 6);
    let mut ov = Overrides::new();
    ov.set(NeuronId::new(1, 2), 0.0).set(NeuronId::new(2, 4), 1.5);
    let full = m.predict_proba(x.view(), &ov).unwrap();
    let h1 = m.hidden_outputs(1, x.view()).unwrap();
    let cached = m.predict_proba_from(1, h1.view(), &ov).unwrap();
    assert_eq!(full, cached);

    let h2 = m.hidden_outputs(2, x.view()).unwrap();
    assert!(m.predict_proba_from(2, h2.view(), &ov).is_err());
}

#[test]
fn grad_check_sigmoid() {
    for seed in 0..5 {
        let m = random_model(&[4, 5, 3], Activation::Sigmoid, false, seed);
        let x = random_input(6, 4, seed + 50);
        let y = [0, 1, 2, 0, 1, 2];
        assert!(grad_check(&m, &x, &y).unwrap() < 1e-5);
    }
}

#[test]
fn grad_check_relu_off_kink() {
    let m = random_model(&[4, 5, 3], Activation::Relu, false, 2);
    let mut x = Array2::<f64>::zeros((5, 4));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    x.mapv_inplace(|_| rng.random_range(0.05..0.2) * if rng.random::<bool>() { 1.0 } else { -1.0 });
    let y = [2, 0, 1, 1, 0];
    let err = grad_check(&m, &x, &y).unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn grad_check_linear_is_tight() {
    let m = random_model(&[4, 5, 3], Activation::Linear, false, 8);
    let x = random_input(8, 4, 9);
    let y = [0, 1, 2, 0, 1, 2, 0, 1];
    let err = grad_check(&m, &x, &y).unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn grad_check_batch_norm() {
    for act in [Activation::Sigmoid, Activation::Relu] {
        let m = random_model(&[4, 6, 5, 3], act, true, 21);
        let x = random_input(8, 4, 22);
        let y = [0, 1, 2, 0, 1, 2, 2, 1];
        let err = grad_check(&m, &x, &y).unwrap();
        assert!(err < 1e-5, "{act}: {err}");
    }
}

#[test]
fn grad_check_limits() {
    let m = random_model(&[4, 33, 3], Activation::Sigmoid, false, 1);
    let x = random_input(2, 4, 1);
    assert!(matches!(grad_check(&m, &x, &[0, 1]), Err(Error::Capability(_))));
    let m = random_model(&[4, 5, 3], Activation::Sigmoid, false, 1);
    let x = random_input(9, 4, 1);
    assert!(matches!(grad_check(&m, &x, &[0; 9]), Err(Error::Capability(_))));
}

fn blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f32>::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let centre = if c == 0 { 0.25 } else { 0.75 };
        x[[i, 0]] = centre + rng.random_range(-0.15..0.15);
        x[[i, 1]] = centre + rng.random_range(-0.15..0.15);
        y.push(c);
    }
    Dataset::new(x, y, 2, SplitTag::Train).unwrap()
}

fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        max_epochs: 5,
        patience: 5,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_training_loss_decreases() {
    let train_set = blobs(400, 1);
    let val = blobs(100, 2).with_split_tag(SplitTag::Validation);
    let run = train(&train_set, &val, &[2, 4, 2], Activation::Relu, &toy_config(3)).unwrap();
    assert_eq!(run.epochs.len(), 5);
    for w in run.epochs.windows(2) {
        assert!(w[1].train_loss < w[0].train_loss, "{:?}", run.epochs);
    }
    let again = train(&train_set, &val, &[2, 4, 2], Activation::Relu, &toy_config(3)).unwrap();
    assert_eq!(run.model, again.model);
    assert_eq!(evaluate(&run.model, &val, &Overrides::new()).unwrap(), 0.0);
}

#[test]
fn toy_training_with_dropout_and_batch_norm() {
    let train_set = blobs(400, 4);
    let val = blobs(100, 5);
    let cfg = TrainConfig {
        regularizer: Regularizer::DropoutBatchNorm {
            probabilities: vec![0.2],
        },
        ..toy_config(6)
    };
    let run = train(&train_set, &val, &[2, 8, 2], Activation::Sigmoid, &cfg).unwrap();
    let bn = run.model.batch_norm().unwrap();
    assert!(bn[0].running_mean.iter().any(|&m| m != 0.0));
    assert!(bn[0].running_var.iter().all(|&v| v > 0.0));
    assert!(evaluate(&run.model, &val, &Overrides::new()).unwrap() < 0.05);
}

#[test]
fn huge_learning_rate_diverges() {
    let train_set = blobs(400, 1);
    let val = blobs(100, 2);
    let cfg = TrainConfig {
        learning_rate: 1e6,
        ..toy_config(3)
    };
    let err = train(&train_set, &val, &[2, 4, 2], Activation::Relu, &cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn training_rejects_mismatched_architecture() {
    let d = blobs(10, 1);
    assert!(train(&d, &d, &[3, 4, 2], Activation::Relu, &toy_config(0)).is_err());
    assert!(train(&d, &d, &[2, 4, 3], Activation::Relu, &toy_config(0)).is_err());
}

#[test]
fn uniform_model_error_is_chance() {
    let m = MlpModel::zeros(&[3, 4, 10], Activation::Relu, false).unwrap();
    let x = Array2::<f32>::zeros((100, 3));
    let y: Vec<usize> = (0..100).map(|i| i % 10).collect();
    let d = Dataset::new(x, y, 10, SplitTag::Test).unwrap();
    assert_eq!(evaluate(&m, &d, &Overrides::new()).unwrap(), 0.9);
}

#[test]
fn memorizing_model_has_zero_error() {
    let mut m = MlpModel::zeros(&[4, 4, 4], Activation::Relu, false).unwrap();
    m.dense_mut(0).weights = Array2::eye(4);
    m.dense_mut(1).weights = Array2::eye(4) * 5.0;
    let d = Dataset::new(Array2::<f32>::eye(4), vec![0, 1, 2, 3], 4, SplitTag::Test).unwrap();
    assert_eq!(evaluate(&m, &d, &Overrides::new()).unwrap(), 0.0);
}

#[test]
fn recorded_activations_match_forward() {
    let m = random_model(&[3, 5, 4, 2], Activation::Relu, true, 12);
    let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 10.0);
    let d = Dataset::new(x.clone(), vec![0; 30], 2, SplitTag::Validation).unwrap();
    let rec = record_activations(&m, &d).unwrap();
    assert_eq!(rec.len(), 2);
    assert_eq!(rec[1].layer_index, 2);
    let fwd = m.forward(x.mapv(f64::from).view(), &Overrides::new()).unwrap();
    for (r, h) in rec.iter().zip(&fwd.hidden) {
        assert_eq!(&r.values, h);
        assert!(r.values.iter().all(|&v| v >= 0.0));
    }
    assert_eq!(rec, record_activations(&m, &d).unwrap());
}

#[test]
fn argmax_prefers_lowest_index() {
    assert_eq!(argmax([0.2, 0.4, 0.4]), 1);
    assert_eq!(argmax([1.0, 1.0]), 0);
}

#[test]
fn cast_round_trip() {
    let m = random_model(&[3, 4, 2], Activation::Sigmoid, true, 2);
    let back: MlpModel = m.cast::<f64>();
    assert_eq!(m, back);
}

#[test]
fn checkpoint_round_trip() {
    for bn in [false, true] {
        let m = random_model(&[5, 4, 3, 2], Activation::Sigmoid, bn, 30);
        let bytes = checkpoint::to_bytes(&m);
        assert_eq!(&bytes[..6], b"NIMLP1");
        assert_eq!(checkpoint::from_bytes(&bytes).unwrap(), m);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nimlp");
        checkpoint::save(&m, &path).unwrap();
        assert_eq!(checkpoint::load(&path).unwrap(), m);

        assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    }
}

#[test]
fn from_parts_validates() {
    let d = Dense {
        weights: Array2::<f64>::zeros((2, 3)),
        bias: Array1::zeros(2),
    };
    assert!(MlpModel::from_parts(vec![2, 3], Activation::Relu, vec![d], None).is_err());
    let layers = vec![
        Dense {
            weights: Array2::<f64>::zeros((2, 2)),
            bias: array![0.0, 0.0],
        },
        Dense {
            weights: Array2::<f64>::zeros((2, 2)),
            bias: array![0.0, 0.0],
        },
    ];
    let bn = vec![BatchNorm {
        gamma: array![1.0, 1.0],
        beta: array![0.0, 0.0],
        running_mean: array![0.0, 0.0],
        running_var: array![1.0, 0.0],
    }];
    assert!(matches!(
        MlpModel::from_parts(vec![2, 2, 2], Activation::Relu, layers, Some(bn)),
        Err(Error::Domain(_))
    ));
}
