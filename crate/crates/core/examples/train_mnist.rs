//! Trains one 784-100-100-10 ReLU network on MNIST and prints its test error.
//!
//! ```text
//! cargo run --release -p neuroinfo --example train_mnist -- data/mnist [l2|dropout] [seed]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use neuroinfo::datasets::{load_idx, split, SplitSpec, SplitTag};
use neuroinfo::nn::{evaluate, train, Activation, Overrides, Regularizer, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let regularizer = match args.next().as_deref() {
        Some("dropout") => Regularizer::Dropout {
            probabilities: vec![0.3, 0.4],
        },
        _ => Regularizer::L2 { weight_decay: 1e-4 },
    };
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let full = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?
        .with_split_tag(SplitTag::Test);
    let (train_set, val) = split(
        &full,
        &SplitSpec {
            validation_fraction: 0.2,
            seed,
        },
    )?;

    let cfg = TrainConfig {
        regularizer,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let run = train(&train_set, &val, &[784, 100, 100, 10], Activation::Relu, &cfg)?;
    for e in &run.epochs {
        println!("epoch {:2}  train {:.4}  val {:.4}", e.epoch, e.train_loss, e.val_loss);
    }
    let err = evaluate(&run.model, &test, &Overrides::new())?;
    println!(
        "best epoch {}, test accuracy {:.4}, {:.1}s",
        run.best_epoch,
        1.0 - err,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
