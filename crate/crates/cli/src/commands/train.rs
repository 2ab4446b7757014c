use rayon::prelude::*;
use serde::Serialize;

use neuroinfo::nn::{checkpoint, evaluate, train as train_model, EpochLog, Overrides};

use super::{load_splits, num, thread_pool, write_csv, write_json, Layout};
use crate::config::ExperimentConfig;
use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub test_accuracy: Option<f64>,
    /// Why training failed, if it did.
    pub error: Option<String>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub replicates: Vec<ReplicateOutcome>,
}

impl TrainReport {
    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Trains every replicate and writes checkpoints, `train_log.csv`,
/// `train_summary.csv` and `manifest.json`. A replicate that fails is
/// reported in the summary without stopping the others.
pub fn train(cfg: &ExperimentConfig, workers: usize) -> CliResult<TrainReport> {
    let splits = load_splits(cfg)?;
    let layout = Layout::new(cfg);
    let pool = thread_pool(workers)?;
    super::ensure_parent(&layout.checkpoint(0))?;

    let replicates: Vec<ReplicateOutcome> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let tc = cfg.train_config(r);
                let mut outcome = ReplicateOutcome {
                    replicate: r,
                    seed: tc.seed,
                    epochs: Vec::new(),
                    best_epoch: None,
                    test_accuracy: None,
                    error: None,
                    checkpoint: None,
                };
                let result = train_model(
                    &splits.train,
                    &splits.validation,
                    &cfg.architecture,
                    cfg.activation,
                    &tc,
                )
                .and_then(|run| {
                    let path = layout.checkpoint(r);
                    checkpoint::save(&run.model, &path)?;
                    let err = evaluate(&run.model, &splits.test, &Overrides::new())?;
                    Ok((run, err, path))
                });
                match result {
                    Ok((run, err, path)) => {
                        log::info!("replicate {r}: test accuracy {:.4}", 1.0 - err);
                        outcome.epochs = run.epochs;
                        outcome.best_epoch = Some(run.best_epoch);
                        outcome.test_accuracy = Some(1.0 - err);
                        outcome.checkpoint = Some(path.display().to_string());
                    }
                    Err(e) => {
                        log::error!("replicate {r} failed: {e}");
                        outcome.error = Some(e.to_string());
                    }
                }
                outcome
            })
            .collect()
    });

    write_csv(
        &layout.train_log(),
        &["replicate", "epoch", "train_loss", "val_loss"],
        replicates.iter().flat_map(|o| {
            o.epochs.iter().map(move |e| {
                vec![
                    o.replicate.to_string(),
                    e.epoch.to_string(),
                    num(e.train_loss),
                    num(e.val_loss),
                ]
            })
        }),
    )?;
    write_csv(
        &layout.train_summary(),
        &["replicate", "seed", "status", "best_epoch", "test_accuracy"],
        replicates.iter().map(|o| {
            vec![
                o.replicate.to_string(),
                o.seed.to_string(),
                match &o.error {
                    None => "ok".to_string(),
                    Some(e) => format!("failed: {e}"),
                },
                o.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
                num(o.test_accuracy),
            ]
        }),
    )?;
    let report = TrainReport { replicates };
    write_json(
        &layout.train_manifest(),
        &serde_json::json!({
            "config": cfg,
            "replicates": report.replicates.iter().map(|o| serde_json::json!({
                "replicate": o.replicate,
                "seed": o.seed,
                "checkpoint": o.checkpoint,
                "error": o.error,
            })).collect::<Vec<_>>(),
        }),
    )?;
    Ok(report)
}
