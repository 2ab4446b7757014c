use rayon::prelude::*;

use neuroinfo::ablation::{compute_means, run_experiment, AblationCurve, MeasureTable, NeuronMean, Ranking, Strategy};
use neuroinfo::infotheory::{measure_network, Measure};

use super::{load_checkpoints, load_splits, num, thread_pool, write_csv, write_json, Layout};
use crate::config::ExperimentConfig;
use crate::error::CliResult;

pub struct AblateReport {
    /// One aggregated curve per expanded plan, in configuration order.
    pub curves: Vec<(String, AblationCurve)>,
}

/// Runs every configured ablation plan over all replicates. Measures are
/// recomputed from the validation split so the command only needs
/// checkpoints.
pub fn ablate(cfg: &ExperimentConfig, workers: usize) -> CliResult<AblateReport> {
    let models = load_checkpoints(cfg)?;
    let splits = load_splits(cfg)?;
    let layout = Layout::new(cfg);
    let pool = thread_pool(workers)?;
    let plans = cfg.expand_plans();
    for plan in &plans {
        if let Some(m) = models.first() {
            plan.validate(m)?;
        }
    }

    let ranked: Vec<Measure> = plans
        .iter()
        .filter_map(|p| match p.ranking {
            Ranking::Measure { measure, .. } => Some(measure),
            Ranking::Random { .. } => None,
        })
        .collect();
    let measures: Vec<MeasureTable> = if ranked.is_empty() {
        Vec::new()
    } else {
        let with_js = ranked.contains(&Measure::JsSubsetSeparation);
        pool.install(|| {
            models
                .par_iter()
                .map(|m| measure_network(m, &splits.validation, cfg.bins, with_js).map(|n| n.measures))
                .collect::<Result<_, _>>()
        })?
    };
    let means: Option<Vec<NeuronMean>> = if plans.iter().any(|p| p.strategy == Strategy::ToMean) {
        Some(pool.install(|| {
            models
                .par_iter()
                .map(|m| compute_means(m, &splits.train))
                .collect::<Result<_, _>>()
        })?)
    } else {
        None
    };

    let curves: Vec<(String, AblationCurve)> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let curve = run_experiment(&models, &splits.test, plan, &measures, means.as_deref())?;
                log::info!("ablation {} done", plan.label());
                Ok((plan.label(), curve))
            })
            .collect::<Result<_, neuroinfo::Error>>()
    })?;

    for (label, curve) in &curves {
        write_csv(
            &layout.curve(label),
            &["k", "mean_error", "std_error"],
            curve
                .points
                .iter()
                .map(|p| vec![p.k.to_string(), num(p.mean_error), num(p.std_error)]),
        )?;
        write_csv(
            &layout.curve_replicates(label),
            &["replicate", "k", "error"],
            curve.per_replicate.iter().enumerate().flat_map(|(r, errors)| {
                curve
                    .points
                    .iter()
                    .zip(errors)
                    .map(move |(p, e)| vec![r.to_string(), p.k.to_string(), num(*e)])
            }),
        )?;
    }
    write_json(
        &layout.ablation_manifest(),
        &serde_json::json!({
            "bins": cfg.bins,
            "replicate_seeds": (0..cfg.replicates).map(|r| cfg.replicate_seed(r)).collect::<Vec<_>>(),
            "plans": curves.iter().map(|(label, c)| serde_json::json!({
                "label": label,
                "plan": c.plan,
                "points": c.points.len(),
            })).collect::<Vec<_>>(),
        }),
    )?;
    Ok(AblateReport { curves })
}
