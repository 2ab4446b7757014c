use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use neuroinfo::infotheory::{measure_network, Measure, NetworkMeasures};
use neuroinfo::quantize::{write_histogram_rows, HISTOGRAM_CSV_HEADER};
use neuroinfo::stats::{mean_std, quantile};

use super::{ensure_parent, load_checkpoints, load_splits, num, thread_pool, write_csv, Layout};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MEASURES_HEADER: [&str; 10] = [
    "layer",
    "neuron",
    "entropy",
    "mi",
    "kl_selectivity",
    "kl_argmax",
    "js",
    "js_argmax_bitmask",
    "labeled_mi",
    "labeled_argmax",
];

/// Computes every hidden neuron's measures on the validation split for each
/// replicate and writes per-replicate tables plus a pooled per-layer
/// distribution summary. Returns the measures in replicate order.
pub fn measure(cfg: &ExperimentConfig, workers: usize) -> CliResult<Vec<NetworkMeasures>> {
    let models = load_checkpoints(cfg)?;
    let splits = load_splits(cfg)?;
    let layout = Layout::new(cfg);
    let pool = thread_pool(workers)?;

    let results: Vec<NetworkMeasures> = pool.install(|| {
        models
            .par_iter()
            .map(|m| measure_network(m, &splits.validation, cfg.bins, cfg.compute_js))
            .collect::<Result<_, _>>()
    })?;

    for (r, net) in results.iter().enumerate() {
        write_measures(&layout, r, net)?;
        if cfg.dump_histograms {
            let path = layout.histograms(r);
            ensure_parent(&path)?;
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?);
            let io = |e| CliError::io(&path, e);
            writeln!(out, "{HISTOGRAM_CSV_HEADER}").map_err(io)?;
            for (&id, h) in &net.histograms {
                write_histogram_rows(&mut out, id, h).map_err(io)?;
            }
            out.flush().map_err(io)?;
        }
    }
    write_distribution(&layout, &results)?;
    Ok(results)
}

fn write_measures(layout: &Layout, replicate: usize, net: &NetworkMeasures) -> CliResult<()> {
    write_csv(
        &layout.measures(replicate),
        &MEASURES_HEADER,
        net.measures.iter().map(|(id, m)| {
            vec![
                id.layer.to_string(),
                id.neuron.to_string(),
                num(m.entropy),
                num(m.mutual_information),
                num(m.kl_selectivity),
                m.kl_argmax_class.to_string(),
                num(m.js_subset_separation),
                m.js_argmax_subset.map(|s| s.to_string()).unwrap_or_default(),
                num(m.labeled_mi),
                m.labeled_mi_argmax_class.to_string(),
            ]
        }),
    )?;
    write_csv(
        &layout.specific_information(replicate),
        &["layer", "neuron", "class", "specific_information"],
        net.measures.iter().flat_map(|(id, m)| {
            m.specific_information
                .iter()
                .enumerate()
                .map(move |(c, v)| vec![id.layer.to_string(), id.neuron.to_string(), c.to_string(), num(*v)])
        }),
    )
}

fn write_distribution(layout: &Layout, results: &[NetworkMeasures]) -> CliResult<()> {
    let mut pooled: BTreeMap<(usize, Measure), Vec<f64>> = BTreeMap::new();
    for net in results {
        for (id, m) in &net.measures {
            for measure in Measure::ALL {
                if let Some(v) = m.get(measure) {
                    pooled.entry((id.layer, measure)).or_default().push(v);
                }
            }
        }
    }
    write_csv(
        &layout.distribution(),
        &["layer", "measure", "count", "min", "q1", "median", "q3", "max", "mean"],
        pooled.iter().map(|((layer, measure), values)| {
            let q = |p| num(quantile(values, p));
            vec![
                layer.to_string(),
                measure.name().to_string(),
                values.len().to_string(),
                q(0.0),
                q(0.25),
                q(0.5),
                q(0.75),
                q(1.0),
                num(mean_std(values).map(|(m, _)| m)),
            ]
        }),
    )
}
