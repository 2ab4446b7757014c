mod ablate;
mod measure;
mod report;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::ThreadPool;
use serde::Serialize;

use neuroinfo::datasets::{load_cifar10, load_idx, split, Dataset, SplitSpec, SplitTag};
use neuroinfo::nn::{checkpoint, MlpModel};

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub use ablate::{ablate, AblateReport};
pub use measure::{measure, MEASURES_HEADER};
pub use report::{report, REPORT_HEADER};
pub use train::{train, ReplicateOutcome, TrainReport};

/// File locations under an experiment's output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            root: cfg.output_dir.clone(),
        }
    }

    pub fn checkpoint(&self, replicate: usize) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("replicate_{replicate}.nimlp"))
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }

    pub fn train_summary(&self) -> PathBuf {
        self.root.join("train_summary.csv")
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn measures(&self, replicate: usize) -> PathBuf {
        self.root.join("measures").join(format!("replicate_{replicate}.csv"))
    }

    pub fn specific_information(&self, replicate: usize) -> PathBuf {
        self.root
            .join("measures")
            .join(format!("replicate_{replicate}_specific.csv"))
    }

    pub fn histograms(&self, replicate: usize) -> PathBuf {
        self.root
            .join("measures")
            .join(format!("replicate_{replicate}_histograms.csv"))
    }

    pub fn distribution(&self) -> PathBuf {
        self.root.join("measures").join("distribution.csv")
    }

    pub fn curves_dir(&self) -> PathBuf {
        self.root.join("curves")
    }

    pub fn curve(&self, label: &str) -> PathBuf {
        self.curves_dir().join(format!("{label}.csv"))
    }

    pub fn curve_replicates(&self, label: &str) -> PathBuf {
        self.curves_dir().join(format!("{label}_replicates.csv"))
    }

    pub fn ablation_manifest(&self) -> PathBuf {
        self.curves_dir().join("manifest.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }
}

/// Training, validation and test partitions of the configured dataset.
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

pub fn load_splits(cfg: &ExperimentConfig) -> CliResult<Splits> {
    cfg.check_dataset_paths()?;
    let (full, test) = match &cfg.dataset {
        DatasetConfig::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
        }
        | DatasetConfig::FashionMnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(train_images, train_labels)?,
            load_idx(test_images, test_labels)?,
        ),
        DatasetConfig::Cifar10 {
            train_batches,
            test_batches,
        } => (load_cifar10(train_batches)?, load_cifar10(test_batches)?),
    };
    let (train, validation) = split(
        &full,
        &SplitSpec {
            validation_fraction: cfg.validation_fraction,
            seed: cfg.seed,
        },
    )?;
    Ok(Splits {
        train,
        validation,
        test: test.with_split_tag(SplitTag::Test),
    })
}

/// Loads every replicate checkpoint and checks it against the configured
/// architecture.
pub fn load_checkpoints(cfg: &ExperimentConfig) -> CliResult<Vec<MlpModel>> {
    let layout = Layout::new(cfg);
    (0..cfg.replicates)
        .map(|r| {
            let path = layout.checkpoint(r);
            let model = checkpoint::load(&path)?;
            if model.layer_sizes() != cfg.architecture.as_slice() || model.activation() != cfg.activation {
                return Err(neuroinfo::Error::Consistency(format!(
                    "{}: checkpoint is {:?} {}, configuration says {:?} {}",
                    path.display(),
                    model.layer_sizes(),
                    model.activation(),
                    cfg.architecture,
                    cfg.activation
                ))
                .into());
            }
            Ok(model)
        })
        .collect()
}

pub fn thread_pool(workers: usize) -> CliResult<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))
}

pub(crate) fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

pub(crate) fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))
}

/// Writes `header` and `rows` to a CSV file.
pub(crate) fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> CliResult<()>
where
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
    I: IntoIterator<Item = R>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Formats a float for CSV output; `None` becomes an empty field.
pub(crate) fn num(v: impl Into<Option<f64>>) -> String {
    v.into().map(|v| v.to_string()).unwrap_or_default()
}
