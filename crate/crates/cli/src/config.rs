//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use neuroinfo::ablation::{default_step, AblationPlan, Direction, Ranking, Scope, Strategy};
use neuroinfo::infotheory::Measure;
use neuroinfo::nn::{Activation, Regularizer, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    #[serde(rename = "fashionmnist")]
    FashionMnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar10 {
        train_batches: Vec<PathBuf>,
        test_batches: Vec<PathBuf>,
    },
}

impl DatasetConfig {
    pub fn input_dim(&self) -> usize {
        match self {
            DatasetConfig::Mnist { .. } | DatasetConfig::FashionMnist { .. } => 784,
            DatasetConfig::Cifar10 { .. } => 3072,
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        match self {
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
            } => vec![train_images, train_labels, test_images, test_labels],
            DatasetConfig::Cifar10 {
                train_batches,
                test_batches,
            } => train_batches.iter().chain(test_batches).map(PathBuf::as_path).collect(),
        }
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
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
            } => vec![train_images, train_labels, test_images, test_labels],
            DatasetConfig::Cifar10 {
                train_batches,
                test_batches,
            } => train_batches.iter_mut().chain(test_batches.iter_mut()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub regularizer: Regularizer,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
}

/// Entry of `measures` in a plan: an importance measure or `random`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RankingSource {
    Measure(Measure),
    Random,
}

impl TryFrom<String> for RankingSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        if s == "random" {
            return Ok(RankingSource::Random);
        }
        s.parse()
            .map(RankingSource::Measure)
            .map_err(|e: neuroinfo::Error| e.to_string())
    }
}

impl From<RankingSource> for String {
    fn from(r: RankingSource) -> String {
        match r {
            RankingSource::Measure(m) => m.name().to_string(),
            RankingSource::Random => "random".to_string(),
        }
    }
}

/// A family of ablation runs sharing scope, strategy and step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub scope: Scope,
    pub measures: Vec<RankingSource>,
    #[serde(default = "defaults::directions")]
    pub directions: Vec<Direction>,
    #[serde(default)]
    pub strategy: Strategy,
    /// Defaults to 1 for scopes of up to 100 neurons and 5 beyond.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub replicates: usize,
    pub architecture: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "defaults::bins")]
    pub bins: usize,
    #[serde(default = "defaults::validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "defaults::yes")]
    pub compute_js: bool,
    #[serde(default)]
    pub dump_histograms: bool,
    pub dataset: DatasetConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub plans: Vec<PlanConfig>,
}

mod defaults {
    use neuroinfo::ablation::Direction;

    pub fn learning_rate() -> f64 {
        0.001
    }
    pub fn momentum() -> f64 {
        0.01
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn max_epochs() -> usize {
        30
    }
    pub fn patience() -> usize {
        3
    }
    pub fn bins() -> usize {
        2
    }
    pub fn validation_fraction() -> f64 {
        0.2
    }
    pub fn yes() -> bool {
        true
    }
    pub fn directions() -> Vec<Direction> {
        vec![Direction::LowestFirst, Direction::HighestFirst]
    }
}

impl ExperimentConfig {
    /// Parses a configuration; relative paths are taken relative to
    /// `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for p in cfg.dataset.paths_mut().into_iter().chain([&mut cfg.output_dir]) {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.architecture.len() < 3 {
            return bad(format!(
                "architecture {:?} needs input, at least one hidden layer, and output sizes",
                self.architecture
            ));
        }
        if self.architecture[0] != self.dataset.input_dim() {
            return bad(format!(
                "architecture input size {} does not match the dataset dimension {}",
                self.architecture[0],
                self.dataset.input_dim()
            ));
        }
        if *self.architecture.last().expect("checked") != neuroinfo::datasets::NUM_CLASSES {
            return bad(format!(
                "architecture must end in {} outputs",
                neuroinfo::datasets::NUM_CLASSES
            ));
        }
        if self.activation == Activation::Linear {
            return bad("activation must be relu or sigmoid".into());
        }
        if self.bins < 2 {
            return bad(format!("bins must be at least 2, got {}", self.bins));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            ));
        }
        if let DatasetConfig::Cifar10 {
            train_batches,
            test_batches,
        } = &self.dataset
        {
            if train_batches.is_empty() || test_batches.is_empty() {
                return bad("cifar10 needs at least one train and one test batch".into());
            }
        }
        self.train_config(0)
            .validate(self.architecture.len() - 2)
            .map_err(|e| CliError::Config(e.to_string()))?;
        for p in &self.plans {
            if p.measures.is_empty() {
                return bad("every plan needs at least one entry in measures".into());
            }
            if p.step == Some(0) {
                return bad("plan step must be at least 1".into());
            }
            let ranked = p.measures.iter().any(|m| matches!(m, RankingSource::Measure(_)));
            if ranked && p.directions.is_empty() {
                return bad("plans ranking by a measure need at least one direction".into());
            }
            if p.measures
                .contains(&RankingSource::Measure(Measure::JsSubsetSeparation))
                && !self.compute_js
            {
                return bad("ranking by js requires compute_js = true".into());
            }
        }
        Ok(())
    }

    /// Fails if any dataset file is missing.
    pub fn check_dataset_paths(&self) -> CliResult<()> {
        let missing: Vec<String> = self
            .dataset
            .paths()
            .into_iter()
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "dataset files not found: {}",
                missing.join(", ")
            )))
        }
    }

    /// Seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_add(r as u64)
    }

    pub fn train_config(&self, replicate: usize) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            regularizer: t.regularizer.clone(),
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: self.replicate_seed(replicate),
        }
    }

    /// Every concrete ablation run described by `plans`.
    pub fn expand_plans(&self) -> Vec<AblationPlan> {
        let hidden = &self.architecture[1..self.architecture.len() - 1];
        let mut out = Vec::new();
        for p in &self.plans {
            let scope_size = match p.scope {
                Scope::WholeNetwork => hidden.iter().sum(),
                Scope::Layer(l) => hidden.get(l.wrapping_sub(1)).copied().unwrap_or(0),
            };
            let step = p.step.unwrap_or_else(|| default_step(scope_size));
            for source in &p.measures {
                let rankings: Vec<Ranking> = match *source {
                    RankingSource::Random => vec![Ranking::Random { seed: self.seed }],
                    RankingSource::Measure(measure) => p
                        .directions
                        .iter()
                        .map(|&direction| Ranking::Measure { measure, direction })
                        .collect(),
                };
                for ranking in rankings {
                    let plan = AblationPlan {
                        scope: p.scope,
                        ranking,
                        strategy: p.strategy,
                        step,
                    };
                    if !out.contains(&plan) {
                        out.push(plan);
                    }
                }
            }
        }
        out
    }
}
