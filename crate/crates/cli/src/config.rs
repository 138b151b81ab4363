//! Experiment configuration file: TOML sections for the dataset, model,
//! training knobs, pruning method, and experiment bookkeeping. Every omitted
//! field falls back to the documented default, and the resolved result is
//! echoed verbatim into every report.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use prunegcrn::error::{Error, Result};
use prunegcrn::experiment;
use prunegcrn::graph::AdjacencyKind;
use prunegcrn::model::{GateSupport, ModelConfig, OptimizerKind, ProjectionKind};
use prunegcrn::report::{DatasetSpec, ExperimentSpec, PruningMethod, PruningSpec};

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub pruning: PruningSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub series: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub nodes: usize,
    pub steps: usize,
    pub drivers: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub nodes: Option<usize>,
    pub channels: Option<usize>,
    pub embed_dim: Option<usize>,
    pub units: Option<usize>,
    pub layers: Option<usize>,
    pub window: Option<usize>,
    pub horizon: Option<usize>,
    pub adjacency: Option<AdjacencyKind>,
    pub gate_support: Option<GateSupport>,
    pub projection: Option<ProjectionKind>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub grad_clip: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub clamp_mask_loss: Option<bool>,
    pub exact_k_snap: Option<bool>,
    pub fine_tune_epochs: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PruningSection {
    pub method: Option<String>,
    pub target_fraction: Option<f64>,
    pub signed_correlation: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub runs: Option<usize>,
    pub base_seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// Settings that live beside the experiment spec.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub workers: usize,
    pub out_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl FileConfig {
    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        match (&self.dataset.series, &self.dataset.synthetic) {
            (Some(series), None) => Ok(DatasetSpec::Files {
                series: series.clone(),
                coords: self.dataset.coords.clone(),
            }),
            (None, Some(s)) => Ok(DatasetSpec::Synthetic {
                nodes: s.nodes,
                steps: s.steps,
                drivers: s.drivers,
                seed: s.seed,
            }),
            (Some(_), Some(_)) => Err(Error::Config(
                "field dataset: choose either series or synthetic, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "field dataset: needs series = \"...\" or a synthetic table".into(),
            )),
        }
    }

    /// Resolves the full experiment spec, inferring the node count from the
    /// dataset when the file omits it.
    pub fn resolve(&self) -> Result<(ExperimentSpec, RunSettings)> {
        let dataset = self.dataset_spec()?;
        let nodes = match self.model.nodes {
            Some(n) => n,
            None => experiment::load_dataset(&dataset)?.nodes,
        };
        let defaults = ModelConfig::for_nodes(nodes);
        let model = ModelConfig {
            nodes,
            channels: self.model.channels.unwrap_or(defaults.channels),
            embed_dim: self.model.embed_dim.unwrap_or(defaults.embed_dim),
            units: self.model.units.unwrap_or(defaults.units),
            layers: self.model.layers.unwrap_or(defaults.layers),
            window: self.model.window.unwrap_or(defaults.window),
            horizon: self.model.horizon.unwrap_or(defaults.horizon),
            gamma: defaults.gamma,
            learning_rate: self
                .training
                .learning_rate
                .unwrap_or(defaults.learning_rate),
            batch_size: self.training.batch_size.unwrap_or(defaults.batch_size),
            max_epochs: self.training.max_epochs.unwrap_or(defaults.max_epochs),
            patience: self.training.patience.unwrap_or(defaults.patience),
            seed: 0, // overwritten per run
            grad_clip: self.training.grad_clip.unwrap_or(defaults.grad_clip),
            adjacency: self.model.adjacency.unwrap_or(defaults.adjacency),
            gate_support: self.model.gate_support.unwrap_or(defaults.gate_support),
            clamp_mask_loss: self
                .training
                .clamp_mask_loss
                .unwrap_or(defaults.clamp_mask_loss),
            exact_k_snap: self.training.exact_k_snap.unwrap_or(defaults.exact_k_snap),
            fine_tune_epochs: self
                .training
                .fine_tune_epochs
                .unwrap_or(defaults.fine_tune_epochs),
            optimizer: self.training.optimizer.unwrap_or(defaults.optimizer),
            projection: self.model.projection.unwrap_or(defaults.projection),
        };
        let method = match &self.pruning.method {
            Some(m) => m.parse::<PruningMethod>()?,
            None => PruningMethod::Learned,
        };
        let spec = ExperimentSpec {
            dataset,
            model,
            pruning: PruningSpec {
                method,
                target_fraction: self.pruning.target_fraction.unwrap_or(0.0),
                signed_correlation: self.pruning.signed_correlation.unwrap_or(false),
            },
            runs: self.experiment.runs.unwrap_or(1),
            base_seed: self.experiment.base_seed.unwrap_or(1),
        };
        let settings = RunSettings {
            workers: self.experiment.workers.unwrap_or(1),
            out_dir: self
                .experiment
                .out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("out")),
        };
        Ok((spec, settings))
    }
}
