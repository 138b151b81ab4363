//! Run reports: the complete resolved experiment description plus per-run
//! results and cross-run aggregates, serialized as pretty JSON so reports are
//! human-diffable and round-trip losslessly. A report alone suffices to
//! re-run its experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::model::ModelConfig;
use crate::train::EpochPoint;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSpec {
    Files {
        series: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        coords: Option<PathBuf>,
    },
    Synthetic {
        nodes: usize,
        steps: usize,
        drivers: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PruningMethod {
    #[default]
    Learned,
    Random,
    Correlation,
}

impl std::str::FromStr for PruningMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<PruningMethod> {
        match s.trim().to_ascii_lowercase().as_str() {
            "learned" => Ok(PruningMethod::Learned),
            "random" => Ok(PruningMethod::Random),
            "correlation" => Ok(PruningMethod::Correlation),
            other => Err(Error::Config(format!(
                "unknown pruning method {other:?} (expected learned|random|correlation)"
            ))),
        }
    }
}

impl std::fmt::Display for PruningMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PruningMethod::Learned => "learned",
            PruningMethod::Random => "random",
            PruningMethod::Correlation => "correlation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PruningSpec {
    pub method: PruningMethod,
    pub target_fraction: f64,
    /// Use the signed mean correlation instead of the absolute mean for the
    /// correlation baseline.
    #[serde(default)]
    pub signed_correlation: bool,
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub pruning: PruningSpec,
    pub runs: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_index: usize,
    pub seed: u64,
    pub test: MetricSet,
    pub selected_nodes: Vec<usize>,
    pub achieved_sparsity: f64,
    pub kept_before_snap: usize,
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub curve: Vec<EpochPoint>,
    pub wall_time_s: f64,
    pub parameter_count: usize,
    /// Best-effort process peak RSS in kilobytes at the end of the run.
    pub peak_rss_kb: Option<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n−1); zero for a single run.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mae: MeanStd,
    pub rmse: MeanStd,
    pub mape: MeanStd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: ExperimentSpec,
    pub runs: Vec<RunEntry>,
    pub aggregate: Aggregate,
}

impl RunReport {
    pub fn aggregate_from_runs(runs: &[RunEntry]) -> Aggregate {
        Aggregate {
            mae: mean_std(&runs.iter().map(|r| r.test.mae).collect::<Vec<_>>()),
            rmse: mean_std(&runs.iter().map(|r| r.test.rmse).collect::<Vec<_>>()),
            mape: mean_std(&runs.iter().map(|r| r.test.mape).collect::<Vec<_>>()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunReport> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Best-effort process peak resident set size (VmHWM, kilobytes).
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmHWM:") {
            return rest.trim().trim_end_matches(" kB").trim().parse().ok();
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_computation() {
        let ms = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ms.mean, 2.5);
        // sample variance = (2.25+0.25+0.25+2.25)/3
        assert!((ms.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]).std, 0.0);
    }

    #[test]
    fn report_roundtrip_is_lossless() {
        let spec = ExperimentSpec {
            dataset: DatasetSpec::Synthetic {
                nodes: 20,
                steps: 4000,
                drivers: 4,
                seed: 7,
            },
            model: ModelConfig::for_nodes(20),
            pruning: PruningSpec {
                method: PruningMethod::Learned,
                target_fraction: 0.8,
                signed_correlation: false,
            },
            runs: 2,
            base_seed: 42,
        };
        let runs = vec![RunEntry {
            run_index: 0,
            seed: 42,
            test: crate::metrics::MetricSet {
                mae: 0.123456789012345,
                rmse: 0.23456789,
                mape: 12.5,
                mape_excluded: 3,
                per_node_mae: vec![0.1, 0.2],
            },
            selected_nodes: vec![1, 5, 9],
            achieved_sparsity: 0.8,
            kept_before_snap: 4,
            best_epoch: 7,
            stop_epoch: 12,
            curve: vec![EpochPoint {
                epoch: 0,
                train_loss: 1.5,
                val_mae: 2.5,
                kept_nodes: 4,
            }],
            wall_time_s: 3.25,
            parameter_count: 1234,
            peak_rss_kb: Some(10000),
        }];
        let report = RunReport {
            aggregate: RunReport::aggregate_from_runs(&runs),
            experiment: spec,
            runs,
        };
        let dir = std::env::temp_dir().join(format!("report_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.json");
        report.save(&path).unwrap();
        let back = RunReport::load(&path).unwrap();
        assert_eq!(back.experiment, report.experiment);
        assert_eq!(
            back.runs[0].test.mae.to_bits(),
            report.runs[0].test.mae.to_bits()
        );
        assert_eq!(back.aggregate.mae, report.aggregate.mae);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rss_is_best_effort() {
        // VmHWM may be absent (containers); when present it must parse > 0
        if let Some(kb) = peak_rss_kb() {
            assert!(kb > 0);
        }
    }
}
