//! Multi-run experiment driver shared by the CLI and the acceptance suite:
//! dataset resolution, per-seed training with the chosen pruning method, test
//! evaluation, aggregation, and the compact-model inference benchmark.
//!
//! Every run is internally single-threaded and seeded from
//! (base_seed, run_index), so a report reproduces bit-exactly regardless of
//! how runs were scheduled across the worker pool.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::Real;
use crate::data::{self, SpatioTemporalDataset, SplitWindows, WindowSet};
use crate::error::{Error, Result};
use crate::mask::{self, NodeMask};
use crate::metrics;
use crate::model::infer::Evaluator;
use crate::model::{self, ModelConfig, ModelParams};
use crate::report::{DatasetSpec, ExperimentSpec, PruningMethod, RunEntry, RunReport};
use crate::train::{self, FitOutcome};

pub fn derive_seed(base: u64, run_index: u64) -> u64 {
    let mut z = base.wrapping_add((run_index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Materializes the dataset a spec refers to.
pub fn load_dataset(spec: &DatasetSpec) -> Result<SpatioTemporalDataset> {
    match spec {
        DatasetSpec::Files { series, coords } => data::load_csv(series, coords.as_deref()),
        DatasetSpec::Synthetic {
            nodes,
            steps,
            drivers,
            seed,
        } => Ok(data::synthetic::gen_synthetic(*nodes, *steps, *drivers, *seed)?.0),
    }
}

/// Model config actually used for one run: run seed and the gamma implied by
/// the pruning method.
pub fn resolved_config(spec: &ExperimentSpec, run_index: usize) -> ModelConfig {
    let mut cfg = spec.model.clone();
    cfg.seed = derive_seed(spec.base_seed, run_index as u64);
    cfg.gamma = match spec.pruning.method {
        PruningMethod::Learned => 1.0 - spec.pruning.target_fraction,
        _ => 1.0,
    };
    cfg
}

/// Initial mask for one run under the spec's pruning method.
pub fn initial_mask(
    spec: &ExperimentSpec,
    ds: &SpatioTemporalDataset,
    run_index: usize,
) -> Result<NodeMask> {
    let n = ds.nodes;
    let keep = mask::keep_count(n, spec.pruning.target_fraction);
    match spec.pruning.method {
        PruningMethod::Learned => Ok(NodeMask::all_ones(n, ds.channels)),
        PruningMethod::Random => Ok(data::random_mask(
            n,
            ds.channels,
            keep,
            derive_seed(spec.base_seed, run_index as u64) ^ 0xA5A5_5A5A,
        )),
        PruningMethod::Correlation => {
            Ok(data::correlation_mask(ds, keep, !spec.pruning.signed_correlation)?.mask)
        }
    }
}

fn validate_spec(spec: &ExperimentSpec) -> Result<()> {
    if spec.runs == 0 {
        return Err(Error::Config("field runs: must be >= 1".into()));
    }
    let f = spec.pruning.target_fraction;
    if !(0.0..1.0).contains(&f) {
        return Err(Error::Config(format!(
            "field pruning.target_fraction: must lie in [0, 1), got {f}"
        )));
    }
    spec.model.validate()
}

/// One complete training run: fit, test evaluation, bookkeeping.
pub fn run_single(
    spec: &ExperimentSpec,
    ds: &SpatioTemporalDataset,
    splits: &SplitWindows,
    run_index: usize,
) -> Result<(RunEntry, FitOutcome)> {
    let cfg = resolved_config(spec, run_index);
    let init = initial_mask(spec, ds, run_index)?;
    let started = Instant::now();
    let outcome = train::fit(splits, &cfg, &init)?;
    let wall_time_s = started.elapsed().as_secs_f64();
    let test = metrics::evaluate_model(&outcome.params, &splits.test, &splits.stats)?;
    let final_mask = outcome.final_mask().expect("trained model carries a mask");
    let selected = final_mask.selected_nodes();
    let entry = RunEntry {
        run_index,
        seed: cfg.seed,
        achieved_sparsity: metrics::sparsity(selected.len(), cfg.nodes)?,
        selected_nodes: selected,
        kept_before_snap: outcome.pre_snap_kept,
        best_epoch: outcome.best_epoch,
        stop_epoch: outcome.stop_epoch,
        curve: outcome.curve.clone(),
        wall_time_s,
        parameter_count: outcome.params.parameter_count(),
        peak_rss_kb: crate::report::peak_rss_kb(),
        test,
    };
    Ok((entry, outcome))
}

/// Runs the full experiment across its seeds on a worker pool of the given
/// size, returning the report and each run's trained state (in run order).
pub fn run_experiment(
    spec: &ExperimentSpec,
    workers: usize,
) -> Result<(RunReport, Vec<FitOutcome>)> {
    validate_spec(spec)?;
    let ds = load_dataset(&spec.dataset)?;
    if ds.nodes != spec.model.nodes {
        return Err(Error::Config(format!(
            "field model.nodes: config says {}, dataset has {}",
            spec.model.nodes, ds.nodes
        )));
    }
    let splits = data::split_and_window(&ds, spec.model.window, spec.model.horizon)?;

    let workers = workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<(RunEntry, FitOutcome)>> = pool.install(|| {
        use rayon::prelude::*;
        (0..spec.runs)
            .into_par_iter()
            .map(|idx| run_single(spec, &ds, &splits, idx))
            .collect()
    });

    let mut entries = Vec::with_capacity(spec.runs);
    let mut outcomes = Vec::with_capacity(spec.runs);
    for r in results {
        let (entry, outcome) = r?;
        entries.push(entry);
        outcomes.push(outcome);
    }
    entries.sort_by_key(|e| e.run_index);

    let report = RunReport {
        experiment: spec.clone(),
        aggregate: RunReport::aggregate_from_runs(&entries),
        runs: entries,
    };
    Ok((report, outcomes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub fraction: f64,
    pub kept_nodes: usize,
    pub parameter_count: usize,
    pub peak_activation_elements: usize,
    pub median_inference_s: f64,
    pub repetitions: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

fn time_inference<F: Real>(
    params: &ModelParams,
    windows: &WindowSet,
    repetitions: usize,
) -> Result<f64> {
    let eval = Evaluator::<F>::new(params)?;
    let inputs: Vec<Vec<F>> = (0..windows.count)
        .map(|w| windows.input(w).iter().map(|&v| F::from_f64(v)).collect())
        .collect();
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t0 = Instant::now();
        for input in &inputs {
            std::hint::black_box(eval.forward(input)?);
        }
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Times full test-set inference of the compact model at each pruning
/// fraction. Node selection follows the model's mask raw values (top-k, ties
/// to the lower index), so fresh all-ones weights prune deterministically.
pub fn benchmark_inference(
    params: &ModelParams,
    test_windows: &WindowSet,
    fractions: &[f64],
    repetitions: usize,
    use_f32: bool,
) -> Result<Vec<BenchmarkEntry>> {
    if repetitions == 0 {
        return Err(Error::Config("field repetitions: must be >= 1".into()));
    }
    let base_mask = params
        .node_mask()
        .ok_or_else(|| Error::Data("benchmark needs a model with a mask".into()))?;
    let mut entries = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Domain(format!(
                "pruning fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let keep = mask::keep_count(params.config.nodes, fraction);
        if keep == 0 {
            return Err(Error::Domain(format!(
                "fraction {fraction} would empty the graph"
            )));
        }
        let mut projected = base_mask.clone();
        projected.project_to_exact_k(keep)?;
        let compact = model::compact_rebuild(params, &projected)?;
        let kept_idx = projected.selected_nodes();
        let restricted = test_windows.restrict_nodes(&kept_idx);
        let median_inference_s = if use_f32 {
            time_inference::<f32>(&compact, &restricted, repetitions)?
        } else {
            time_inference::<f64>(&compact, &restricted, repetitions)?
        };
        entries.push(BenchmarkEntry {
            fraction,
            kept_nodes: keep,
            parameter_count: compact.parameter_count(),
            peak_activation_elements: model::measure_activation_elements(
                &compact,
                params.config.batch_size,
            )?,
            median_inference_s,
            repetitions,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::PruningSpec;

    fn small_spec(method: PruningMethod, fraction: f64, runs: usize) -> ExperimentSpec {
        ExperimentSpec {
            dataset: DatasetSpec::Synthetic {
                nodes: 8,
                steps: 300,
                drivers: 2,
                seed: 5,
            },
            model: ModelConfig {
                nodes: 8,
                embed_dim: 3,
                units: 6,
                layers: 1,
                window: 4,
                horizon: 2,
                learning_rate: 0.01,
                max_epochs: 3,
                patience: 3,
                fine_tune_epochs: 1,
                ..ModelConfig::default()
            },
            pruning: PruningSpec {
                method,
                target_fraction: fraction,
                signed_correlation: false,
            },
            runs,
            base_seed: 11,
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, 0));
    }

    #[test]
    fn experiment_runs_and_aggregates() {
        let spec = small_spec(PruningMethod::Random, 0.5, 2);
        let (report, outcomes) = run_experiment(&spec, 2).unwrap();
        assert_eq!(report.runs.len(), 2);
        assert_eq!(outcomes.len(), 2);
        for r in &report.runs {
            assert!(r.test.mae.is_finite());
            assert_eq!(r.selected_nodes.len(), 4);
            assert_eq!(r.achieved_sparsity, 0.5);
        }
        // aggregate recomputable from entries
        let again = RunReport::aggregate_from_runs(&report.runs);
        assert_eq!(report.aggregate.mae, again.mae);
    }

    #[test]
    fn rerun_from_report_matches_bitwise() {
        let spec = small_spec(PruningMethod::Learned, 0.5, 1);
        let (report, _) = run_experiment(&spec, 1).unwrap();
        let ds = load_dataset(&report.experiment.dataset).unwrap();
        let splits = data::split_and_window(
            &ds,
            report.experiment.model.window,
            report.experiment.model.horizon,
        )
        .unwrap();
        let (entry, _) = run_single(&report.experiment, &ds, &splits, 0).unwrap();
        assert_eq!(
            entry.test.mae.to_bits(),
            report.runs[0].test.mae.to_bits(),
            "rerun diverged from report"
        );
    }

    #[test]
    fn workers_do_not_change_results() {
        let spec = small_spec(PruningMethod::Learned, 0.25, 2);
        let (a, _) = run_experiment(&spec, 1).unwrap();
        let (b, _) = run_experiment(&spec, 2).unwrap();
        for (x, y) in a.runs.iter().zip(b.runs.iter()) {
            assert_eq!(x.test.mae.to_bits(), y.test.mae.to_bits());
        }
    }

    #[test]
    fn benchmark_counts_shrink_and_reject_full_pruning() {
        let (ds, _) = data::synthetic::gen_synthetic(12, 200, 3, 2).unwrap();
        let cfg = ModelConfig {
            nodes: 12,
            embed_dim: 3,
            units: 6,
            layers: 1,
            window: 4,
            horizon: 2,
            batch_size: 8,
            ..ModelConfig::default()
        };
        let splits = data::split_and_window(&ds, 4, 2).unwrap();
        let params = ModelParams::init(&cfg, &NodeMask::all_ones(12, 1)).unwrap();
        let entries =
            benchmark_inference(&params, &splits.test, &[0.0, 0.5, 0.75], 3, false).unwrap();
        assert_eq!(entries.len(), 3);
        assert!(entries[0].parameter_count > entries[1].parameter_count);
        assert!(entries[1].parameter_count > entries[2].parameter_count);
        assert!(entries[0].peak_activation_elements > entries[2].peak_activation_elements);

        assert!(benchmark_inference(&params, &splits.test, &[1.0], 3, false).is_err());
    }
}
