//! Prediction-quality metrics (denormalized space), sparsity, the post-hoc
//! fidelity utilities, and node-usage frequency across repeated trainings.

use serde::{Deserialize, Serialize};

use crate::data::{NormStats, WindowSet};
use crate::error::{Error, Result};
use crate::mask::NodeMask;
use crate::model::infer::Evaluator;
use crate::model::ModelParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub rmse: f64,
    /// Percentage value (30.0 means 30%).
    pub mape: f64,
    /// Zero-target terms excluded from the MAPE sum.
    pub mape_excluded: usize,
    pub per_node_mae: Vec<f64>,
}

/// Elementwise metrics between aligned node-major blocks. `pred` and
/// `target` are sequences of n×horizon blocks.
pub fn metrics(pred: &[f64], target: &[f64], nodes: usize, horizon: usize) -> Result<MetricSet> {
    if pred.is_empty() {
        return Err(Error::Domain("metrics over empty input".into()));
    }
    if pred.len() != target.len() || pred.len() % (nodes * horizon) != 0 {
        return Err(Error::Dimension {
            op: "metrics",
            left: vec![pred.len()],
            right: vec![target.len(), nodes, horizon],
        });
    }
    let block = nodes * horizon;
    let blocks = pred.len() / block;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut ape_sum = 0.0;
    let mut ape_count = 0usize;
    let mut excluded = 0usize;
    let mut per_node = vec![0.0; nodes];
    for b in 0..blocks {
        for i in 0..nodes {
            for t in 0..horizon {
                let idx = b * block + i * horizon + t;
                let err = target[idx] - pred[idx];
                abs_sum += err.abs();
                sq_sum += err * err;
                per_node[i] += err.abs();
                if target[idx] == 0.0 {
                    excluded += 1;
                } else {
                    ape_sum += (err / target[idx]).abs();
                    ape_count += 1;
                }
            }
        }
    }
    let count = pred.len() as f64;
    let per_node_mae: Vec<f64> = per_node
        .into_iter()
        .map(|s| s / (blocks * horizon) as f64)
        .collect();
    Ok(MetricSet {
        mae: abs_sum / count,
        rmse: (sq_sum / count).sqrt(),
        mape: if ape_count == 0 {
            0.0
        } else {
            100.0 * ape_sum / ape_count as f64
        },
        mape_excluded: excluded,
        per_node_mae,
    })
}

/// Runs the model over every window of a set and scores it in denormalized
/// space.
pub fn evaluate_model(
    params: &ModelParams,
    windows: &WindowSet,
    stats: &NormStats,
) -> Result<MetricSet> {
    if windows.count == 0 {
        return Err(Error::Domain("evaluation over an empty window set".into()));
    }
    let eval = Evaluator::<f64>::new(params)?;
    let block = windows.nodes * windows.horizon;
    let mut pred = Vec::with_capacity(windows.count * block);
    let mut target = Vec::with_capacity(windows.count * block);
    for w in 0..windows.count {
        let p = eval.forward(windows.input(w))?;
        pred.extend(p.iter().map(|&z| stats.denormalize(z)));
        target.extend(
            windows
                .target_node_major(w)
                .iter()
                .map(|&z| stats.denormalize(z)),
        );
    }
    metrics(&pred, &target, windows.nodes, windows.horizon)
}

/// Mean denormalized prediction per node over a window set, the per-node
/// output vector the fidelity utilities compare.
pub fn per_node_mean_prediction(
    params: &ModelParams,
    windows: &WindowSet,
    stats: &NormStats,
) -> Result<Vec<f64>> {
    if windows.count == 0 {
        return Err(Error::Domain("prediction over an empty window set".into()));
    }
    let eval = Evaluator::<f64>::new(params)?;
    let (n, h) = (windows.nodes, windows.horizon);
    let mut acc = vec![0.0; n];
    for w in 0..windows.count {
        let p = eval.forward(windows.input(w))?;
        for i in 0..n {
            for t in 0..h {
                acc[i] += stats.denormalize(p[i * h + t]);
            }
        }
    }
    for a in acc.iter_mut() {
        *a /= (windows.count * h) as f64;
    }
    Ok(acc)
}

/// 1 − kept/total.
pub fn sparsity(kept: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Domain("sparsity with zero total".into()));
    }
    if kept > total {
        return Err(Error::Domain(format!("kept {kept} exceeds total {total}")));
    }
    Ok(1.0 - kept as f64 / total as f64)
}

/// Mean absolute per-node prediction change between a model on the original
/// graph and on a graph with its most important elements removed.
pub fn fidelity(full: &[f64], reduced: &[f64]) -> Result<f64> {
    mean_absolute_gap(full, reduced, "fidelity")
}

/// As [`fidelity`], against the graph keeping only the important elements.
pub fn infidelity(full: &[f64], reduced: &[f64]) -> Result<f64> {
    mean_absolute_gap(full, reduced, "infidelity")
}

fn mean_absolute_gap(a: &[f64], b: &[f64], op: &'static str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op,
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Err(Error::Domain(format!("{op} over empty input")));
    }
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsageFrequency {
    pub runs: usize,
    /// Runs keeping each node, length n.
    pub counts: Vec<usize>,
    /// histogram[c] = nodes kept by exactly c runs, length runs+1.
    pub histogram: Vec<usize>,
    pub kept_in_all: usize,
    pub kept_in_90pct: usize,
    pub kept_in_half: usize,
}

/// Node-usage counts across the masks of repeated trainings.
pub fn usage_frequency(masks: &[NodeMask]) -> Result<UsageFrequency> {
    let runs = masks.len();
    if runs == 0 {
        return Err(Error::Domain(
            "usage_frequency needs at least one mask".into(),
        ));
    }
    let n = masks[0].nodes();
    for m in masks {
        if m.nodes() != n {
            return Err(Error::Dimension {
                op: "usage_frequency",
                left: vec![m.nodes()],
                right: vec![n],
            });
        }
    }
    let mut counts = vec![0usize; n];
    for m in masks {
        for i in m.selected_nodes() {
            counts[i] += 1;
        }
    }
    let mut histogram = vec![0usize; runs + 1];
    for &c in &counts {
        histogram[c] += 1;
    }
    let at_least = |q: f64| -> usize {
        let threshold = (q * runs as f64).ceil() as usize;
        counts.iter().filter(|&&c| c >= threshold).count()
    };
    Ok(UsageFrequency {
        runs,
        counts: counts.clone(),
        histogram,
        kept_in_all: counts.iter().filter(|&&c| c == runs).count(),
        kept_in_90pct: at_least(0.9),
        kept_in_half: at_least(0.5),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Chi-square fit of an observed usage histogram against the binomial
/// profile of independent random masks with the given keep probability.
/// Adjacent bins pool until every expected count reaches 1.
pub fn usage_binomial_chi_square(
    histogram: &[usize],
    nodes: usize,
    keep_prob: f64,
) -> Result<ChiSquareTest> {
    if histogram.is_empty() || nodes == 0 {
        return Err(Error::Domain("empty histogram".into()));
    }
    let runs = histogram.len() - 1;
    let binom = |c: usize| -> f64 {
        let mut log_c = 0.0;
        for i in 0..c {
            log_c += ((runs - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        (log_c + c as f64 * keep_prob.ln() + (runs - c) as f64 * (1.0 - keep_prob).ln()).exp()
    };
    let expected: Vec<f64> = (0..=runs).map(|c| nodes as f64 * binom(c)).collect();

    // pool adjacent bins until each pooled expectation is at least 1
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for (o, e) in histogram.iter().zip(expected.iter()) {
        acc_o += *o as f64;
        acc_e += *e;
        if acc_e >= 1.0 {
            pooled.push((acc_o, acc_e));
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += acc_o;
                last.1 += acc_e;
            }
            None => pooled.push((acc_o, acc_e.max(1e-12))),
        }
    }
    if pooled.len() < 2 {
        return Err(Error::Domain(
            "histogram pools to a single bin; chi-square undefined".into(),
        ));
    }
    let statistic: f64 = pooled.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = pooled.len() - 1;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: crate::stats::chi_square_sf(statistic, dof as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_all_zero() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        let m = metrics(&v, &v, 2, 2).unwrap();
        assert_eq!((m.mae, m.rmse, m.mape), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_computed_example() {
        // y = [10, 10], ŷ = [8, 14] → MAE 3, RMSE √10, MAPE 30%
        let m = metrics(&[8.0, 14.0], &[10.0, 10.0], 1, 2).unwrap();
        assert_eq!(m.mae, 3.0);
        assert!((m.rmse - 10f64.sqrt()).abs() < 1e-12);
        assert!((m.mape - 30.0).abs() < 1e-12);
        assert_eq!(m.mape_excluded, 0);
    }

    #[test]
    fn zero_targets_excluded_from_mape() {
        let m = metrics(&[1.0, 5.0], &[0.0, 4.0], 1, 2).unwrap();
        assert_eq!(m.mape_excluded, 1);
        assert!((m.mape - 25.0).abs() < 1e-12);
    }

    #[test]
    fn metric_scaling_under_normalization() {
        // MAE and RMSE scale by sigma between normalized and denormalized views
        let stats = NormStats {
            mu: 50.0,
            sigma: 7.0,
        };
        let pred_n = vec![0.1, -0.4, 0.7, 0.2];
        let targ_n = vec![0.0, 0.2, 0.5, -0.1];
        let m_norm = metrics(&pred_n, &targ_n, 2, 2).unwrap();
        let pred_d: Vec<f64> = pred_n.iter().map(|&z| stats.denormalize(z)).collect();
        let targ_d: Vec<f64> = targ_n.iter().map(|&z| stats.denormalize(z)).collect();
        let m_den = metrics(&pred_d, &targ_d, 2, 2).unwrap();
        assert!((m_den.mae - stats.sigma * m_norm.mae).abs() < 1e-12);
        assert!((m_den.rmse - stats.sigma * m_norm.rmse).abs() < 1e-12);
    }

    #[test]
    fn sparsity_cases() {
        assert_eq!(sparsity(10, 10).unwrap(), 0.0);
        assert_eq!(sparsity(0, 10).unwrap(), 1.0);
        assert!((sparsity(16, 325).unwrap() - (1.0 - 16.0 / 325.0)).abs() < 1e-12);
        assert!(sparsity(1, 0).is_err());
    }

    #[test]
    fn fidelity_cases() {
        assert_eq!(fidelity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // +2 and −2 differences average to 2 under absolute values
        assert_eq!(fidelity(&[3.0, 1.0], &[1.0, 3.0]).unwrap(), 2.0);
        assert!(fidelity(&[1.0], &[1.0, 2.0]).is_err());

        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
        let want = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 30.0;
        assert_eq!(infidelity(&a, &b).unwrap(), want);
    }

    #[test]
    fn usage_frequency_identical_and_single() {
        let m = NodeMask::fixed_from_kept(4, 1, &[0, 2]);
        let uf = usage_frequency(&vec![m.clone(); 5]).unwrap();
        assert_eq!(uf.counts, vec![5, 0, 5, 0]);
        assert_eq!(uf.histogram, vec![2, 0, 0, 0, 0, 2]);
        assert_eq!(uf.kept_in_all, 2);

        let single = usage_frequency(&[m]).unwrap();
        assert!(single.counts.iter().all(|&c| c <= 1));
        assert_eq!(single.histogram.iter().sum::<usize>(), 4);
    }

    #[test]
    fn usage_histogram_mass_equals_node_count() {
        let masks: Vec<NodeMask> = (0..10)
            .map(|s| crate::data::random_mask(12, 1, 9, s))
            .collect();
        let uf = usage_frequency(&masks).unwrap();
        assert_eq!(uf.histogram.iter().sum::<usize>(), 12);
    }

    #[test]
    fn usage_frequency_rejects_mixed_sizes() {
        let a = NodeMask::fixed_from_kept(4, 1, &[0]);
        let b = NodeMask::fixed_from_kept(5, 1, &[0]);
        assert!(usage_frequency(&[a, b]).is_err());
    }

    #[test]
    fn random_masks_fit_binomial_profile() {
        // 10 random masks at 25% pruning over many nodes: histogram mean ≈ 7.5
        let masks: Vec<NodeMask> = (0..10)
            .map(|s| crate::data::random_mask(400, 1, 300, 1000 + s))
            .collect();
        let uf = usage_frequency(&masks).unwrap();
        let mean: f64 = uf
            .histogram
            .iter()
            .enumerate()
            .map(|(c, &h)| c as f64 * h as f64)
            .sum::<f64>()
            / 400.0;
        assert!((mean - 7.5).abs() < 0.35, "histogram mean {mean}");
        let chi = usage_binomial_chi_square(&uf.histogram, 400, 0.75).unwrap();
        assert!(
            chi.p_value > 0.01,
            "random masks flagged: p = {}",
            chi.p_value
        );
    }

    #[test]
    fn degenerate_histogram_is_flagged() {
        // all nodes kept in all runs is wildly non-binomial at keep_prob 0.2
        let mut hist = vec![0usize; 11];
        hist[10] = 20;
        let chi = usage_binomial_chi_square(&hist, 20, 0.2).unwrap();
        assert!(chi.p_value < 1e-6);
    }
}
