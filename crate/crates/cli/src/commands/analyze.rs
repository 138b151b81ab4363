use std::path::PathBuf;

use clap::Args as ClapArgs;
use serde::Serialize;

use prunegcrn::data;
use prunegcrn::error::{Error, Result};
use prunegcrn::mask::NodeMask;
use prunegcrn::metrics::{self, ChiSquareTest, UsageFrequency};
use prunegcrn::report::RunReport;
use prunegcrn::spatial::{self, MoranResult, WeightScheme};

use crate::commands::ensure_dir;

#[derive(ClapArgs)]
pub struct Args {
    /// Mask CSV files from one or more trainings.
    #[arg(long, value_delimiter = ',', required = true)]
    masks: Vec<PathBuf>,
    /// Coordinates CSV; required for the spatial outputs.
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Run reports supplying per-node errors for the autocorrelation test.
    #[arg(long, value_delimiter = ',')]
    reports: Vec<PathBuf>,
    /// Distance-graph threshold in km (default: median 2nd-neighbor distance,
    /// which keeps the median degree at 2 or more).
    #[arg(long)]
    distance_km: Option<f64>,
    /// Neighbor count of the KNN graph.
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long, default_value_t = 999)]
    permutations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Normal-approximation p-values instead of permutation tests.
    #[arg(long)]
    analytic_p: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct MoranSection {
    scheme: WeightScheme,
    result: MoranResult,
}

#[derive(Serialize)]
struct AnalysisReport {
    masks: Vec<PathBuf>,
    usage_frequency: UsageFrequency,
    /// Fit of the usage histogram against independent random masks.
    random_profile_chi_square: Option<ChiSquareTest>,
    /// Mean per-node test error across all report runs.
    per_node_mean_error: Option<Vec<f64>>,
    morans_i: Vec<MoranSection>,
    distance_km_used: Option<f64>,
    geojson: Option<PathBuf>,
    notes: Vec<String>,
}

/// Median distance to each node's 2nd-nearest neighbor; a threshold at this
/// value gives at least half the nodes a degree of 2 or more.
fn auto_distance_threshold(coords: &[(f64, f64)]) -> f64 {
    let n = coords.len();
    let mut second: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| spatial::haversine_km(coords[i], coords[j]))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[1.min(d.len() - 1)]
        })
        .collect();
    second.sort_by(|a, b| a.partial_cmp(b).unwrap());
    second[second.len() / 2]
}

pub fn run(args: Args) -> Result<()> {
    ensure_dir(&args.out_dir)?;
    let mut notes = Vec::new();

    let masks: Vec<NodeMask> = args
        .masks
        .iter()
        .map(|p| NodeMask::read_csv(p, 1))
        .collect::<Result<_>>()?;
    let n = masks[0].nodes();
    let usage = metrics::usage_frequency(&masks)?;

    let chi = if masks.len() >= 2 {
        let keep_prob = usage.counts.iter().sum::<usize>() as f64 / (n as f64 * masks.len() as f64);
        match metrics::usage_binomial_chi_square(&usage.histogram, n, keep_prob) {
            Ok(c) => Some(c),
            Err(e) => {
                notes.push(format!("chi-square skipped: {e}"));
                None
            }
        }
    } else {
        None
    };

    // per-node mean error across all runs of all reports
    let per_node_error: Option<Vec<f64>> = if args.reports.is_empty() {
        None
    } else {
        let mut acc = vec![0.0; n];
        let mut runs = 0usize;
        for path in &args.reports {
            let report = RunReport::load(path)?;
            for run in &report.runs {
                if run.test.per_node_mae.len() != n {
                    return Err(Error::Dimension {
                        op: "analyze",
                        left: vec![run.test.per_node_mae.len()],
                        right: vec![n],
                    });
                }
                for (a, e) in acc.iter_mut().zip(&run.test.per_node_mae) {
                    *a += e;
                }
                runs += 1;
            }
        }
        for a in acc.iter_mut() {
            *a /= runs as f64;
        }
        Some(acc)
    };

    let spatial_requested = args.distance_km.is_some() || args.knn_k.is_some();
    let coords = match &args.coords {
        Some(path) => Some(data::load_coords_csv(path, n)?),
        None if spatial_requested => {
            return Err(Error::Data(
                "spatial analysis requested but no coordinates file given".into(),
            ));
        }
        None => {
            notes.push("no coordinates: Moran's I and GeoJSON skipped".into());
            None
        }
    };

    let mut moran_sections = Vec::new();
    let mut distance_used = None;
    let mut geojson_path = None;

    if let Some(coords) = &coords {
        if let Some(errors) = &per_node_error {
            let threshold = args
                .distance_km
                .unwrap_or_else(|| auto_distance_threshold(coords));
            distance_used = Some(threshold);
            let schemes = [
                WeightScheme::Distance {
                    threshold_km: threshold,
                },
                WeightScheme::Knn {
                    k: args.knn_k.unwrap_or(2),
                },
            ];
            for scheme in schemes {
                let weights = spatial::build_weights(coords, scheme, false)?;
                let result = if args.analytic_p {
                    spatial::morans_i_analytic(errors, &weights)?
                } else {
                    spatial::morans_i(errors, &weights, args.permutations, args.seed)?
                };
                moran_sections.push(MoranSection { scheme, result });
            }
        } else {
            notes.push("no reports: Moran's I needs per-node errors, skipped".into());
        }

        // map emission: selection from the first mask, usage across all
        let selected: Vec<bool> = masks[0].binary().iter().map(|&b| b > 0.0).collect();
        let mean_error = per_node_error.clone().unwrap_or_else(|| vec![0.0; n]);
        let gj = spatial::nodes_geojson(coords, &selected, &mean_error, &usage.counts)?;
        let path = args.out_dir.join("nodes.geojson");
        std::fs::write(&path, serde_json::to_string_pretty(&gj)?)?;
        geojson_path = Some(path);
    }

    for section in &moran_sections {
        println!(
            "Moran's I ({:?}): I = {:.4}, p = {:.4}",
            section.scheme, section.result.i, section.result.p_value
        );
    }
    println!(
        "usage: {} node(s) kept in all {} runs, {} in >=90%, {} in >=50%",
        usage.kept_in_all, usage.runs, usage.kept_in_90pct, usage.kept_in_half
    );

    let report = AnalysisReport {
        masks: args.masks.clone(),
        usage_frequency: usage,
        random_profile_chi_square: chi,
        per_node_mean_error: per_node_error,
        morans_i: moran_sections,
        distance_km_used: distance_used,
        geojson: geojson_path,
        notes,
    };
    let path = args.out_dir.join("analysis_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("{}", path.display());
    Ok(())
}
