use std::io::Write;

use clap::Args as ClapArgs;
use serde::Serialize;

use prunegcrn::error::Result;
use prunegcrn::experiment;
use prunegcrn::report::{PruningMethod, RunReport};

use crate::commands::ensure_dir;
use crate::config;

#[derive(ClapArgs)]
pub struct Args {
    #[command(flatten)]
    common: crate::CommonArgs,
    /// Pruning fractions to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.95])]
    fractions: Vec<f64>,
    /// Pruning methods to compare.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["learned".to_string(), "random".to_string(), "correlation".to_string()])]
    methods: Vec<String>,
}

#[derive(Serialize)]
struct CompareReport {
    fractions: Vec<f64>,
    methods: Vec<String>,
    /// One full report per (method, fraction) cell, method-major.
    cells: Vec<RunReport>,
}

pub fn run(args: Args) -> Result<()> {
    let file = config::load(&args.common.config)?;
    let (mut spec, mut settings) = file.resolve()?;
    if let Some(seed) = args.common.seed {
        spec.base_seed = seed;
    }
    if let Some(dir) = args.common.out_dir {
        settings.out_dir = dir;
    }
    if let Some(w) = args.common.workers {
        settings.workers = w;
    }
    ensure_dir(&settings.out_dir)?;

    let methods: Vec<PruningMethod> = args
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for method in &methods {
        for &fraction in &args.fractions {
            let mut cell_spec = spec.clone();
            cell_spec.pruning.method = *method;
            cell_spec.pruning.target_fraction = fraction;
            let (report, _) = experiment::run_experiment(&cell_spec, settings.workers)?;
            println!(
                "{method} @ {:.0}%: MAE {:.4} ± {:.4}",
                fraction * 100.0,
                report.aggregate.mae.mean,
                report.aggregate.mae.std
            );
            cells.push(report);
        }
    }

    // Grid CSV: |methods|·3 metric rows × |fractions| columns.
    let grid_path = settings.out_dir.join("comparison.csv");
    let mut grid = std::io::BufWriter::new(std::fs::File::create(&grid_path)?);
    let header: Vec<String> = args
        .fractions
        .iter()
        .map(|f| format!("{:.0}%", f * 100.0))
        .collect();
    writeln!(grid, "method,metric,{}", header.join(","))?;
    for (mi, method) in methods.iter().enumerate() {
        for metric in ["mae", "rmse", "mape"] {
            let mut row = vec![method.to_string(), metric.to_string()];
            for fi in 0..args.fractions.len() {
                let agg = &cells[mi * args.fractions.len() + fi].aggregate;
                let ms = match metric {
                    "mae" => agg.mae,
                    "rmse" => agg.rmse,
                    _ => agg.mape,
                };
                row.push(format!("{:.4}±{:.4}", ms.mean, ms.std));
            }
            writeln!(grid, "{}", row.join(","))?;
        }
    }
    grid.flush()?;

    let report = CompareReport {
        fractions: args.fractions.clone(),
        methods: args.methods.clone(),
        cells,
    };
    let report_path = settings.out_dir.join("compare_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    println!("{}", grid_path.display());
    println!("{}", report_path.display());
    Ok(())
}
