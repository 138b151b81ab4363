use std::io::Write;
use std::path::PathBuf;

use clap::Args as ClapArgs;
use serde::Serialize;

use prunegcrn::data;
use prunegcrn::error::Result;
use prunegcrn::experiment::{self, BenchmarkEntry};
use prunegcrn::mask::NodeMask;
use prunegcrn::model::{checkpoint, ModelParams};

use crate::commands::ensure_dir;
use crate::config;

#[derive(ClapArgs)]
pub struct Args {
    #[command(flatten)]
    common: crate::CommonArgs,
    /// Pruning fractions to benchmark (1.0 is rejected: empty graph).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.95])]
    fractions: Vec<f64>,
    /// Wall-clock repetitions per fraction; the median is reported.
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Run inference in f32 instead of f64.
    #[arg(long)]
    f32: bool,
    /// Use a trained checkpoint's mask and weights (timing itself does not
    /// need trained weights).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchmarkReport {
    precision: &'static str,
    repetitions: usize,
    entries: Vec<BenchmarkEntry>,
}

pub fn run(args: Args) -> Result<()> {
    let file = config::load(&args.common.config)?;
    let (spec, mut settings) = file.resolve()?;
    if let Some(dir) = args.common.out_dir {
        settings.out_dir = dir;
    }
    ensure_dir(&settings.out_dir)?;

    let ds = experiment::load_dataset(&spec.dataset)?;
    let splits = data::split_and_window(&ds, spec.model.window, spec.model.horizon)?;
    let params = match &args.checkpoint {
        Some(path) => checkpoint::load(path)?,
        None => {
            let mut cfg = spec.model.clone();
            cfg.seed = args.common.seed.unwrap_or(spec.base_seed);
            ModelParams::init(&cfg, &NodeMask::all_ones(cfg.nodes, cfg.channels))?
        }
    };

    let entries = experiment::benchmark_inference(
        &params,
        &splits.test,
        &args.fractions,
        args.repetitions,
        args.f32,
    )?;

    let csv_path = settings.out_dir.join("benchmark.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        csv,
        "fraction,kept_nodes,parameter_count,peak_activation_elements,median_inference_s"
    )?;
    for e in &entries {
        writeln!(
            csv,
            "{},{},{},{},{:.6}",
            e.fraction,
            e.kept_nodes,
            e.parameter_count,
            e.peak_activation_elements,
            e.median_inference_s
        )?;
        println!(
            "{:>5.0}% pruned | {:>5} nodes | {:>9} params | {:>12} activations | {:.4}s",
            e.fraction * 100.0,
            e.kept_nodes,
            e.parameter_count,
            e.peak_activation_elements,
            e.median_inference_s
        );
    }
    csv.flush()?;

    let report = BenchmarkReport {
        precision: if args.f32 { "f32" } else { "f64" },
        repetitions: args.repetitions,
        entries,
    };
    let report_path = settings.out_dir.join("benchmark_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    println!("{}", csv_path.display());
    println!("{}", report_path.display());
    Ok(())
}
