use std::path::PathBuf;

use clap::Args as ClapArgs;
use serde::Serialize;

use prunegcrn::data;
use prunegcrn::error::Result;
use prunegcrn::mask::NodeMask;
use prunegcrn::metrics::{self, MetricSet};
use prunegcrn::model::checkpoint;
use prunegcrn::model::ModelConfig;

use crate::commands::ensure_dir;

#[derive(ClapArgs)]
pub struct Args {
    /// Trained checkpoint to score.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Series CSV of the dataset to evaluate on.
    #[arg(long)]
    series: PathBuf,
    /// Optional coordinates CSV.
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Optional mask CSV overriding the checkpoint's node selection.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Earlier evaluate report to score fidelity/infidelity against: the two
    /// models' per-node mean predictions are compared.
    #[arg(long)]
    fidelity_baseline: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Serialize, serde::Deserialize)]
struct EvaluateReport {
    checkpoint: PathBuf,
    series: PathBuf,
    mask_file: Option<PathBuf>,
    config: ModelConfig,
    selected_nodes: Vec<usize>,
    test: MetricSet,
    per_node_mean_prediction: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    fidelity_vs_baseline: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    infidelity_vs_baseline: Option<f64>,
}

pub fn run(args: Args) -> Result<()> {
    let mut params = checkpoint::load(&args.checkpoint)?;
    let ds = data::load_csv(&args.series, args.coords.as_deref())?;
    let splits = data::split_and_window(&ds, params.config.window, params.config.horizon)?;

    if let Some(mask_path) = &args.mask {
        let mask = NodeMask::read_csv(mask_path, params.config.channels)?;
        params.set_mask_raw(&mask.raw);
    }

    let test = metrics::evaluate_model(&params, &splits.test, &splits.stats)?;
    println!(
        "test MAE {:.4} | RMSE {:.4} | MAPE {:.2}% ({} zero-target terms excluded)",
        test.mae, test.rmse, test.mape, test.mape_excluded
    );

    let per_node_mean_prediction =
        metrics::per_node_mean_prediction(&params, &splits.test, &splits.stats)?;
    let (mut fid, mut infid) = (None, None);
    if let Some(baseline_path) = &args.fidelity_baseline {
        let text = std::fs::read_to_string(baseline_path)
            .map_err(|e| prunegcrn::Error::Data(format!("{}: {e}", baseline_path.display())))?;
        let baseline: EvaluateReport = serde_json::from_str(&text)?;
        fid = Some(metrics::fidelity(
            &baseline.per_node_mean_prediction,
            &per_node_mean_prediction,
        )?);
        infid = Some(metrics::infidelity(
            &baseline.per_node_mean_prediction,
            &per_node_mean_prediction,
        )?);
        println!(
            "fidelity vs baseline {:.4} | infidelity {:.4}",
            fid.unwrap(),
            infid.unwrap()
        );
    }

    ensure_dir(&args.out_dir)?;
    let report = EvaluateReport {
        selected_nodes: params
            .node_mask()
            .map(|m| m.selected_nodes())
            .unwrap_or_default(),
        checkpoint: args.checkpoint,
        series: args.series,
        mask_file: args.mask,
        config: params.config.clone(),
        test,
        per_node_mean_prediction,
        fidelity_vs_baseline: fid,
        infidelity_vs_baseline: infid,
    };
    let path = args.out_dir.join("evaluate_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("{}", path.display());
    Ok(())
}
