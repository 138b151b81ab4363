use std::path::PathBuf;

use clap::Args as ClapArgs;

use prunegcrn::error::Result;
use prunegcrn::experiment;
use prunegcrn::model::checkpoint;

use crate::commands::ensure_dir;
use crate::config;

#[derive(ClapArgs)]
pub struct Args {
    #[command(flatten)]
    common: crate::CommonArgs,
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

    let (report, outcomes) = experiment::run_experiment(&spec, settings.workers)?;
    for (idx, outcome) in outcomes.iter().enumerate() {
        let ckpt = settings.out_dir.join(format!("run{idx}.ckpt"));
        checkpoint::save(&outcome.params, &ckpt)?;
        if let Some(mask) = outcome.final_mask() {
            mask.write_csv(&settings.out_dir.join(format!("run{idx}_mask.csv")))?;
        }
    }
    let report_path: PathBuf = settings.out_dir.join("train_report.json");
    report.save(&report_path)?;

    println!(
        "{} | method {} | fraction {:.2} | {} run(s)",
        report_path.display(),
        spec.pruning.method,
        spec.pruning.target_fraction,
        spec.runs
    );
    println!(
        "test MAE {:.4} ± {:.4} | RMSE {:.4} ± {:.4} | MAPE {:.2}% ± {:.2}%",
        report.aggregate.mae.mean,
        report.aggregate.mae.std,
        report.aggregate.rmse.mean,
        report.aggregate.rmse.std,
        report.aggregate.mape.mean,
        report.aggregate.mape.std,
    );
    Ok(())
}
