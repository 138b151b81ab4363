use std::io::Write;
use std::path::PathBuf;

use clap::Args as ClapArgs;

use prunegcrn::data::{self, synthetic};
use prunegcrn::error::Result;

use crate::commands::ensure_dir;

#[derive(ClapArgs)]
pub struct Args {
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 4000)]
    steps: usize,
    /// Planted driver-node count.
    #[arg(long, default_value_t = 4)]
    drivers: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    ensure_dir(&args.out_dir)?;
    let (ds, truth) = synthetic::gen_synthetic(args.nodes, args.steps, args.drivers, args.seed)?;

    let series = args.out_dir.join("synthetic_series.csv");
    data::write_series_csv(&ds, &series)?;
    let coords = args.out_dir.join("synthetic_coords.csv");
    data::write_coords_csv(ds.coords.as_ref().unwrap(), &coords)?;

    let drivers = args.out_dir.join("synthetic_drivers.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&drivers)?);
    writeln!(f, "driver_node_id")?;
    for d in &truth.drivers {
        writeln!(f, "{d}")?;
    }
    f.flush()?;

    println!("{}", series.display());
    println!("{}", coords.display());
    println!("{}", drivers.display());
    Ok(())
}
