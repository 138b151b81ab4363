pub mod analyze;
pub mod benchmark;
pub mod compare;
pub mod evaluate;
pub mod gen;
pub mod train;

use std::path::Path;

use prunegcrn::error::Result;

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}
