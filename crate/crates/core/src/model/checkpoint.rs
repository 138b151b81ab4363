//! Checkpoint container: model config plus every parameter tensor, JSON with
//! a magic version string. serde_json round-trips f64 exactly, so save/load
//! is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};

pub const CHECKPOINT_MAGIC: &str = "PRUNEGCRN-CKPT-1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    magic: String,
    config: ModelConfig,
    mask_trainable: bool,
    use_mask: bool,
    params: Vec<Param>,
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        magic: CHECKPOINT_MAGIC.to_string(),
        config: params.config.clone(),
        mask_trainable: params.mask_trainable,
        use_mask: params.use_mask,
        params: params.set.iter().cloned().collect(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!(
            "{}: expected checkpoint magic {CHECKPOINT_MAGIC}, found {}",
            path.display(),
            file.magic
        )));
    }
    let mut set = ParamSet::new();
    for p in file.params {
        set.add(p);
    }
    Ok(ModelParams {
        config: file.config,
        set,
        mask_trainable: file.mask_trainable,
        use_mask: file.use_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::NodeMask;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let cfg = ModelConfig {
            nodes: 4,
            embed_dim: 2,
            units: 3,
            layers: 1,
            window: 2,
            horizon: 2,
            seed: 99,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, &NodeMask::all_ones(4, 1)).unwrap();
        let dir = std::env::temp_dir().join(format!("ckpt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save(&params, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(params, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = std::env::temp_dir().join(format!("ckpt_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(
            &path,
            r#"{"magic":"OTHER","config":{},"mask_trainable":false,"use_mask":false,"params":[]}"#,
        )
        .unwrap();
        assert!(load(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
