//! Composite loss and the training loop: shuffled mini-batches, gradient
//! clipping, adaptive-moment updates, validation-based model selection with
//! early stopping, and the optional exact-count mask snap with a short
//! frozen-mask fine-tune.
//!
//! The loss is computed in normalized space; validation and test metrics are
//! denormalized. Training drops a final partial batch (evaluation keeps it);
//! when the whole split is smaller than one batch it trains on a single short
//! batch instead of silently doing nothing.

pub mod optimizer;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::data::SplitWindows;
use crate::error::{Error, Result};
use crate::mask::{self, NodeMask};
use crate::metrics;
use crate::model::{self, ModelConfig, ModelParams};
use optimizer::{clip_global_norm, Optimizer};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// MAE·(1 + mask penalty) from already-built tape pieces.
pub fn composite_loss_from_parts(
    tape: &mut Tape,
    mae: TensorId,
    binary: TensorId,
    gamma: f64,
    clamped: bool,
) -> Result<TensorId> {
    let penalty = mask::mask_loss(tape, binary, gamma, clamped)?;
    let factor = tape.affine(penalty, 1.0, 1.0);
    tape.mul(mae, factor)
}

/// Composite loss over a batch of node-major prediction/target pairs.
pub fn composite_loss(
    tape: &mut Tape,
    predictions: &[TensorId],
    targets: &[TensorId],
    binary: TensorId,
    gamma: f64,
    clamped: bool,
) -> Result<TensorId> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Dimension {
            op: "composite_loss",
            left: vec![predictions.len()],
            right: vec![targets.len()],
        });
    }
    let mut sum: Option<TensorId> = None;
    for (&p, &t) in predictions.iter().zip(targets.iter()) {
        if tape.shape(p) != tape.shape(t) {
            return Err(Error::Dimension {
                op: "composite_loss",
                left: tape.shape(p).to_vec(),
                right: tape.shape(t).to_vec(),
            });
        }
        let diff = tape.sub(p, t)?;
        let a = tape.abs(diff);
        let m = tape.mean_all(a)?;
        sum = Some(match sum {
            None => m,
            Some(s) => tape.add(s, m)?,
        });
    }
    let mae = tape.scale(sum.unwrap(), 1.0 / predictions.len() as f64);
    composite_loss_from_parts(tape, mae, binary, gamma, clamped)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub kept_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the best checkpoint (after the optional snap+fine-tune).
    pub params: ModelParams,
    pub best_val_mae: f64,
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub curve: Vec<EpochPoint>,
    /// Kept nodes at the best checkpoint before any exact-count projection.
    pub pre_snap_kept: usize,
    pub fine_tuned: bool,
}

impl FitOutcome {
    pub fn final_mask(&self) -> Option<NodeMask> {
        self.params.node_mask()
    }
}

fn batch_plan(count: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    if count >= batch_size {
        order.chunks_exact(batch_size).map(|c| c.to_vec()).collect()
    } else {
        vec![order]
    }
}

fn run_epoch(
    params: &mut ModelParams,
    opt: &mut Optimizer,
    splits: &SplitWindows,
    skip: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let cfg = params.config.clone();
    let raw_idx = params.set.index_of("mask.raw").unwrap();
    let raw_trainable = !skip[raw_idx];
    let mut loss_sum = 0.0;
    let batches = batch_plan(splits.train.count, cfg.batch_size, rng);
    let n_batches = batches.len();
    for batch in batches {
        let mut tape = Tape::new();
        let bm = model::bind(&mut tape, params)?;
        let binary = bm.binary.expect("training model always carries a mask");
        let inputs: Vec<&[f64]> = batch.iter().map(|&w| splits.train.input(w)).collect();
        let pred = model::forward_batch(&mut tape, &bm, &cfg, &inputs)?;
        let mut target_all = Vec::with_capacity(batch.len() * cfg.nodes * cfg.horizon);
        for &w in &batch {
            target_all.extend_from_slice(&splits.train.target_node_major(w));
        }
        let target = tape.leaf(target_all, vec![batch.len(), cfg.nodes, cfg.horizon]);
        let diff = tape.sub(pred, target)?;
        let abs = tape.abs(diff);
        let mae = tape.mean_all(abs)?;
        let loss =
            composite_loss_from_parts(&mut tape, mae, binary, cfg.gamma, cfg.clamp_mask_loss)?;
        loss_sum += tape.value(loss)[0];
        tape.backward(loss)?;

        let mut grads: Vec<Vec<f64>> = bm
            .param_ids
            .iter()
            .map(|&id| tape.grad(id).to_vec())
            .collect();
        drop(tape);
        clip_global_norm(&mut grads, cfg.grad_clip);
        opt.step(&mut params.set, &grads, skip)?;

        if raw_trainable {
            let raw = &mut params.set.at_mut(raw_idx).values;
            for v in raw.iter_mut() {
                *v = v.clamp(-mask::RAW_CLIP, mask::RAW_CLIP);
            }
        }
    }
    Ok(loss_sum / n_batches as f64)
}

fn validation_mae(params: &ModelParams, splits: &SplitWindows) -> Result<f64> {
    Ok(metrics::evaluate_model(params, &splits.val, &splits.stats)?.mae)
}

/// Trains a model on the given splits. The initial mask decides the pruning
/// regime: a trainable all-ones mask learns which nodes to keep under the
/// config's gamma budget, a frozen mask trains around a fixed node set.
pub fn fit(
    splits: &SplitWindows,
    config: &ModelConfig,
    initial_mask: &NodeMask,
) -> Result<FitOutcome> {
    if splits.train.count == 0 {
        return Err(Error::Data("empty training split".into()));
    }
    if splits.val.count == 0 {
        return Err(Error::Data("empty validation split".into()));
    }

    let mut params = ModelParams::init(config, initial_mask)?;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, &params.set);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));

    let raw_idx = params.set.index_of("mask.raw").unwrap();
    let mut skip = vec![false; params.set.len()];
    skip[raw_idx] = !params.mask_trainable;

    let mut curve = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut patience_used = 0usize;
    let mut stop_epoch = 0usize;

    for epoch in 0..config.max_epochs {
        let train_loss = run_epoch(&mut params, &mut opt, splits, &skip, &mut rng)?;
        let val_mae = validation_mae(&params, splits)?;
        if !val_mae.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("validation MAE diverged to {val_mae}"),
            });
        }
        curve.push(EpochPoint {
            epoch,
            train_loss,
            val_mae,
            kept_nodes: params.node_mask().map(|m| m.kept_count()).unwrap_or(0),
        });
        stop_epoch = epoch;
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            best_params = params.clone();
            patience_used = 0;
        } else {
            patience_used += 1;
            if patience_used >= config.patience {
                break;
            }
        }
    }

    let mut final_params = best_params;
    let pre_snap_kept = final_params
        .node_mask()
        .map(|m| m.kept_count())
        .unwrap_or(config.nodes);
    let mut fine_tuned = false;
    let mut final_val = best_val;

    if final_params.mask_trainable && config.exact_k_snap {
        let keep_k = mask::keep_count(config.nodes, 1.0 - config.gamma);
        let mut snapped = final_params.node_mask().unwrap();
        let before = snapped.binary();
        snapped.project_to_exact_k(keep_k)?;
        let changed = snapped.binary() != before;
        final_params.set_mask_raw(&snapped.raw);

        if changed && config.fine_tune_epochs > 0 {
            fine_tuned = true;
            // fresh optimizer state over the projected model, mask frozen
            let mut ft_params = final_params.clone();
            let mut ft_opt = Optimizer::new(config.optimizer, config.learning_rate, &ft_params.set);
            let mut ft_skip = skip.clone();
            ft_skip[raw_idx] = true;

            let mut ft_best = final_params.clone();
            let mut ft_best_val = validation_mae(&final_params, splits)?;
            for ft_epoch in 0..config.fine_tune_epochs {
                let train_loss =
                    run_epoch(&mut ft_params, &mut ft_opt, splits, &ft_skip, &mut rng)?;
                let val_mae = validation_mae(&ft_params, splits)?;
                if !val_mae.is_finite() {
                    return Err(Error::Training {
                        epoch: stop_epoch + 1 + ft_epoch,
                        message: format!("fine-tune validation MAE diverged to {val_mae}"),
                    });
                }
                curve.push(EpochPoint {
                    epoch: stop_epoch + 1 + ft_epoch,
                    train_loss,
                    val_mae,
                    kept_nodes: ft_params.node_mask().map(|m| m.kept_count()).unwrap_or(0),
                });
                if val_mae < ft_best_val {
                    ft_best_val = val_mae;
                    ft_best = ft_params.clone();
                }
            }
            final_params = ft_best;
            final_val = ft_best_val;
        } else if changed {
            final_val = validation_mae(&final_params, splits)?;
        }
    }

    Ok(FitOutcome {
        params: final_params,
        best_val_mae: final_val,
        best_epoch,
        stop_epoch,
        curve,
        pre_snap_kept,
        fine_tuned,
    })
}
