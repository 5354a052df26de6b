//! Magnitude-pruning baseline for embedding tables: prune by row norm,
//! fine-tune on the most recent samples, prune again.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{OptimizerSpec, RegConfig};
use crate::tensor::ParamBlock;
use crate::train::Trainer;

/// Zeroes every group except the `keep` largest by ℓ₂ norm. Ties go to the
/// lower group index.
pub fn magnitude_prune(block: &ParamBlock, keep: usize) -> Result<ParamBlock> {
    let gs = block.group_size.ok_or_else(|| Error::NotGrouped(block.name.clone()))?;
    let norms = block.group_l2_norms()?;
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut out = block.clone();
    for &g in order.iter().skip(keep) {
        out.values[g * gs..(g + 1) * gs].fill(0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub target_keep: usize,
    pub finetune_fraction: f64,
}

impl PruneSchedule {
    pub fn validate(&self, num_features: usize) -> Result<()> {
        if self.target_keep > num_features {
            return Err(Error::InvalidParameter(format!(
                "target_keep {} exceeds {num_features} features",
                self.target_keep
            )));
        }
        if !(0.0..=1.0).contains(&self.finetune_fraction) {
            return Err(Error::InvalidParameter(format!(
                "finetune_fraction must be in [0, 1], got {}",
                self.finetune_fraction
            )));
        }
        Ok(())
    }
}

/// Prune to `target_keep`, fine-tune one pass over the last
/// `finetune_fraction` of `train` with a fresh unregularized optimizer, then
/// prune to `target_keep` again.
pub fn prune_finetune_prune(
    model: &Model,
    train: &[Sample],
    schedule: &PruneSchedule,
    optimizer: &OptimizerSpec,
    batch_size: usize,
    seed: u64,
) -> Result<Model> {
    schedule.validate(model.config.num_features)?;
    let mut pruned = model.clone();
    *pruned.embedding_mut() = magnitude_prune(model.embedding(), schedule.target_keep)?;
    let n = (schedule.finetune_fraction * train.len() as f64).round() as usize;
    if n == 0 {
        return Ok(pruned);
    }
    let tail = &train[train.len() - n..];
    let mut trainer = Trainer::new(pruned, optimizer.clone(), RegConfig::none(), batch_size, seed)?;
    trainer.train_epoch(tail)?;
    let mut out = trainer.model;
    let again = magnitude_prune(out.embedding(), schedule.target_keep)?;
    *out.embedding_mut() = again;
    Ok(out)
}
