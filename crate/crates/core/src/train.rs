//! Mini-batch training loop over a [`Model`] with one optimizer state per block.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::Result;
use crate::metrics::{auc, logloss_from_logits, sparsity};
use crate::model::Model;
use crate::optim::{OptimizerSpec, OptimizerState, RegConfig};
use crate::tensor::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub logloss: f64,
    /// `None` when the evaluation split has a single class.
    pub auc: Option<f64>,
    pub sparsity: f64,
    pub nonzero_groups: usize,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub states: Vec<OptimizerState>,
    pub optimizer: OptimizerSpec,
    pub reg: RegConfig,
    pub batch_size: usize,
    pub features_seen: BTreeSet<usize>,
    rng: Rng,
}

impl Trainer {
    pub fn new(model: Model, optimizer: OptimizerSpec, reg: RegConfig, batch_size: usize, seed: u64) -> Result<Self> {
        optimizer.validate()?;
        reg.validate()?;
        if batch_size == 0 {
            return Err(crate::error::Error::InvalidParameter("batch_size must be positive".into()));
        }
        let states = model.blocks.iter().map(|b| OptimizerState::new(b.len())).collect();
        Ok(Self {
            model,
            states,
            optimizer,
            reg,
            batch_size,
            features_seen: BTreeSet::new(),
            rng: Rng::derive(seed, 1),
        })
    }

    /// One gradient step on `batch`; returns the batch loss before the step.
    pub fn step(&mut self, batch: &[Sample]) -> Result<f64> {
        let (loss, grads) = self.model.loss_and_grad(batch)?;
        for s in batch {
            self.features_seen.extend(s.feature_ids.iter().copied());
        }
        let spec = &self.optimizer;
        let reg = &self.reg;
        self.states
            .par_iter_mut()
            .zip(self.model.blocks.par_iter_mut())
            .zip(grads.par_iter())
            .map(|((state, block), grad)| spec.step(state, block, grad, reg))
            .collect::<Result<Vec<()>>>()?;
        Ok(loss)
    }

    /// One pass over `data` in a freshly shuffled order; returns the mean
    /// batch loss.
    pub fn train_epoch(&mut self, data: &[Sample]) -> Result<f64> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut batch = Vec::with_capacity(self.batch_size);
        for chunk in order.chunks(self.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            total += self.step(&batch)?;
            batches += 1;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }

    pub fn evaluate(&self, data: &[Sample]) -> Result<Evaluation> {
        evaluate(&self.model, data, &self.features_seen)
    }
}

/// Test-split metrics; the keep-rate is measured over `features_seen`.
pub fn evaluate(model: &Model, data: &[Sample], features_seen: &BTreeSet<usize>) -> Result<Evaluation> {
    let logits: Vec<f64> = data
        .par_chunks(1024)
        .map(|c| model.forward(c).map(|cache| cache.logits))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let labels: Vec<u8> = data.iter().map(|s| s.label).collect();
    let emb = model.embedding();
    Ok(Evaluation {
        logloss: logloss_from_logits(&labels, &logits)?,
        auc: auc(&labels, &logits).ok(),
        sparsity: if features_seen.is_empty() {
            0.0
        } else {
            sparsity(emb, features_seen)?
        },
        nonzero_groups: emb.nonzero_groups()?,
    })
}
