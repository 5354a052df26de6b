//! Embedding + MLP click model with hand-written backpropagation.
//!
//! Each sample activates one feature id per field. The looked-up embedding
//! rows are concatenated, fed through ReLU layers and a final scalar logit.
//! The loss is mean logistic loss over the batch.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::{ParamBlock, Rng};

pub const EMBEDDING: &str = "embedding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_features: usize,
    pub embed_dim: usize,
    pub num_fields: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 16]
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_fields == 0 || self.num_features == 0 {
            return Err(Error::InvalidParameter(
                "num_features, embed_dim and num_fields must be positive".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidParameter("hidden layer widths must be positive".into()));
        }
        self.num_features
            .checked_mul(self.embed_dim)
            .ok_or_else(|| Error::InvalidParameter("embedding table size overflows".into()))?;
        Ok(())
    }

    /// (fan_in, fan_out) of every dense layer including the output layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.num_fields * self.embed_dim;
        for &h in &self.hidden_dims {
            shapes.push((fan_in, h));
            fan_in = h;
        }
        shapes.push((fan_in, 1));
        shapes
    }
}

/// Initial value of every hidden-layer bias. A positive start keeps ReLU
/// units alive while a group penalty holds all embedding rows at zero;
/// with zero biases those units can die before any row is admitted.
pub const HIDDEN_BIAS_INIT: f64 = 0.01;

/// Model parameters as named blocks: `embedding`, then `dense{k}.weight` /
/// `dense{k}.bias` per layer. Weights are row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub blocks: Vec<ParamBlock>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    ids: Vec<Vec<usize>>,
    /// `acts[0]` is the concatenated embedding input; `acts[k]` the post-ReLU
    /// output of hidden layer k. Each is batch-major.
    acts: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl Cache {
    pub fn batch_size(&self) -> usize {
        self.logits.len()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss of one logit against a {0, 1} label, computed stably.
pub fn logistic_loss(logit: f64, label: f64) -> f64 {
    let softplus = if logit > 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    softplus - label * logit
}

impl Model {
    /// Embeddings ~ U(−0.01, 0.01); dense weights ~ N(0, 2/fan_in); hidden
    /// biases [`HIDDEN_BIAS_INIT`]; output bias 0.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let n_emb = config.num_features * config.embed_dim;
        let emb = rng.uniform_vec(n_emb, -0.01, 0.01);
        let mut blocks = vec![ParamBlock::grouped(EMBEDDING, emb, config.embed_dim)?];
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        for (k, (fan_in, fan_out)) in shapes.into_iter().enumerate() {
            let std = (2.0 / fan_in as f64).sqrt();
            blocks.push(ParamBlock::ungrouped(format!("dense{k}.weight"), rng.normal_vec(fan_in * fan_out, std)));
            let bias = if k == last { 0.0 } else { HIDDEN_BIAS_INIT };
            blocks.push(ParamBlock::ungrouped(format!("dense{k}.bias"), vec![bias; fan_out]));
        }
        Ok(Self { config, blocks })
    }

    /// Same shapes with every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config)?;
        for b in &mut m.blocks {
            b.values.fill(0.0);
        }
        Ok(m)
    }

    pub fn embedding(&self) -> &ParamBlock {
        &self.blocks[0]
    }

    pub fn embedding_mut(&mut self) -> &mut ParamBlock {
        &mut self.blocks[0]
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        if s.feature_ids.len() != self.config.num_fields {
            return Err(Error::LengthMismatch {
                expected: self.config.num_fields,
                got: s.feature_ids.len(),
            });
        }
        for &id in &s.feature_ids {
            if id >= self.config.num_features {
                return Err(Error::FeatureOutOfRange {
                    id,
                    num_features: self.config.num_features,
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, batch: &[Sample]) -> Result<Cache> {
        for s in batch {
            self.check_sample(s)?;
        }
        let e = self.config.embed_dim;
        let emb = &self.blocks[0].values;
        let width = self.config.num_fields * e;
        let mut input = Vec::with_capacity(batch.len() * width);
        for s in batch {
            for &id in &s.feature_ids {
                input.extend_from_slice(&emb[id * e..(id + 1) * e]);
            }
        }
        let shapes = self.config.layer_shapes();
        let n_hidden = shapes.len() - 1;
        let mut acts = vec![input];
        let mut logits = Vec::new();
        for (k, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let w = &self.blocks[1 + 2 * k].values;
            let b = &self.blocks[2 + 2 * k].values;
            let prev = acts.last().expect("input present");
            let mut out = Vec::with_capacity(batch.len() * fan_out);
            for row in prev.chunks_exact(fan_in) {
                for j in 0..fan_out {
                    let wj = &w[j * fan_in..(j + 1) * fan_in];
                    let a = b[j] + wj.iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
                    out.push(if k < n_hidden { a.max(0.0) } else { a });
                }
            }
            if k < n_hidden {
                acts.push(out);
            } else {
                logits = out;
            }
        }
        Ok(Cache {
            ids: batch.iter().map(|s| s.feature_ids.clone()).collect(),
            acts,
            logits,
        })
    }

    /// Gradients of the mean logistic loss, one vector per block in
    /// `self.blocks` order.
    pub fn backward(&self, cache: &Cache, labels: &[f64]) -> Result<Vec<Vec<f64>>> {
        let bsz = cache.batch_size();
        if labels.len() != bsz {
            return Err(Error::LengthMismatch {
                expected: bsz,
                got: labels.len(),
            });
        }
        let mut grads: Vec<Vec<f64>> = self.blocks.iter().map(|b| vec![0.0; b.len()]).collect();
        if bsz == 0 {
            return Ok(grads);
        }
        let shapes = self.config.layer_shapes();
        let mut delta: Vec<f64> = cache
            .logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| (sigmoid(z) - y) / bsz as f64)
            .collect();
        for k in (0..shapes.len()).rev() {
            let (fan_in, fan_out) = shapes[k];
            let w = &self.blocks[1 + 2 * k].values;
            let x = &cache.acts[k];
            let (gw, rest) = grads[1 + 2 * k..].split_at_mut(1);
            let gw = &mut gw[0];
            let gb = &mut rest[0];
            let mut prev_delta = vec![0.0; bsz * fan_in];
            for n in 0..bsz {
                let xr = &x[n * fan_in..(n + 1) * fan_in];
                let pd = &mut prev_delta[n * fan_in..(n + 1) * fan_in];
                for j in 0..fan_out {
                    let d = delta[n * fan_out + j];
                    if d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    let gwj = &mut gw[j * fan_in..(j + 1) * fan_in];
                    let wj = &w[j * fan_in..(j + 1) * fan_in];
                    for i in 0..fan_in {
                        gwj[i] += d * xr[i];
                        pd[i] += d * wj[i];
                    }
                }
            }
            if k > 0 {
                // ReLU mask from the stored post-activation
                for (pd, &a) in prev_delta.iter_mut().zip(x) {
                    if a <= 0.0 {
                        *pd = 0.0;
                    }
                }
            }
            delta = prev_delta;
        }
        let e = self.config.embed_dim;
        let width = self.config.num_fields * e;
        let gemb = &mut grads[0];
        for (n, ids) in cache.ids.iter().enumerate() {
            for (f, &id) in ids.iter().enumerate() {
                let src = &delta[n * width + f * e..n * width + (f + 1) * e];
                for (g, d) in gemb[id * e..(id + 1) * e].iter_mut().zip(src) {
                    *g += d;
                }
            }
        }
        Ok(grads)
    }

    /// Mean logistic loss on `batch`.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        let cache = self.forward(batch)?;
        Ok(cache
            .logits
            .iter()
            .zip(batch)
            .map(|(&z, s)| logistic_loss(z, s.label as f64))
            .sum::<f64>()
            / batch.len() as f64)
    }

    /// Loss and gradients in one pass.
    pub fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Vec<Vec<f64>>)> {
        let cache = self.forward(batch)?;
        let labels: Vec<f64> = batch.iter().map(|s| s.label as f64).collect();
        let loss = if batch.is_empty() {
            0.0
        } else {
            cache
                .logits
                .iter()
                .zip(&labels)
                .map(|(&z, &y)| logistic_loss(z, y))
                .sum::<f64>()
                / batch.len() as f64
        };
        let grads = self.backward(&cache, &labels)?;
        Ok((loss, grads))
    }

    pub fn predict_proba(&self, batch: &[Sample]) -> Result<Vec<f64>> {
        Ok(self.forward(batch)?.logits.into_iter().map(sigmoid).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    (
                        b.name.clone(),
                        CheckpointBlock {
                            group_size: b.group_size,
                            values: b.values.clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let mut model = Self::new(ck.config)?;
        let mut blocks = ck.blocks;
        for b in &mut model.blocks {
            let src = blocks.remove(&b.name).ok_or_else(|| Error::Config {
                path: format!("blocks.{}", b.name),
                reason: "missing block".into(),
            })?;
            if src.values.len() != b.len() || src.group_size != b.group_size {
                return Err(Error::Config {
                    path: format!("blocks.{}", b.name),
                    reason: format!(
                        "expected {} values with group size {:?}, got {} with {:?}",
                        b.len(),
                        b.group_size,
                        src.values.len(),
                        src.group_size
                    ),
                });
            }
            b.values = src.values;
        }
        if let Some(name) = blocks.keys().next() {
            return Err(Error::Config {
                path: format!("blocks.{name}"),
                reason: "unknown block".into(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_checkpoint(ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBlock {
    pub group_size: Option<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub blocks: BTreeMap<String, CheckpointBlock>,
}

/// Outcome of comparing backward against central finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because a ReLU changed state within ±h.
    pub skipped: usize,
}

/// Denominator floor for the relative error, so coordinates with a true
/// gradient near zero are judged by absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

fn relu_pattern(model: &Model, batch: &[Sample]) -> Result<Vec<bool>> {
    let cache = model.forward(batch)?;
    Ok(cache.acts[1..].iter().flatten().map(|&a| a > 0.0).collect())
}

/// Checks every parameter of `model` on `batch` with step `h`.
pub fn gradient_check(model: &Model, batch: &[Sample], h: f64) -> Result<GradCheck> {
    let (_, grads) = model.loss_and_grad(batch)?;
    let base_pattern = relu_pattern(model, batch)?;
    let mut probe = model.clone();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (bi, grad) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let x0 = probe.blocks[bi].values[i];
            probe.blocks[bi].values[i] = x0 + h;
            let plus = probe.loss(batch)?;
            let plus_pattern = relu_pattern(&probe, batch)?;
            probe.blocks[bi].values[i] = x0 - h;
            let minus = probe.loss(batch)?;
            let minus_pattern = relu_pattern(&probe, batch)?;
            probe.blocks[bi].values[i] = x0;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad[i];
            let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.max_rel_err = report.max_rel_err.max((analytic - numeric).abs() / denom);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_features: 5,
            embed_dim: 3,
            num_fields: 2,
            hidden_dims: vec![4],
            seed: 11,
        }
    }

    #[test]
    fn zero_network_predicts_half() {
        let m = Model::zeros(tiny_config()).unwrap();
        let p = m.predict_proba(&[Sample::new(vec![0, 4], 1), Sample::new(vec![2, 3], 0)]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn linear_layer_by_hand() {
        let cfg = ModelConfig {
            num_features: 2,
            embed_dim: 2,
            num_fields: 1,
            hidden_dims: vec![],
            seed: 0,
        };
        let mut m = Model::zeros(cfg).unwrap();
        m.blocks[0].values = vec![1.0, 2.0, 3.0, 4.0];
        m.blocks[1].values = vec![0.5, -1.0];
        m.blocks[2].values = vec![0.25];
        let c = m.forward(&[Sample::new(vec![1], 1)]).unwrap();
        // 0.5·3 − 1·4 + 0.25
        assert_eq!(c.logits, vec![-2.25]);
    }

    #[test]
    fn logit_zero_label_one_gradient() {
        let cfg = ModelConfig {
            num_features: 2,
            embed_dim: 1,
            num_fields: 1,
            hidden_dims: vec![],
            seed: 0,
        };
        let m = Model::zeros(cfg).unwrap();
        let c = m.forward(&[Sample::new(vec![0], 1)]).unwrap();
        let g = m.backward(&c, &[1.0]).unwrap();
        // d loss / d bias = d loss / d logit
        assert_eq!(g[2], vec![-0.5]);
    }

    #[test]
    fn untouched_rows_get_zero_gradient() {
        let m = Model::new(tiny_config()).unwrap();
        let (_, g) = m.loss_and_grad(&[Sample::new(vec![0, 3], 1)]).unwrap();
        for row in [1, 2, 4] {
            assert!(g[0][row * 3..row * 3 + 3].iter().all(|&v| v == 0.0));
        }
        assert!(g[0][0..3].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = Model::new(tiny_config()).unwrap();
        let batch: Vec<Sample> = (0..6).map(|i| Sample::new(vec![i % 5, (i * 3 + 1) % 5], (i % 2) as u8)).collect();
        let r = gradient_check(&m, &batch, 1e-5).unwrap();
        assert!(r.max_rel_err <= 1e-6, "{r:?}");
        assert!(r.checked > r.skipped);
    }

    #[test]
    fn out_of_range_feature_rejected() {
        let m = Model::new(tiny_config()).unwrap();
        let err = m.forward(&[Sample::new(vec![0, 5], 1)]).unwrap_err();
        assert!(matches!(err, Error::FeatureOutOfRange { id: 5, .. }));
    }

    #[test]
    fn label_count_mismatch_rejected() {
        let m = Model::new(tiny_config()).unwrap();
        let c = m.forward(&[Sample::new(vec![0, 1], 1)]).unwrap();
        assert!(m.backward(&c, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = Model::new(tiny_config()).unwrap();
        let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = Model::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn stable_loss() {
        assert!((logistic_loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logistic_loss(800.0, 0.0).is_finite());
        assert!(logistic_loss(-800.0, 1.0).is_finite());
    }
}
