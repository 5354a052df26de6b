//! Synthetic one-hot CTR data with a known informative support, and a
//! libsvm-style reader/writer for small real datasets.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rng;

/// One example: one active feature id per field and a binary label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub feature_ids: Vec<usize>,
    pub label: u8,
}

impl Sample {
    pub fn new(feature_ids: Vec<usize>, label: u8) -> Self {
        Self { feature_ids, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_fields: usize,
    pub vocab_per_field: usize,
    pub informative_fraction: f64,
    pub num_samples: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_weight_scale")]
    pub weight_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_weight_scale() -> f64 {
    2.0
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_fields: 10,
            vocab_per_field: 500,
            informative_fraction: 0.1,
            num_samples: 10_000,
            noise: 0.0,
            weight_scale: default_weight_scale(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn vocab(&self) -> Result<usize> {
        self.num_fields
            .checked_mul(self.vocab_per_field)
            .filter(|&v| v <= u32::MAX as usize)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "vocabulary {} x {} overflows",
                    self.num_fields, self.vocab_per_field
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_fields == 0 || self.vocab_per_field == 0 {
            return Err(Error::InvalidParameter("num_fields and vocab_per_field must be positive".into()));
        }
        self.vocab()?;
        if !(self.informative_fraction > 0.0 && self.informative_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "informative_fraction must be in (0, 1], got {}",
                self.informative_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidParameter(format!("noise must be in [0, 1], got {}", self.noise)));
        }
        if !(self.weight_scale >= 0.0 && self.weight_scale.is_finite()) {
            return Err(Error::InvalidParameter("weight_scale must be finite and >= 0".into()));
        }
        if self.num_samples < 2 {
            return Err(Error::InvalidParameter("num_samples must be at least 2".into()));
        }
        Ok(())
    }

    /// Size of the informative support, ⌈fraction · vocab⌉.
    pub fn support_size(&self) -> Result<usize> {
        let vocab = self.vocab()?;
        Ok(((self.informative_fraction * vocab as f64).ceil() as usize).min(vocab))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub ground_truth_support: BTreeSet<usize>,
    /// Ground-truth per-feature weights (zero outside the support).
    pub weights: Vec<f64>,
    pub num_features: usize,
    pub num_fields: usize,
}

/// Index of the first test sample for a 90/10 split.
pub fn split_point(n: usize) -> usize {
    (n * 9).div_ceil(10)
}

/// Draws a dataset. Feature ids of field `f` live in
/// `[f · vocab_per_field, (f + 1) · vocab_per_field)`; each sample picks one
/// id per field uniformly. Labels are Bernoulli(σ(Σ w*)) then flipped with
/// probability `noise`. The first 90% of samples form the training split.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let vocab = spec.vocab()?;
    let k = spec.support_size()?;
    let mut rng = Rng::new(spec.seed);

    let mut ids: Vec<usize> = (0..vocab).collect();
    rng.shuffle(&mut ids);
    let support: BTreeSet<usize> = ids[..k].iter().copied().collect();
    let mut weights = vec![0.0; vocab];
    for &id in &support {
        // keep informative weights away from zero so they actually matter
        let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        weights[id] = sign * spec.weight_scale * (0.5 + rng.unit());
    }

    let mut samples = Vec::with_capacity(spec.num_samples);
    for _ in 0..spec.num_samples {
        let feature_ids: Vec<usize> = (0..spec.num_fields)
            .map(|f| f * spec.vocab_per_field + rng.below(spec.vocab_per_field))
            .collect();
        let logit: f64 = feature_ids.iter().map(|&i| weights[i]).sum();
        let p = 1.0 / (1.0 + (-logit).exp());
        let mut label = rng.bernoulli(p);
        if rng.bernoulli(spec.noise) {
            label = !label;
        }
        samples.push(Sample::new(feature_ids, label as u8));
    }
    let test = samples.split_off(split_point(samples.len()));
    Ok(Dataset {
        train: samples,
        test,
        ground_truth_support: support,
        weights,
        num_features: vocab,
        num_fields: spec.num_fields,
    })
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<Sample>> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let mut tokens = line.split_whitespace();
    let label_tok = tokens.next().unwrap_or_default();
    let label_val: f64 = label_tok.parse().map_err(|_| Error::Parse {
        line: lineno,
        reason: format!("bad label `{label_tok}`"),
    })?;
    let label = if label_val == 1.0 {
        1
    } else if label_val == 0.0 || label_val == -1.0 {
        0
    } else {
        return Err(Error::Parse {
            line: lineno,
            reason: format!("label must be 0/1 or -1/+1, got `{label_tok}`"),
        });
    };
    let mut feature_ids = Vec::new();
    for tok in tokens {
        let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
            line: lineno,
            reason: format!("expected idx:val, got `{tok}`"),
        })?;
        let idx: usize = idx.parse().map_err(|_| Error::Parse {
            line: lineno,
            reason: format!("bad feature index `{idx}`"),
        })?;
        let val: f64 = val.parse().map_err(|_| Error::Parse {
            line: lineno,
            reason: format!("bad feature value `{val}`"),
        })?;
        if val != 1.0 {
            return Err(Error::NonOneHot { line: lineno });
        }
        feature_ids.push(idx);
    }
    Ok(Some(Sample::new(feature_ids, label)))
}

/// Parses libsvm-style text. Blank lines and `#` comments are skipped.
pub fn parse_libsvm(text: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(s) = parse_line(line, i + 1)? {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    parse_libsvm(&fs::read_to_string(path)?)
}

pub fn to_libsvm(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(if s.label == 1 { "1" } else { "0" });
        for id in &s.feature_ids {
            let _ = write!(out, " {id}:1");
        }
        out.push('\n');
    }
    out
}

pub fn write_libsvm(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    fs::write(path, to_libsvm(samples))?;
    Ok(())
}

/// Feature ids appearing anywhere in `samples`.
pub fn features_seen(samples: &[Sample]) -> BTreeSet<usize> {
    samples.iter().flat_map(|s| s.feature_ids.iter().copied()).collect()
}
