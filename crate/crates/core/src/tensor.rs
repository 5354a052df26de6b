//! Flat fp64 parameter blocks with optional contiguous group structure,
//! diagonal matrices stored as vectors, and the pinned random stream.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named parameter vector. When `group_size` is set, group `g` occupies
/// `values[g * group_size..(g + 1) * group_size]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub values: Vec<f64>,
    pub group_size: Option<usize>,
}

impl ParamBlock {
    pub fn ungrouped(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
            group_size: None,
        }
    }

    pub fn grouped(name: impl Into<String>, values: Vec<f64>, group_size: usize) -> Result<Self> {
        if group_size == 0 || values.len() % group_size != 0 {
            return Err(Error::BadGrouping {
                len: values.len(),
                group_size,
            });
        }
        Ok(Self {
            name: name.into(),
            values,
            group_size: Some(group_size),
        })
    }

    pub fn zeros(name: impl Into<String>, len: usize, group_size: Option<usize>) -> Result<Self> {
        match group_size {
            Some(gs) => Self::grouped(name, vec![0.0; len], gs),
            None => Ok(Self::ungrouped(name, vec![0.0; len])),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of groups; an ungrouped block reports 0.
    pub fn num_groups(&self) -> usize {
        match self.group_size {
            Some(gs) => self.values.len() / gs,
            None => 0,
        }
    }

    fn require_group_size(&self) -> Result<usize> {
        self.group_size
            .ok_or_else(|| Error::NotGrouped(self.name.clone()))
    }

    pub fn group(&self, g: usize) -> Result<&[f64]> {
        let gs = self.require_group_size()?;
        Ok(&self.values[g * gs..(g + 1) * gs])
    }

    pub fn group_mut(&mut self, g: usize) -> Result<&mut [f64]> {
        let gs = self.require_group_size()?;
        Ok(&mut self.values[g * gs..(g + 1) * gs])
    }

    /// Euclidean norm of every group.
    pub fn group_l2_norms(&self) -> Result<Vec<f64>> {
        let gs = self.require_group_size()?;
        Ok(self.values.chunks_exact(gs).map(l2_norm).collect())
    }

    /// Number of groups with at least one nonzero entry (exact test).
    pub fn nonzero_groups(&self) -> Result<usize> {
        let gs = self.require_group_size()?;
        Ok(self
            .values
            .chunks_exact(gs)
            .filter(|g| g.iter().any(|&v| v != 0.0))
            .count())
    }
}

/// Euclidean norm of every group of `block`; fails on ungrouped blocks.
pub fn group_l2_norms(block: &ParamBlock) -> Result<Vec<f64>> {
    block.group_l2_norms()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ‖a − b‖∞ for equal-length slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_abs_diff on unequal lengths");
    a.iter()
        .zip(b)
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

/// A diagonal matrix stored as its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagMatrix {
    pub diag: Vec<f64>,
}

impl DiagMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { diag: vec![0.0; n] }
    }

    pub fn identity(n: usize) -> Self {
        Self { diag: vec![1.0; n] }
    }

    pub fn from_diag(diag: Vec<f64>) -> Self {
        Self { diag }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.diag.iter().all(|&d| d >= 0.0)
    }

    /// `decay * self + update`, elementwise.
    pub fn weighted_average_accumulate(&self, update: &[f64], decay: f64) -> Result<Self> {
        weighted_average_accumulate(self, update, decay)
    }
}

/// Returns `decay * acc + update` elementwise. `decay` must lie in [0, 1].
pub fn weighted_average_accumulate(acc: &DiagMatrix, update: &[f64], decay: f64) -> Result<DiagMatrix> {
    check_len(acc.len(), update.len())?;
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::InvalidParameter(format!(
            "decay must be in [0, 1], got {decay}"
        )));
    }
    Ok(DiagMatrix {
        diag: acc
            .diag
            .iter()
            .zip(update)
            .map(|(a, u)| decay * a + u)
            .collect(),
    })
}

/// Seeded random stream. The generator is ChaCha8 (`rand_chacha`), whose
/// output is specified independently of platform and word size.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a labelled sub-task.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Log-uniform in `[lo, hi]`, both positive.
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        (lo.ln() + (hi.ln() - lo.ln()) * self.unit()).exp()
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn normal_vec(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| std * self.normal()).collect()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_norms_triangle() {
        let b = ParamBlock::grouped("e", vec![3.0, 4.0], 2).unwrap();
        assert_eq!(b.group_l2_norms().unwrap(), vec![5.0]);
    }

    #[test]
    fn group_norms_zero() {
        let b = ParamBlock::grouped("e", vec![0.0; 4], 2).unwrap();
        assert_eq!(b.group_l2_norms().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn group_norms_match_naive_loop() {
        let values = vec![1.0, 2.0, 2.0, 4.0, 4.0, 2.0];
        let b = ParamBlock::grouped("e", values.clone(), 3).unwrap();
        let mut naive = Vec::new();
        for g in 0..2 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += values[g * 3 + i] * values[g * 3 + i];
            }
            naive.push(acc.sqrt());
        }
        assert_eq!(naive, vec![3.0, 6.0]);
        assert_eq!(b.group_l2_norms().unwrap(), naive);
    }

    #[test]
    fn ungrouped_norms_fail() {
        let b = ParamBlock::ungrouped("bias", vec![1.0, 2.0]);
        assert!(matches!(b.group_l2_norms(), Err(Error::NotGrouped(_))));
    }

    #[test]
    fn bad_grouping_rejected() {
        assert!(ParamBlock::grouped("e", vec![0.0; 5], 2).is_err());
        assert!(ParamBlock::grouped("e", vec![0.0; 4], 0).is_err());
    }

    #[test]
    fn accumulate_examples() {
        let acc = DiagMatrix::from_diag(vec![1.0, 1.0]);
        assert_eq!(acc.weighted_average_accumulate(&[4.0, 9.0], 1.0).unwrap().diag, vec![5.0, 10.0]);
        let acc = DiagMatrix::from_diag(vec![2.0]);
        let out = acc.weighted_average_accumulate(&[0.0], 0.9).unwrap();
        assert!((out.diag[0] - 1.8).abs() < 1e-15);
        let acc = DiagMatrix::zeros(2);
        assert_eq!(acc.weighted_average_accumulate(&[1.0, 1.0], 0.0).unwrap().diag, vec![1.0, 1.0]);
    }

    #[test]
    fn accumulate_rejects_mismatch_and_bad_decay() {
        let acc = DiagMatrix::zeros(2);
        assert!(matches!(
            acc.weighted_average_accumulate(&[1.0], 0.5),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(acc.weighted_average_accumulate(&[1.0, 1.0], 1.5).is_err());
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let va: Vec<f64> = (0..100).map(|_| a.normal()).collect();
        let vb: Vec<f64> = (0..100).map(|_| b.normal()).collect();
        assert!(va.iter().zip(&vb).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut c = Rng::new(43);
        assert_ne!(va[0].to_bits(), c.normal().to_bits());
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = Rng::derive(7, 0);
        let mut b = Rng::derive(7, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn nonzero_groups_is_exact() {
        let b = ParamBlock::grouped("e", vec![0.0, 1e-300, 0.0, 0.0], 2).unwrap();
        assert_eq!(b.nonzero_groups().unwrap(), 1);
    }
}
