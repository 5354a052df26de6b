//! Evaluation metrics: AUC, mean logloss and the feature keep-rate.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::logistic_loss;
use crate::tensor::{check_len, ParamBlock};

/// Mann–Whitney AUC: (concordant pairs + ½ tied pairs) / (#pos · #neg).
/// Runs in O(n log n) by ranking with average ranks for ties.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    check_len(labels.len(), scores.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie block [i, j]
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum += rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Mean logistic loss computed from raw logits.
pub fn logloss_from_logits(labels: &[u8], logits: &[f64]) -> Result<f64> {
    check_len(labels.len(), logits.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    Ok(labels
        .iter()
        .zip(logits)
        .map(|(&y, &z)| logistic_loss(z, y as f64))
        .sum::<f64>()
        / labels.len() as f64)
}

/// Fraction of `features_seen` whose embedding row is not exactly zero.
pub fn sparsity(block: &ParamBlock, features_seen: &BTreeSet<usize>) -> Result<f64> {
    let gs = block.group_size.ok_or_else(|| Error::NotGrouped(block.name.clone()))?;
    if features_seen.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    let num_groups = block.num_groups();
    let mut kept = 0usize;
    for &g in features_seen {
        if g >= num_groups {
            return Err(Error::FeatureOutOfRange {
                id: g,
                num_features: num_groups,
            });
        }
        if block.values[g * gs..(g + 1) * gs].iter().any(|&v| v != 0.0) {
            kept += 1;
        }
    }
    Ok(kept as f64 / features_seen.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct pairwise count.
    fn auc_pairs(labels: &[u8], scores: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[1, 0, 1, 0], &[0.9, 0.1, 0.8, 0.3]).unwrap(), 1.0);
        assert_eq!(auc(&[1, 0, 1, 0], &[0.5; 4]).unwrap(), 0.5);
        let scores = [0.9, 0.8, 0.1, 0.3];
        assert_eq!(auc_pairs(&[1, 0, 1, 0], &scores), 0.5);
        assert_eq!(auc(&[1, 0, 1, 0], &scores).unwrap(), 0.5);
    }

    #[test]
    fn auc_undefined_without_both_classes() {
        assert!(matches!(auc(&[1, 1], &[0.1, 0.2]), Err(Error::UndefinedAuc)));
        assert!(matches!(auc(&[], &[]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn auc_matches_pairwise_with_ties() {
        let labels = [1, 0, 0, 1, 1, 0, 1, 0, 0];
        let scores = [0.3, 0.3, 0.1, 0.7, 0.3, 0.9, 0.1, 0.1, 0.5];
        let fast = auc(&labels, &scores).unwrap();
        assert!((fast - auc_pairs(&labels, &scores)).abs() < 1e-15);
    }

    #[test]
    fn sparsity_examples() {
        let mut values = vec![0.0; 20];
        for g in [1, 4, 7] {
            values[2 * g] = 1.0;
        }
        let b = ParamBlock::grouped("embedding", values, 2).unwrap();
        let seen: BTreeSet<usize> = (0..10).collect();
        assert_eq!(sparsity(&b, &seen).unwrap(), 0.3);
        let zero = ParamBlock::grouped("embedding", vec![0.0; 20], 2).unwrap();
        assert_eq!(sparsity(&zero, &seen).unwrap(), 0.0);
        assert!(matches!(sparsity(&b, &BTreeSet::new()), Err(Error::EmptyFeatureSet)));
        let ungrouped = ParamBlock::ungrouped("w", vec![1.0]);
        assert!(sparsity(&ungrouped, &seen).is_err());
    }
}
