//! Randomized agreement check between the closed-form prox and the oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::prox::{prox_oracle, prox_solve, ProxProblem, Variant};
use crate::tensor::{max_abs_diff, DiagMatrix, Rng};

/// Agreement tolerance between closed form and oracle, ∞-norm.
pub const AGREEMENT_TOL: f64 = 1e-6;

/// Draws one random problem: dimension in 2..=16, group size in 1..=8, each
/// λ log-uniform in [1e-4, 10] or exactly 0 with probability 0.15.
pub fn random_problem(rng: &mut Rng, variant: Variant) -> ProxProblem {
    let group_size = 1 + rng.below(8);
    let max_groups = 16 / group_size;
    let min_groups = if group_size == 1 { 2 } else { 1 };
    let num_groups = min_groups + rng.below(max_groups - min_groups + 1);
    let n = group_size * num_groups;
    let lambda = |rng: &mut Rng| {
        if rng.bernoulli(0.15) {
            0.0
        } else {
            rng.log_uniform(1e-4, 10.0)
        }
    };
    let lambda1 = lambda(rng);
    let lambda21 = lambda(rng);
    let lambda2 = lambda(rng);
    let z_scale = rng.log_uniform(0.1, 30.0);
    let z = rng.normal_vec(n, z_scale);
    let cum = (0..n).map(|_| rng.log_uniform(0.05, 20.0)).collect();
    ProxProblem {
        z,
        cum_diag: DiagMatrix::from_diag(cum),
        group_size,
        lambda1,
        lambda21,
        lambda2,
        variant,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: usize,
    pub dim: usize,
    pub group_size: usize,
    pub certified: bool,
    pub max_abs_diff: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelftestSummary {
    pub seed: u64,
    pub cases: usize,
    pub certified: usize,
    pub certified_agree: usize,
    pub worst_diff: f64,
    pub outcomes: Vec<CaseOutcome>,
}

impl SelftestSummary {
    /// Passes when every certified case agrees and at least one case was certified.
    pub fn passed(&self) -> bool {
        self.certified > 0 && self.certified_agree == self.certified
    }

    pub fn headline(&self) -> String {
        format!("{}/{} certified-agree", self.certified_agree, self.cases)
    }
}

/// Generates `n_cases` problems from `seed` (exact variant) and compares
/// the closed form with the oracle on each.
pub fn run_prox_selftest(n_cases: usize, seed: u64) -> SelftestSummary {
    let problems: Vec<ProxProblem> = {
        let mut rng = Rng::new(seed);
        (0..n_cases)
            .map(|_| random_problem(&mut rng, Variant::ExactSTilde))
            .collect()
    };
    let outcomes: Vec<CaseOutcome> = problems
        .par_iter()
        .enumerate()
        .map(|(case, p)| {
            let closed = prox_solve(p).expect("generated problems are valid");
            let oracle = prox_oracle(p).expect("generated problems are within oracle limits");
            let diff = max_abs_diff(&closed, &oracle.x_star);
            CaseOutcome {
                case,
                dim: p.dim(),
                group_size: p.group_size,
                certified: oracle.certified,
                max_abs_diff: diff,
                agree: diff <= AGREEMENT_TOL,
            }
        })
        .collect();
    let certified = outcomes.iter().filter(|o| o.certified).count();
    let certified_agree = outcomes.iter().filter(|o| o.certified && o.agree).count();
    let worst_diff = outcomes
        .iter()
        .filter(|o| o.certified)
        .map(|o| o.max_abs_diff)
        .fold(0.0, f64::max);
    SelftestSummary {
        seed,
        cases: n_cases,
        certified,
        certified_agree,
        worst_diff,
        outcomes,
    }
}
