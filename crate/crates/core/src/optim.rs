//! Adaptive optimizers in dual-averaging form with a sparse group lasso
//! proximal step, their vanilla counterparts, and an FTRL-Proximal reference.
//!
//! Every schedule produces a first moment `m_t` and a scaled root
//! `D_t = √V_t / α_t` (with the ε stabilizer folded in). The group step keeps
//!
//! ```text
//! Q_t/α_t = D_t − D_{t−1}
//! z_t     = z_{t−1} + m_t − (Q_t/α_t) ∘ x_t
//! x_{t+1} = prox(z_t, D_t, λ₁, λ₂₁, λ₂)
//! ```
//!
//! so that `Σ_s Q_s/α_s = D_t` telescopes exactly. With all λ = 0 the
//! iterates coincide with the vanilla update `x_{t+1} = x_t − m_t / D_t`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{self, Variant};
use crate::tensor::{check_len, DiagMatrix, ParamBlock};

/// Rule for the first moment, second moment and step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentKind {
    /// m = g, V = I, α_t = α/√t.
    Sgd,
    /// m = γ m + g, V = I, α_t = α.
    Momentum { gamma: f64 },
    /// m = g, V = Σ g² (ε added at t = 1), α_t = α.
    Adagrad,
    /// Bias-corrected exponential moments.
    Adam { beta1: f64, beta2: f64 },
    /// Adam with the running max of the raw second moment.
    AmsGrad { beta1: f64, beta2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSchedule {
    pub kind: MomentKind,
    pub epsilon: f64,
}

impl MomentSchedule {
    pub fn sgd() -> Self {
        Self { kind: MomentKind::Sgd, epsilon: 0.0 }
    }

    pub fn momentum(gamma: f64) -> Self {
        Self { kind: MomentKind::Momentum { gamma }, epsilon: 0.0 }
    }

    pub fn adagrad(epsilon: f64) -> Self {
        Self { kind: MomentKind::Adagrad, epsilon }
    }

    pub fn adam(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { kind: MomentKind::Adam { beta1, beta2 }, epsilon }
    }

    pub fn amsgrad(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { kind: MomentKind::AmsGrad { beta1, beta2 }, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be in [0, 1), got {v}")))
            }
        };
        match self.kind {
            MomentKind::Sgd | MomentKind::Adagrad => {}
            MomentKind::Momentum { gamma } => unit("gamma", gamma)?,
            MomentKind::Adam { beta1, beta2 } | MomentKind::AmsGrad { beta1, beta2 } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)?;
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// The γ of `m_t = γ m_{t−1} + g_t` this schedule most resembles.
    pub fn first_moment_decay(&self) -> f64 {
        match self.kind {
            MomentKind::Sgd | MomentKind::Adagrad => 0.0,
            MomentKind::Momentum { gamma } => gamma,
            MomentKind::Adam { beta1, .. } | MomentKind::AmsGrad { beta1, .. } => beta1,
        }
    }
}

/// Regularization strengths and the blocks they apply to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default)]
    pub lambda21: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_apply_to")]
    pub apply_to: BTreeSet<String>,
}

/// Default ℓ₂ strength for configs that leave it out.
pub const DEFAULT_LAMBDA2: f64 = 1e-5;

fn default_lambda2() -> f64 {
    DEFAULT_LAMBDA2
}

fn default_apply_to() -> BTreeSet<String> {
    [crate::model::EMBEDDING.to_string()].into()
}

/// Config-file defaults: no ℓ₁/ℓ₂₁, λ₂ = 1e-5, applied to the embedding.
impl Default for RegConfig {
    fn default() -> Self {
        Self {
            lambda2: DEFAULT_LAMBDA2,
            apply_to: default_apply_to(),
            ..Self::none()
        }
    }
}

impl RegConfig {
    /// All strengths zero.
    pub fn none() -> Self {
        Self {
            lambda1: 0.0,
            lambda21: 0.0,
            lambda2: 0.0,
            variant: Variant::PracticalS,
            apply_to: BTreeSet::new(),
        }
    }

    pub fn new(lambda1: f64, lambda21: f64, lambda2: f64, blocks: &[&str]) -> Self {
        Self {
            lambda1,
            lambda21,
            lambda2,
            variant: Variant::PracticalS,
            apply_to: blocks.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda21", self.lambda21),
            ("lambda2", self.lambda2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// (λ₁, λ₂₁, λ₂) effective for `block`; zero outside `apply_to`.
    pub fn strengths_for(&self, block: &str) -> (f64, f64, f64) {
        if self.apply_to.contains(block) {
            (self.lambda1, self.lambda21, self.lambda2)
        } else {
            (0.0, 0.0, 0.0)
        }
    }
}

/// Per-block optimizer accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Steps taken.
    pub t: u64,
    /// Dual accumulator z_t.
    pub z: Vec<f64>,
    /// Second moment V_t as used by the update (bias-corrected for Adam/AMSGrad).
    pub v: DiagMatrix,
    /// First moment m_t as used by the update.
    pub m: Vec<f64>,
    /// Raw first moment.
    pub m_hat: Vec<f64>,
    /// Raw second moment.
    pub v_hat: DiagMatrix,
    /// Running max of the raw second moment (AMSGrad).
    pub v_max: DiagMatrix,
    /// D_t = √V_t/α_t including the ε stabilizer.
    pub prev_scaled_sqrt_v: DiagMatrix,
    pub poisoned: bool,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            t: 0,
            z: vec![0.0; n],
            v: DiagMatrix::zeros(n),
            m: vec![0.0; n],
            m_hat: vec![0.0; n],
            v_hat: DiagMatrix::zeros(n),
            v_max: DiagMatrix::zeros(n),
            prev_scaled_sqrt_v: DiagMatrix::zeros(n),
            poisoned: false,
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

fn precheck(state: &mut OptimizerState, block: &ParamBlock, grad: &[f64], lr: f64) -> Result<()> {
    if state.poisoned {
        return Err(Error::AlreadyPoisoned(block.name.clone()));
    }
    check_len(block.len(), grad.len())?;
    check_len(block.len(), state.len())?;
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {lr}")));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        state.poisoned = true;
        return Err(Error::PoisonedState {
            block: block.name.clone(),
            index,
        });
    }
    Ok(())
}

/// Advances t, m_t and V_t and returns D_t = √V_t/α_t (ε folded in).
fn advance_moments(state: &mut OptimizerState, grad: &[f64], schedule: &MomentSchedule, lr: f64) -> Vec<f64> {
    state.t += 1;
    let t = state.t;
    let eps = schedule.epsilon;
    match schedule.kind {
        MomentKind::Sgd => {
            state.m.copy_from_slice(grad);
            state.v.diag.fill(1.0);
            vec![(t as f64).sqrt() / lr; grad.len()]
        }
        MomentKind::Momentum { gamma } => {
            for (m, g) in state.m.iter_mut().zip(grad) {
                *m = gamma * *m + g;
            }
            state.v.diag.fill(1.0);
            vec![1.0 / lr; grad.len()]
        }
        MomentKind::Adagrad => {
            state.m.copy_from_slice(grad);
            let first = if t == 1 { eps } else { 0.0 };
            for (v, g) in state.v.diag.iter_mut().zip(grad) {
                *v += g * g + first;
            }
            state.v.diag.iter().map(|v| v.sqrt() / lr).collect()
        }
        MomentKind::Adam { beta1, beta2 } | MomentKind::AmsGrad { beta1, beta2 } => {
            let amsgrad = matches!(schedule.kind, MomentKind::AmsGrad { .. });
            let c1 = 1.0 - beta1.powf(t as f64);
            let c2 = 1.0 - beta2.powf(t as f64);
            // Recomputed from the base ε every step; never compounded.
            let eps_t = eps / c2.sqrt();
            let mut d = Vec::with_capacity(grad.len());
            for (i, &g) in grad.iter().enumerate() {
                let mh = beta1 * state.m_hat[i] + (1.0 - beta1) * g;
                state.m_hat[i] = mh;
                state.m[i] = mh / c1;
                let vh = beta2 * state.v_hat.diag[i] + (1.0 - beta2) * g * g;
                state.v_hat.diag[i] = vh;
                let raw = if amsgrad {
                    let vm = state.v_max.diag[i].max(vh);
                    state.v_max.diag[i] = vm;
                    vm
                } else {
                    vh
                };
                let v = raw / c2;
                state.v.diag[i] = v;
                d.push((v.sqrt() + eps_t) / lr);
            }
            d
        }
    }
}

fn finish(state: &mut OptimizerState, block: &ParamBlock, d: Vec<f64>) -> Result<()> {
    state.prev_scaled_sqrt_v.diag = d;
    if let Some(index) = state
        .z
        .iter()
        .chain(block.values.iter())
        .position(|v| !v.is_finite())
    {
        state.poisoned = true;
        return Err(Error::PoisonedState {
            block: block.name.clone(),
            index: index % block.len().max(1),
        });
    }
    Ok(())
}

/// One iteration of the generic regularized framework on `block`.
pub fn step_group(
    state: &mut OptimizerState,
    block: &mut ParamBlock,
    grad: &[f64],
    schedule: &MomentSchedule,
    lr: f64,
    reg: &RegConfig,
) -> Result<()> {
    precheck(state, block, grad, lr)?;
    let (lambda1, lambda21, lambda2) = reg.strengths_for(&block.name);
    let d = advance_moments(state, grad, schedule, lr);
    for (i, (&di, &xi)) in d.iter().zip(&block.values).enumerate() {
        let q = di - state.prev_scaled_sqrt_v.diag[i];
        state.z[i] += state.m[i] - q * xi;
    }
    // A coordinate that has never seen a gradient (ε = 0) has a zero
    // diagonal and z = 0; its minimizer is 0 for any positive stand-in.
    let mut diag = d.clone();
    for (i, di) in diag.iter_mut().enumerate() {
        if !(*di + 2.0 * lambda2 > 0.0) {
            if state.z[i] == 0.0 && *di == 0.0 {
                *di = 1.0;
            } else {
                state.prev_scaled_sqrt_v.diag = d;
                return Err(Error::NonPositiveDiagonal {
                    index: i,
                    value: diag[i] + 2.0 * lambda2,
                });
            }
        }
    }
    let group_size = block.group_size.unwrap_or(1);
    prox::solve_into(
        &state.z,
        &diag,
        group_size,
        lambda1,
        lambda21,
        lambda2,
        reg.variant,
        &mut block.values,
    );
    finish(state, block, d)
}

/// The plain adaptive update `x ← x − m_t / D_t`.
pub fn vanilla_step(
    state: &mut OptimizerState,
    block: &mut ParamBlock,
    grad: &[f64],
    schedule: &MomentSchedule,
    lr: f64,
) -> Result<()> {
    precheck(state, block, grad, lr)?;
    let d = advance_moments(state, grad, schedule, lr);
    if let Some((index, &di)) = d
        .iter()
        .zip(&state.m)
        .enumerate()
        .find(|(_, (&di, &m))| !(di > 0.0) && !(di == 0.0 && m == 0.0))
        .map(|(i, (di, _))| (i, di))
    {
        state.prev_scaled_sqrt_v.diag = d.clone();
        return Err(Error::NonPositiveDiagonal { index, value: di });
    }
    for ((x, m), di) in block.values.iter_mut().zip(&state.m).zip(&d) {
        if *m != 0.0 {
            *x -= m / di;
        }
    }
    finish(state, block, d)
}

/// FTRL-Proximal settings. ε is added to the squared-gradient sum on the
/// first step, like Adagrad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtrlConfig {
    pub lr: f64,
    pub lambda1: f64,
    #[serde(default)]
    pub epsilon: f64,
}

/// Per-coordinate FTRL-Proximal step. Uses `state.v` for the running sum
/// of squared gradients and `state.z` for the linear term.
pub fn ftrl_step(state: &mut OptimizerState, block: &mut ParamBlock, grad: &[f64], cfg: &FtrlConfig) -> Result<()> {
    precheck(state, block, grad, cfg.lr)?;
    state.t += 1;
    let first = if state.t == 1 { cfg.epsilon } else { 0.0 };
    let mut d = Vec::with_capacity(grad.len());
    for (i, &g) in grad.iter().enumerate() {
        let n_prev = state.v.diag[i];
        let n = n_prev + g * g + first;
        state.v.diag[i] = n;
        let sigma = (n.sqrt() - n_prev.sqrt()) / cfg.lr;
        state.z[i] += g - sigma * block.values[i];
        state.m[i] = g;
        let z = state.z[i];
        block.values[i] = if z.abs() <= cfg.lambda1 {
            0.0
        } else {
            -(z - z.signum() * cfg.lambda1) / (n.sqrt() / cfg.lr)
        };
        d.push(n.sqrt() / cfg.lr);
    }
    finish(state, block, d)
}

/// Optimizer family names accepted by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Momentum,
    Adagrad,
    Adam,
    Amsgrad,
    Ftrl,
}

impl OptimizerName {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerName::Sgd => "sgd",
            OptimizerName::Momentum => "momentum",
            OptimizerName::Adagrad => "adagrad",
            OptimizerName::Adam => "adam",
            OptimizerName::Amsgrad => "amsgrad",
            OptimizerName::Ftrl => "ftrl",
        }
    }
}

/// A fully specified optimizer: family, vanilla or group form, and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: OptimizerName,
    #[serde(default)]
    pub group: bool,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_gamma() -> f64 {
    0.9
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn new(name: OptimizerName, group: bool, lr: f64) -> Self {
        Self {
            name,
            group,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            gamma: default_gamma(),
            epsilon: default_epsilon(),
        }
    }

    /// Parses `adam`, `group-adam`, `group_adagrad`, `ftrl`, ...
    pub fn parse_name(s: &str) -> std::result::Result<(OptimizerName, bool), String> {
        let lower = s.to_ascii_lowercase();
        let (group, base) = match lower
            .strip_prefix("group-")
            .or_else(|| lower.strip_prefix("group_"))
        {
            Some(rest) => (true, rest.to_string()),
            None => (false, lower.clone()),
        };
        let name = match base.as_str() {
            "sgd" => OptimizerName::Sgd,
            "momentum" => OptimizerName::Momentum,
            "adagrad" => OptimizerName::Adagrad,
            "adam" => OptimizerName::Adam,
            "amsgrad" => OptimizerName::Amsgrad,
            "ftrl" => OptimizerName::Ftrl,
            other => return Err(format!("unknown optimizer `{other}`")),
        };
        if group && name == OptimizerName::Ftrl {
            return Err("ftrl has no group variant".to_string());
        }
        Ok((name, group))
    }

    pub fn display_name(&self) -> String {
        if self.group {
            format!("group-{}", self.name.as_str())
        } else {
            self.name.as_str().to_string()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group && self.name == OptimizerName::Ftrl {
            return Err(Error::InvalidParameter("ftrl has no group variant".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("lr must be > 0, got {}", self.lr)));
        }
        if let Some(s) = self.schedule() {
            s.validate()?;
        }
        Ok(())
    }

    /// Moment schedule; `None` for FTRL.
    pub fn schedule(&self) -> Option<MomentSchedule> {
        Some(match self.name {
            OptimizerName::Sgd => MomentSchedule::sgd(),
            OptimizerName::Momentum => MomentSchedule::momentum(self.gamma),
            OptimizerName::Adagrad => MomentSchedule::adagrad(self.epsilon),
            OptimizerName::Adam => MomentSchedule::adam(self.beta1, self.beta2, self.epsilon),
            OptimizerName::Amsgrad => MomentSchedule::amsgrad(self.beta1, self.beta2, self.epsilon),
            OptimizerName::Ftrl => return None,
        })
    }

    /// Applies one step to `block`. Vanilla optimizers ignore `reg` except
    /// FTRL, which uses λ₁ on the blocks in `reg.apply_to`.
    pub fn step(&self, state: &mut OptimizerState, block: &mut ParamBlock, grad: &[f64], reg: &RegConfig) -> Result<()> {
        match self.schedule() {
            None => {
                let (lambda1, _, _) = reg.strengths_for(&block.name);
                let cfg = FtrlConfig {
                    lr: self.lr,
                    lambda1,
                    epsilon: self.epsilon,
                };
                ftrl_step(state, block, grad, &cfg)
            }
            Some(schedule) if self.group => step_group(state, block, grad, &schedule, self.lr, reg),
            Some(schedule) => vanilla_step(state, block, grad, &schedule, self.lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(values: Vec<f64>) -> ParamBlock {
        ParamBlock::ungrouped("w", values)
    }

    #[test]
    fn group_adagrad_single_step_by_hand() {
        let mut state = OptimizerState::new(1);
        let mut x = block(vec![0.0]);
        step_group(&mut state, &mut x, &[2.0], &MomentSchedule::adagrad(0.0), 1.0, &RegConfig::none()).unwrap();
        assert_eq!(state.v.diag, vec![4.0]);
        assert_eq!(state.prev_scaled_sqrt_v.diag, vec![2.0]);
        assert_eq!(state.z, vec![2.0]);
        assert_eq!(x.values, vec![-1.0]);
    }

    #[test]
    fn huge_group_penalty_zeroes_every_group() {
        let mut state = OptimizerState::new(6);
        let mut x = ParamBlock::grouped("embedding", vec![0.3, -0.2, 0.5, 1.0, 2.0, -3.0], 3).unwrap();
        let reg = RegConfig::new(0.0, 1e9, 0.0, &["embedding"]);
        step_group(
            &mut state,
            &mut x,
            &[0.1, 0.2, -0.3, 0.4, 0.5, 0.6],
            &MomentSchedule::adagrad(1e-8),
            0.1,
            &reg,
        )
        .unwrap();
        assert!(x.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blocks_outside_apply_to_ignore_penalties() {
        let reg = RegConfig::new(0.0, 1e9, 0.0, &["embedding"]);
        let mut s1 = OptimizerState::new(2);
        let mut s2 = OptimizerState::new(2);
        let mut a = block(vec![0.5, -0.5]);
        let mut b = a.clone();
        let sched = MomentSchedule::adam(0.9, 0.999, 1e-8);
        step_group(&mut s1, &mut a, &[0.1, 0.2], &sched, 0.01, &reg).unwrap();
        vanilla_step(&mut s2, &mut b, &[0.1, 0.2], &sched, 0.01).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn vanilla_sgd_first_step() {
        let mut state = OptimizerState::new(1);
        let mut x = block(vec![1.0]);
        vanilla_step(&mut state, &mut x, &[1.0], &MomentSchedule::sgd(), 1.0).unwrap();
        assert_eq!(x.values, vec![0.0]);
    }

    #[test]
    fn momentum_first_step_equals_gradient() {
        let mut state = OptimizerState::new(1);
        let mut x = block(vec![3.0]);
        vanilla_step(&mut state, &mut x, &[1.0], &MomentSchedule::momentum(0.9), 0.5).unwrap();
        assert_eq!(state.m, vec![1.0]);
        assert_eq!(x.values, vec![2.5]);
    }

    #[test]
    fn group_momentum_q_vanishes_after_first_step() {
        let mut state = OptimizerState::new(1);
        let mut x = block(vec![1.0]);
        let sched = MomentSchedule::momentum(0.5);
        step_group(&mut state, &mut x, &[1.0], &sched, 0.1, &RegConfig::none()).unwrap();
        // z₁ = m₁ − x₁/α
        assert!((state.z[0] - (1.0 - 10.0)).abs() < 1e-12);
        let z1 = state.z[0];
        let x2 = x.values[0];
        step_group(&mut state, &mut x, &[2.0], &sched, 0.1, &RegConfig::none()).unwrap();
        // Q₂ = 0, so z₂ = z₁ + m₂ with m₂ = 0.5·1 + 2.
        assert!((state.z[0] - (z1 + 2.5)).abs() < 1e-12);
        assert!((x.values[0] - (x2 - 0.1 * 2.5)).abs() < 1e-12);
    }

    #[test]
    fn adam_epsilon_does_not_compound() {
        let eps = 1e-3;
        let (b1, b2, lr) = (0.9, 0.99, 0.1);
        let mut state = OptimizerState::new(1);
        let mut x = block(vec![0.2]);
        let sched = MomentSchedule::adam(b1, b2, eps);
        for t in 1..=2 {
            step_group(&mut state, &mut x, &[0.5], &sched, lr, &RegConfig::none()).unwrap();
            let d = state.prev_scaled_sqrt_v.diag[0];
            let eps_t = (d * lr) - state.v.diag[0].sqrt();
            let expect = eps / (1.0 - b2.powi(t)).sqrt();
            assert!((eps_t - expect).abs() < 1e-12, "t={t}: {eps_t} vs {expect}");
        }
    }

    #[test]
    fn nan_gradient_poisons_state() {
        let mut state = OptimizerState::new(2);
        let mut x = block(vec![0.0, 0.0]);
        let sched = MomentSchedule::adagrad(1e-8);
        let err = step_group(&mut state, &mut x, &[1.0, f64::NAN], &sched, 0.1, &RegConfig::none()).unwrap_err();
        assert!(matches!(err, Error::PoisonedState { index: 1, .. }));
        assert!(state.poisoned);
        let err = step_group(&mut state, &mut x, &[1.0, 1.0], &sched, 0.1, &RegConfig::none()).unwrap_err();
        assert!(matches!(err, Error::AlreadyPoisoned(_)));
        assert!(err.is_numeric());
    }

    #[test]
    fn unseen_coordinates_without_epsilon_stay_put() {
        let sched = MomentSchedule::adagrad(0.0);
        let mut state = OptimizerState::new(4);
        let mut x = ParamBlock::grouped("embedding", vec![0.0; 4], 2).unwrap();
        let reg = RegConfig::new(0.0, 0.1, 0.0, &["embedding"]);
        step_group(&mut state, &mut x, &[1.0, -1.0, 0.0, 0.0], &sched, 0.1, &reg).unwrap();
        assert_eq!(&x.values[2..], &[0.0, 0.0]);
        let mut state = OptimizerState::new(2);
        let mut y = block(vec![0.5, 0.5]);
        vanilla_step(&mut state, &mut y, &[1.0, 0.0], &sched, 0.1).unwrap();
        assert_eq!(y.values[1], 0.5);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut state = OptimizerState::new(2);
        let mut x = block(vec![0.0, 0.0]);
        let err = vanilla_step(&mut state, &mut x, &[1.0], &MomentSchedule::sgd(), 0.1).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
        assert!(!state.poisoned);
    }

    #[test]
    fn ftrl_dead_zone() {
        let mut state = OptimizerState::new(3);
        let mut x = block(vec![0.5, -0.5, 0.1]);
        let cfg = FtrlConfig { lr: 0.1, lambda1: 100.0, epsilon: 0.0 };
        ftrl_step(&mut state, &mut x, &[0.3, -0.2, 0.1], &cfg).unwrap();
        assert!(state.z.iter().all(|z| z.abs() <= 100.0));
        assert_eq!(x.values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn optimizer_names_parse() {
        assert_eq!(OptimizerSpec::parse_name("group-adam").unwrap(), (OptimizerName::Adam, true));
        assert_eq!(OptimizerSpec::parse_name("Adagrad").unwrap(), (OptimizerName::Adagrad, false));
        assert!(OptimizerSpec::parse_name("group-ftrl").is_err());
        assert!(OptimizerSpec::parse_name("rmsprop").is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(MomentSchedule::adam(1.0, 0.999, 1e-8).validate().is_err());
        assert!(MomentSchedule::momentum(-0.1).validate().is_err());
        assert!(MomentSchedule::adagrad(-1.0).validate().is_err());
        assert!(MomentSchedule::amsgrad(0.9, 0.999, 1e-8).validate().is_ok());
    }
}
