//! Online convex optimization runs that measure empirical regret
//!
//! ```text
//! R_t = Σ_{s≤t} f_s(x_s) − min_x Σ_{s≤t} f_s(x)
//! ```
//!
//! for the group optimizers, fit its log-log growth rate, and evaluate the
//! constant-step regret bound with constants measured from the run.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{step_group, MomentKind, MomentSchedule, OptimizerSpec, OptimizerState, RegConfig};
use crate::tensor::{dot, inf_norm, ParamBlock, Rng};

pub const BLOCK: &str = "x";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// f_t(x) = ½‖x − a_t‖², a_t = centre + uniform noise in [−b, b]^d.
    Quadratic,
    /// f_t(x) = ½‖x − a‖² for one fixed a.
    StationaryQuadratic,
    /// f_t(x) = ½‖x − a_t‖² with a_t alternating between +b·1 and −b·1.
    AlternatingQuadratic,
    /// f_t(x) = ½‖x − x₁‖²; the start is already optimal.
    ZeroGradient,
    /// f_t(x) = log(1 + exp(−y_t ⟨u_t, x⟩)) on one labelled sample.
    Logistic,
}

impl std::str::FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.replace('-', "_").as_str() {
            "quadratic" => ProblemKind::Quadratic,
            "stationary_quadratic" | "stationary" => ProblemKind::StationaryQuadratic,
            "alternating_quadratic" | "alternating" => ProblemKind::AlternatingQuadratic,
            "zero_gradient" | "zero" => ProblemKind::ZeroGradient,
            "logistic" => ProblemKind::Logistic,
            other => return Err(format!("unknown problem kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineProblem {
    pub kind: ProblemKind,
    pub dim: usize,
    pub horizon: usize,
    /// Half-width b of the box the data is drawn from.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_radius() -> f64 {
    1.0
}

/// Step-size rule applied on top of the optimizer's base rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    /// α_t = α.
    #[default]
    Constant,
    /// α_t = α/√t.
    InvSqrt,
}

impl std::str::FromStr for LrDecay {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "constant" => Ok(LrDecay::Constant),
            "inv-sqrt" | "inv_sqrt" => Ok(LrDecay::InvSqrt),
            other => Err(format!("unknown lr decay `{other}`")),
        }
    }
}

/// Materialized loss sequence.
enum Stream {
    Quadratic { targets: Vec<Vec<f64>> },
    Logistic { features: Vec<Vec<f64>>, labels: Vec<f64> },
}

impl OnlineProblem {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter("radius must be positive".into()));
        }
        Ok(())
    }

    fn stream(&self) -> Stream {
        let mut rng = Rng::new(self.seed);
        let (d, b, n) = (self.dim, self.radius, self.horizon);
        match self.kind {
            ProblemKind::Quadratic => {
                let centre = rng.uniform_vec(d, -0.5 * b, 0.5 * b);
                let targets = (0..n)
                    .map(|_| centre.iter().map(|c| c + rng.uniform(-b, b)).collect())
                    .collect();
                Stream::Quadratic { targets }
            }
            ProblemKind::StationaryQuadratic => {
                let a = rng.uniform_vec(d, -b, b);
                Stream::Quadratic { targets: vec![a; n] }
            }
            ProblemKind::AlternatingQuadratic => Stream::Quadratic {
                targets: (0..n)
                    .map(|t| vec![if t % 2 == 0 { b } else { -b }; d])
                    .collect(),
            },
            ProblemKind::ZeroGradient => Stream::Quadratic {
                targets: vec![vec![0.0; d]; n],
            },
            ProblemKind::Logistic => {
                let truth = rng.uniform_vec(d, -b, b);
                let mut features = Vec::with_capacity(n);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let u = rng.uniform_vec(d, -1.0, 1.0);
                    let p = 1.0 / (1.0 + (-dot(&u, &truth)).exp());
                    labels.push(if rng.bernoulli(p) { 1.0 } else { -1.0 });
                    features.push(u);
                }
                Stream::Logistic { features, labels }
            }
        }
    }
}

impl Stream {
    fn loss_and_grad(&self, t: usize, x: &[f64]) -> (f64, Vec<f64>) {
        match self {
            Stream::Quadratic { targets } => {
                let diff: Vec<f64> = x.iter().zip(&targets[t]).map(|(x, a)| x - a).collect();
                (0.5 * dot(&diff, &diff), diff)
            }
            Stream::Logistic { features, labels } => {
                let (u, y) = (&features[t], labels[t]);
                let margin = y * dot(u, x);
                let loss = softplus(-margin);
                let coef = -y * sigmoid(-margin);
                (loss, u.iter().map(|ui| coef * ui).collect())
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::model::sigmoid(x)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Minimizer and minimum of Σ_{s<t} f_s for the logistic stream, by damped
/// Newton on the first `t` samples.
fn logistic_comparator(features: &[Vec<f64>], labels: &[f64], t: usize, dim: usize) -> (Vec<f64>, f64) {
    let value = |x: &[f64]| -> f64 {
        features[..t]
            .iter()
            .zip(&labels[..t])
            .map(|(u, y)| softplus(-y * dot(u, x)))
            .sum()
    };
    let mut x = vec![0.0; dim];
    let mut fx = value(&x);
    for _ in 0..200 {
        let mut g = vec![0.0; dim];
        let mut h = vec![0.0; dim * dim];
        for (u, &y) in features[..t].iter().zip(&labels[..t]) {
            let m = y * dot(u, &x);
            let s = sigmoid(-m);
            let w = s * (1.0 - s);
            for i in 0..dim {
                g[i] -= y * s * u[i];
                for j in 0..dim {
                    h[i * dim + j] += w * u[i] * u[j];
                }
            }
        }
        if inf_norm(&g) <= 1e-12 * (t as f64).max(1.0) {
            break;
        }
        for i in 0..dim {
            h[i * dim + i] += 1e-12;
        }
        let step = solve_spd(&h, &g, dim);
        let decrement = dot(&g, &step);
        if decrement <= 1e-9 * (1.0 + fx.abs()) {
            // Inside the quadratic region the full step is safe, and the
            // objective can no longer resolve the decrease anyway.
            for (xi, si) in x.iter_mut().zip(&step) {
                *xi -= si;
            }
            fx = value(&x);
            continue;
        }
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(x, s)| x - scale * s).collect();
            let ft = value(&trial);
            if ft <= fx - 1e-4 * scale * decrement || scale < 1e-10 {
                x = trial;
                fx = ft;
                break;
            }
            scale *= 0.5;
        }
    }
    (x, fx)
}

/// Cholesky solve of the symmetric positive definite system `h x = g`.
fn solve_spd(h: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = s.max(1e-300).sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = g[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// t = 1, 2, 4, …, plus the horizon itself.
pub fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = 1;
    while t <= horizon {
        out.push(t);
        t *= 2;
    }
    if out.last() != Some(&horizon) {
        out.push(horizon);
    }
    out
}

/// Least-squares slope of ln R against ln t over the second half of the
/// points. `None` if fewer than two points or any R ≤ 0 in that range.
pub fn fit_slope(points: &[RegretPoint]) -> Option<f64> {
    let tail = &points[points.len() / 2..];
    if tail.len() < 2 || tail.iter().any(|p| !(p.regret > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = tail.iter().map(|p| (p.t as f64).ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.regret.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub t: usize,
    pub regret: f64,
}

/// Everything a finished run needs for its summary and bound check.
#[derive(Debug, Clone)]
pub struct RegretRun {
    pub problem: OnlineProblem,
    pub optimizer: OptimizerSpec,
    pub reg: RegConfig,
    pub lr_decay: LrDecay,
    pub curve: Vec<RegretPoint>,
    /// x_1 … x_T.
    pub iterates: Vec<Vec<f64>>,
    /// m_0 … m_{T−1} (the first moment before each step's gradient).
    pub prev_moments: Vec<Vec<f64>>,
    pub max_grad_inf: f64,
    /// max_t max_i V_{t−1,i}/V_{t,i} over the raw second moment.
    pub kappa: f64,
    /// Comparator over the full horizon.
    pub x_star: Vec<f64>,
}

impl RegretRun {
    pub fn final_regret(&self) -> f64 {
        self.curve.last().map(|p| p.regret).unwrap_or(0.0)
    }

    pub fn slope(&self) -> Option<f64> {
        fit_slope(&self.curve)
    }

    /// Fraction of consecutive checkpoints with R non-decreasing.
    pub fn monotone_fraction(&self) -> f64 {
        if self.curve.len() < 2 {
            return 1.0;
        }
        let ok = self
            .curve
            .windows(2)
            .filter(|w| w[1].regret >= w[0].regret - 1e-12 * w[0].regret.abs().max(1.0))
            .count();
        ok as f64 / (self.curve.len() - 1) as f64
    }

    /// Fraction of steps where ⟨m_{t−1}, x_t − x*⟩ ≥ 0.
    pub fn premise_fraction(&self) -> f64 {
        let ok = self
            .iterates
            .iter()
            .zip(&self.prev_moments)
            .filter(|(x, m)| {
                let diff: Vec<f64> = x.iter().zip(&self.x_star).map(|(a, b)| a - b).collect();
                dot(m, &diff) >= 0.0
            })
            .count();
        ok as f64 / self.iterates.len().max(1) as f64
    }
}

/// Runs `optimizer` (always in group form) on `problem`. The comparator is
/// exact: a running mean for quadratics, Newton for logistic at each
/// checkpoint.
pub fn run_regret(problem: &OnlineProblem, optimizer: &OptimizerSpec, reg: &RegConfig, lr_decay: LrDecay) -> Result<RegretRun> {
    problem.validate()?;
    optimizer.validate()?;
    reg.validate()?;
    let schedule: MomentSchedule = optimizer
        .schedule()
        .ok_or_else(|| Error::InvalidParameter("the regret lab needs a moment-based optimizer".into()))?;
    let stream = problem.stream();
    let d = problem.dim;
    let t_max = problem.horizon;
    let marks = checkpoints(t_max);

    let mut block = ParamBlock::grouped(BLOCK, vec![0.0; d], 1)?;
    let mut state = OptimizerState::new(d);
    let mut iterates = Vec::with_capacity(t_max);
    let mut prev_moments = Vec::with_capacity(t_max);
    let mut cumulative = 0.0;
    let mut max_grad_inf = 0.0_f64;
    let mut kappa = 0.0_f64;
    let mut prev_raw: Option<Vec<f64>> = None;

    // Welford accumulators for the quadratic comparator.
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut curve = Vec::with_capacity(marks.len());
    let mut next_mark = 0;

    for t in 0..t_max {
        let x = block.values.clone();
        let (loss, grad) = stream.loss_and_grad(t, &x);
        if !loss.is_finite() {
            return Err(Error::Divergent(t + 1));
        }
        cumulative += loss;
        max_grad_inf = max_grad_inf.max(inf_norm(&grad));
        iterates.push(x);
        prev_moments.push(state.m.clone());

        if let Stream::Quadratic { targets } = &stream {
            let n = (t + 1) as f64;
            for i in 0..d {
                let delta = targets[t][i] - mean[i];
                mean[i] += delta / n;
                m2[i] += delta * (targets[t][i] - mean[i]);
            }
        }
        if marks[next_mark] == t + 1 {
            let best = match &stream {
                Stream::Quadratic { .. } => 0.5 * m2.iter().sum::<f64>(),
                Stream::Logistic { features, labels } => logistic_comparator(features, labels, t + 1, d).1,
            };
            let regret = cumulative - best;
            if !regret.is_finite() {
                return Err(Error::Divergent(t + 1));
            }
            curve.push(RegretPoint { t: t + 1, regret });
            next_mark += 1;
        }

        let lr = match lr_decay {
            LrDecay::Constant => optimizer.lr,
            LrDecay::InvSqrt => optimizer.lr / ((t + 1) as f64).sqrt(),
        };
        step_group(&mut state, &mut block, &grad, &schedule, lr, reg).map_err(|e| {
            if e.is_numeric() {
                Error::Divergent(t + 1)
            } else {
                e
            }
        })?;
        let raw = match schedule.kind {
            MomentKind::Adam { .. } | MomentKind::AmsGrad { .. } => &state.v_hat.diag,
            _ => &state.v.diag,
        };
        if let Some(prev) = &prev_raw {
            for (p, v) in prev.iter().zip(raw) {
                if *v > 0.0 {
                    kappa = kappa.max(p / v);
                } else if *p > 0.0 {
                    kappa = f64::INFINITY;
                }
            }
        }
        prev_raw = Some(raw.clone());
    }

    let x_star = match &stream {
        Stream::Quadratic { .. } => mean,
        Stream::Logistic { features, labels } => logistic_comparator(features, labels, t_max, d).0,
    };
    Ok(RegretRun {
        problem: problem.clone(),
        optimizer: optimizer.clone(),
        reg: reg.clone(),
        lr_decay,
        curve,
        iterates,
        prev_moments,
        max_grad_inf,
        kappa,
        x_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub g: f64,
    pub d1: f64,
    pub d2: f64,
    pub kappa: f64,
    pub nu: f64,
    /// Whether the step-size and second-moment conditions of the bound hold.
    pub condition_met: bool,
    /// Right-hand side of the bound; `None` when the condition is unmet.
    pub rhs: Option<f64>,
    /// R_T ≤ rhs; `None` when the condition is unmet.
    pub holds: Option<bool>,
}

/// Constant-step regret bound for dimension `d` after `t` steps:
/// d·D1·(λ₁ + λ₂₁·(√T·G/(2α) + λ₂)^½ + λ₂·D1) + d·G·(D2²/(2α) + α/(1−ν)²)·√T.
#[allow(clippy::too_many_arguments)]
pub fn regret_bound_rhs(d: usize, t: usize, alpha: f64, g: f64, d1: f64, d2: f64, nu: f64, reg: (f64, f64, f64)) -> f64 {
    let (l1, l21, l2) = reg;
    let d = d as f64;
    let sqrt_t = (t as f64).sqrt();
    d * d1 * (l1 + l21 * (sqrt_t * g / (2.0 * alpha) + l2).sqrt() + l2 * d1)
        + d * g * (d2 * d2 / (2.0 * alpha) + alpha / (1.0 - nu).powi(2)) * sqrt_t
}

/// G = max‖g_t‖∞, D1 = ‖x*‖∞, D2 = max‖x_t − x*‖∞, plus ν and the bound.
///
/// The bound assumes α_t = α and V_t = η V_{t−1} + g_t². Adagrad is the
/// η = 1 case (ν = γ = 0). Adam and AMSGrad have η = β₂ < 1 and need
/// η ≥ β₁ and κ < 1, giving ν = max(β₁, κ). Other schedules are reported as
/// not meeting the condition.
pub fn measure_bound_constants(run: &RegretRun) -> BoundConstants {
    let g = run.max_grad_inf;
    let d1 = inf_norm(&run.x_star);
    let d2 = run
        .iterates
        .iter()
        .map(|x| x.iter().zip(&run.x_star).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
        .fold(0.0_f64, f64::max);
    let schedule = run.optimizer.schedule();
    let (condition_met, nu) = match schedule.map(|s| s.kind) {
        Some(MomentKind::Adagrad) => (true, 0.0),
        Some(MomentKind::Adam { beta1, beta2 }) | Some(MomentKind::AmsGrad { beta1, beta2 }) => {
            (run.kappa < 1.0 && beta2 >= beta1, beta1.max(run.kappa))
        }
        _ => (false, f64::NAN),
    };
    let condition_met = condition_met && run.lr_decay == LrDecay::Constant;
    let (l1, l21, l2) = run.reg.strengths_for(BLOCK);
    let rhs = condition_met.then(|| {
        regret_bound_rhs(
            run.problem.dim,
            run.problem.horizon,
            run.optimizer.lr,
            g,
            d1,
            d2,
            nu,
            (l1, l21, l2),
        )
    });
    BoundConstants {
        g,
        d1,
        d2,
        kappa: run.kappa,
        nu,
        condition_met,
        rhs,
        holds: rhs.map(|r| run.final_regret() <= r),
    }
}

/// Serializable run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegretSummary {
    pub problem: OnlineProblem,
    pub optimizer: String,
    pub lr: f64,
    pub lr_decay: LrDecay,
    pub final_regret: f64,
    pub slope: Option<f64>,
    pub monotone_fraction: f64,
    pub premise_fraction: f64,
    pub bound: BoundConstants,
    pub curve: Vec<RegretPoint>,
}

impl RegretRun {
    pub fn summary(&self) -> RegretSummary {
        RegretSummary {
            problem: self.problem.clone(),
            optimizer: self.optimizer.display_name(),
            lr: self.optimizer.lr,
            lr_decay: self.lr_decay,
            final_regret: self.final_regret(),
            slope: self.slope(),
            monotone_fraction: self.monotone_fraction(),
            premise_fraction: self.premise_fraction(),
            bound: measure_bound_constants(self),
            curve: self.curve.clone(),
        }
    }
}

/// Writes `t,regret` rows.
pub fn write_regret_csv<W: Write>(mut out: W, curve: &[RegretPoint]) -> Result<()> {
    writeln!(out, "t,regret")?;
    for p in curve {
        writeln!(out, "{},{}", p.t, p.regret)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerName;

    fn adagrad(lr: f64) -> OptimizerSpec {
        OptimizerSpec::new(OptimizerName::Adagrad, true, lr)
    }

    fn problem(kind: ProblemKind, horizon: usize) -> OnlineProblem {
        OnlineProblem {
            kind,
            dim: 3,
            horizon,
            radius: 1.0,
            seed: 4,
        }
    }

    #[test]
    fn zero_gradient_problem_has_zero_regret() {
        let run = run_regret(&problem(ProblemKind::ZeroGradient, 1024), &adagrad(0.5), &RegConfig::none(), LrDecay::Constant).unwrap();
        assert!(run.curve.iter().all(|p| p.regret == 0.0));
        assert_eq!(run.slope(), None);
        let b = measure_bound_constants(&run);
        assert_eq!(b.d2, 0.0);
        assert_eq!(b.holds, Some(true));
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(checkpoints(8), vec![1, 2, 4, 8]);
        assert_eq!(checkpoints(10), vec![1, 2, 4, 8, 10]);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<RegretPoint> = (0..12)
            .map(|k| RegretPoint {
                t: 1 << k,
                regret: 3.0 * ((1u64 << k) as f64).powf(0.5),
            })
            .collect();
        assert!((fit_slope(&pts).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_bound_has_no_regularizer_terms() {
        let with = regret_bound_rhs(4, 100, 0.5, 2.0, 1.0, 3.0, 0.2, (0.0, 0.0, 0.0));
        let expect = 4.0 * 2.0 * (9.0 / 1.0 + 0.5 / 0.64) * 10.0;
        assert!((with - expect).abs() < 1e-9);
    }

    #[test]
    fn logistic_comparator_is_stationary() {
        let p = OnlineProblem {
            kind: ProblemKind::Logistic,
            dim: 3,
            horizon: 400,
            radius: 1.0,
            seed: 2,
        };
        let Stream::Logistic { features, labels } = p.stream() else { unreachable!() };
        let (x, _) = logistic_comparator(&features, &labels, 400, 3);
        let mut g = [0.0; 3];
        for (u, y) in features.iter().zip(&labels) {
            let s = sigmoid(-y * dot(u, &x));
            for i in 0..3 {
                g[i] -= y * s * u[i];
            }
        }
        assert!(inf_norm(&g) < 1e-8, "{g:?}");
    }

    #[test]
    fn quadratic_comparator_matches_direct_sum() {
        let p = problem(ProblemKind::Quadratic, 64);
        let run = run_regret(&p, &adagrad(0.5), &RegConfig::none(), LrDecay::Constant).unwrap();
        let Stream::Quadratic { targets } = p.stream() else { unreachable!() };
        let losses: f64 = run
            .iterates
            .iter()
            .zip(&targets)
            .map(|(x, a)| 0.5 * x.iter().zip(a).map(|(x, a)| (x - a).powi(2)).sum::<f64>())
            .sum();
        let best: f64 = targets
            .iter()
            .map(|a| 0.5 * a.iter().zip(&run.x_star).map(|(a, m)| (a - m).powi(2)).sum::<f64>())
            .sum();
        assert!((run.final_regret() - (losses - best)).abs() < 1e-9);
    }

    #[test]
    fn csv_format() {
        let mut buf = Vec::new();
        write_regret_csv(&mut buf, &[RegretPoint { t: 1, regret: 0.5 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,regret\n1,0.5\n");
    }
}
