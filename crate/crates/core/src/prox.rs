//! Closed-form proximal step for the sparse group lasso penalty under a
//! diagonal quadratic, and an independent iterative oracle that certifies
//! optimality through an explicit subgradient.
//!
//! The step minimizes
//!
//! ```text
//! F(x) = z·x + ½ xᵀCx + λ₁‖x‖₁ + Σ_g λ₂₁ √d ‖A_g^{1/2} x_g‖₂ + λ₂‖x‖₂²,   A = C/2 + λ₂I
//! ```
//!
//! for diagonal `C ⪰ 0`. The solution soft-thresholds `z` into `s` and then
//! shrinks each group of `(C + 2λ₂I)⁻¹ s` by `max(1 − √d λ₂₁ / n_g, 0)`. The
//! gating norm `n_g` is `‖A_g^{-1/2} s_g‖` for [`Variant::ExactSTilde`] and
//! `‖s_g‖` for [`Variant::PracticalS`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_len, DiagMatrix};

/// Which norm gates the group shrinkage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Gate on the rescaled vector `s̃ = A^{-1/2} s`; exact minimizer of `F`.
    ExactSTilde,
    /// Gate on `s` itself, independent of the second moments and of λ₂.
    #[default]
    PracticalS,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::ExactSTilde => "exact",
            Variant::PracticalS => "practical",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact" | "exact_s_tilde" | "s-tilde" | "stilde" => Ok(Variant::ExactSTilde),
            "practical" | "practical_s" | "s" => Ok(Variant::PracticalS),
            other => Err(format!("unknown variant `{other}` (expected `practical` or `exact`)")),
        }
    }
}

/// Inputs of one proximal step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxProblem {
    pub z: Vec<f64>,
    /// Σ_s Q_s/α_s, elementwise ≥ 0.
    pub cum_diag: DiagMatrix,
    pub group_size: usize,
    pub lambda1: f64,
    pub lambda21: f64,
    pub lambda2: f64,
    pub variant: Variant,
}

impl ProxProblem {
    pub fn validate(&self) -> Result<()> {
        check_len(self.z.len(), self.cum_diag.len())?;
        if self.group_size == 0 || self.z.len() % self.group_size != 0 {
            return Err(Error::BadGrouping {
                len: self.z.len(),
                group_size: self.group_size,
            });
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda21", self.lambda21),
            ("lambda2", self.lambda2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some((i, &c)) = self.cum_diag.diag.iter().enumerate().find(|(_, &c)| c < 0.0) {
            return Err(Error::NonPositiveDiagonal { index: i, value: c });
        }
        check_effective_diag(&self.cum_diag.diag, self.lambda2)
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Objective value `F(x)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let d = self.group_size;
        let w = self.lambda21 * (d as f64).sqrt();
        let mut f = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let c = self.cum_diag.diag[i];
            f += self.z[i] * xi + 0.5 * c * xi * xi + self.lambda1 * xi.abs() + self.lambda2 * xi * xi;
        }
        for (xg, cg) in x.chunks_exact(d).zip(self.cum_diag.diag.chunks_exact(d)) {
            let q: f64 = xg
                .iter()
                .zip(cg)
                .map(|(xi, ci)| (0.5 * ci + self.lambda2) * xi * xi)
                .sum();
            f += w * q.sqrt();
        }
        f
    }
}

fn check_effective_diag(cum_diag: &[f64], lambda2: f64) -> Result<()> {
    match cum_diag
        .iter()
        .enumerate()
        .find(|(_, &c)| !(c + 2.0 * lambda2 > 0.0) || !c.is_finite())
    {
        Some((index, &c)) => Err(Error::NonPositiveDiagonal {
            index,
            value: c + 2.0 * lambda2,
        }),
        None => Ok(()),
    }
}

/// `s_i = 0` if `|z_i| ≤ λ₁`, else `sign(z_i)·λ₁ − z_i`.
pub fn soft_threshold(z: &[f64], lambda1: f64) -> Vec<f64> {
    z.iter().map(|&zi| soft_threshold_scalar(zi, lambda1)).collect()
}

#[inline]
fn soft_threshold_scalar(zi: f64, lambda1: f64) -> f64 {
    if zi.abs() <= lambda1 {
        0.0
    } else {
        zi.signum() * lambda1 - zi
    }
}

/// Group shrinkage of `s` followed by the inverse of `C + 2λ₂I`.
pub fn group_shrink(
    s: &[f64],
    cum_diag: &DiagMatrix,
    group_size: usize,
    lambda21: f64,
    lambda2: f64,
    variant: Variant,
) -> Result<Vec<f64>> {
    check_len(s.len(), cum_diag.len())?;
    if group_size == 0 || s.len() % group_size != 0 {
        return Err(Error::BadGrouping {
            len: s.len(),
            group_size,
        });
    }
    check_effective_diag(&cum_diag.diag, lambda2)?;
    let mut out = s.to_vec();
    for (xg, cg) in out
        .chunks_exact_mut(group_size)
        .zip(cum_diag.diag.chunks_exact(group_size))
    {
        shrink_group(xg, cg, lambda21, lambda2, variant);
    }
    Ok(out)
}

/// Overwrites `g` (holding `s_g`) with the group's output.
#[inline]
fn shrink_group(g: &mut [f64], cum: &[f64], lambda21: f64, lambda2: f64, variant: Variant) {
    let threshold = (g.len() as f64).sqrt() * lambda21;
    let gate_sq: f64 = match variant {
        Variant::PracticalS => g.iter().map(|v| v * v).sum(),
        Variant::ExactSTilde => g
            .iter()
            .zip(cum)
            .map(|(v, c)| v * v / (0.5 * c + lambda2))
            .sum(),
    };
    let gate = gate_sq.sqrt();
    // n_g = 0 (and anything under the threshold) clamps the group to zero.
    if gate <= threshold {
        g.fill(0.0);
        return;
    }
    let factor = 1.0 - threshold / gate;
    for (v, c) in g.iter_mut().zip(cum) {
        *v = factor * *v / (c + 2.0 * lambda2);
    }
}

/// Closed-form solution: soft-threshold, then group shrink.
pub fn prox_solve(p: &ProxProblem) -> Result<Vec<f64>> {
    p.validate()?;
    let mut out = vec![0.0; p.dim()];
    solve_into(
        &p.z,
        &p.cum_diag.diag,
        p.group_size,
        p.lambda1,
        p.lambda21,
        p.lambda2,
        p.variant,
        &mut out,
    );
    Ok(out)
}

/// Slice-level solver used by the optimizers. The caller guarantees the
/// shapes and the positivity of `cum + 2λ₂`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_into(
    z: &[f64],
    cum: &[f64],
    group_size: usize,
    lambda1: f64,
    lambda21: f64,
    lambda2: f64,
    variant: Variant,
    out: &mut [f64],
) {
    for ((og, zg), cg) in out
        .chunks_exact_mut(group_size)
        .zip(z.chunks_exact(group_size))
        .zip(cum.chunks_exact(group_size))
    {
        for (o, &zi) in og.iter_mut().zip(zg) {
            *o = soft_threshold_scalar(zi, lambda1);
        }
        shrink_group(og, cg, lambda21, lambda2, variant);
    }
}

pub const ORACLE_MAX_DIM: usize = 64;
pub const ORACLE_MAX_ITERS: usize = 1_000_000;
/// Bound on the norm of the exhibited subgradient.
pub const CERTIFICATE_TOL: f64 = 1e-7;

/// Result of the brute-force oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub x_star: Vec<f64>,
    pub certified: bool,
    /// Euclidean norm of the exhibited subgradient of `F` at `x_star`.
    pub subgradient_norm: f64,
    pub iterations: usize,
}

/// Minimizes `F` by accelerated proximal gradient in the original
/// coordinates, polishes the identified support with Newton's method and
/// certifies the result with an explicit subgradient. Always targets the
/// exact objective; `p.variant` is ignored.
pub fn prox_oracle(p: &ProxProblem) -> Result<OracleResult> {
    p.validate()?;
    let n = p.dim();
    if n > ORACLE_MAX_DIM {
        return Err(Error::DimensionTooLarge {
            dim: n,
            max: ORACLE_MAX_DIM,
        });
    }
    let oracle = Oracle::new(p);
    let a = &oracle.a;

    // Smooth part z·x + Σ a_i x_i² has gradient z + 2a∘x.
    let l_max = 2.0 * a.iter().cloned().fold(0.0_f64, f64::max);
    let mu = 2.0 * a.iter().cloned().fold(f64::INFINITY, f64::min);
    let step = 1.0 / l_max;
    let momentum = {
        let (sl, sm) = (l_max.sqrt(), mu.sqrt());
        (sl - sm) / (sl + sm)
    };

    let mut x = vec![0.0; n];
    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut v = vec![0.0; n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut stalled = 0usize;

    for it in 1..=ORACLE_MAX_ITERS {
        for i in 0..n {
            v[i] = y[i] - step * (p.z[i] + 2.0 * a[i] * y[i]);
        }
        oracle.prox_nonsmooth(&v, step, &mut x);
        let delta = x
            .iter()
            .zip(&x_prev)
            .fold(0.0_f64, |acc, (u, w)| acc.max((u - w).abs()));
        let scale = x.iter().fold(1.0_f64, |acc, u| acc.max(u.abs()));
        for i in 0..n {
            y[i] = x[i] + momentum * (x[i] - x_prev[i]);
        }
        std::mem::swap(&mut x, &mut x_prev);
        // x_prev now holds the newest iterate.

        if delta <= 1e-12 * scale {
            stalled += 1;
        } else {
            stalled = 0;
        }
        let try_polish = stalled == 3 || (it % 10_000 == 0);
        if try_polish {
            let candidate = oracle.polish(&x_prev).unwrap_or_else(|| x_prev.clone());
            let res = oracle.subgradient_norm(&candidate);
            if res <= CERTIFICATE_TOL {
                return Ok(OracleResult {
                    x_star: candidate,
                    certified: true,
                    subgradient_norm: res,
                    iterations: it,
                });
            }
            if best.as_ref().is_none_or(|(_, r)| res < *r) {
                best = Some((candidate, res));
            }
            if stalled >= 3 {
                // Converged to working precision without a certificate.
                stalled = 0;
                if it > 200_000 {
                    break;
                }
            }
        }
    }
    let (x_star, res) = best.unwrap_or_else(|| {
        let r = oracle.subgradient_norm(&x_prev);
        (x_prev.clone(), r)
    });
    Ok(OracleResult {
        x_star,
        certified: res <= CERTIFICATE_TOL,
        subgradient_norm: res,
        iterations: ORACLE_MAX_ITERS,
    })
}

struct Oracle<'a> {
    p: &'a ProxProblem,
    /// Diagonal of A = C/2 + λ₂I.
    a: Vec<f64>,
    /// λ₂₁ √d.
    w: f64,
}

impl<'a> Oracle<'a> {
    fn new(p: &'a ProxProblem) -> Self {
        let a = p
            .cum_diag
            .diag
            .iter()
            .map(|c| 0.5 * c + p.lambda2)
            .collect();
        let w = p.lambda21 * (p.group_size as f64).sqrt();
        Self { p, a, w }
    }

    /// Euclidean prox of `η(λ₁‖x‖₁ + w Σ_g ‖A_g^{1/2} x_g‖)` at `v`.
    fn prox_nonsmooth(&self, v: &[f64], eta: f64, out: &mut [f64]) {
        let d = self.p.group_size;
        let t1 = eta * self.p.lambda1;
        let c = eta * self.w;
        for ((og, vg), ag) in out
            .chunks_exact_mut(d)
            .zip(v.chunks_exact(d))
            .zip(self.a.chunks_exact(d))
        {
            for (o, &vi) in og.iter_mut().zip(vg) {
                *o = if vi.abs() <= t1 { 0.0 } else { vi - vi.signum() * t1 };
            }
            if c == 0.0 {
                continue;
            }
            // Zero iff ‖A^{-1/2}u‖ ≤ c (dual-ball condition).
            let rho: f64 = og.iter().zip(ag).map(|(u, a)| u * u / a).sum::<f64>().sqrt();
            if rho <= c {
                og.fill(0.0);
                continue;
            }
            // Otherwise x_i = u_i r / (r + c a_i) with r = ‖A^{1/2}x‖, the
            // unique root of ψ(r) = Σ a_i u_i² / (r + c a_i)² − 1 on (0, R].
            let upper: f64 = og.iter().zip(ag).map(|(u, a)| a * u * u).sum::<f64>().sqrt();
            let r = decreasing_root(
                |r| {
                    let mut f = -1.0;
                    let mut df = 0.0;
                    for (u, a) in og.iter().zip(ag) {
                        let den = r + c * a;
                        f += a * u * u / (den * den);
                        df += -2.0 * a * u * u / (den * den * den);
                    }
                    (f, df)
                },
                0.0,
                upper,
            );
            for (o, a) in og.iter_mut().zip(ag) {
                *o *= r / (r + c * a);
            }
        }
    }

    /// Newton refinement of each nonzero group on its active set with the
    /// signs held fixed. Returns `None` if the signs flip or Newton fails.
    fn polish(&self, x: &[f64]) -> Option<Vec<f64>> {
        let p = self.p;
        let d = p.group_size;
        let mut out = x.to_vec();
        for g in 0..x.len() / d {
            let lo = g * d;
            let idx: Vec<usize> = (lo..lo + d).filter(|&i| x[i] != 0.0).collect();
            if idx.is_empty() {
                continue;
            }
            let k = idx.len();
            let sign: Vec<f64> = idx.iter().map(|&i| x[i].signum()).collect();
            let b: Vec<f64> = idx
                .iter()
                .zip(&sign)
                .map(|(&i, s)| p.z[i] + p.lambda1 * s)
                .collect();
            let a: Vec<f64> = idx.iter().map(|&i| self.a[i]).collect();
            let mut xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let w = self.w;
            let mut converged = false;
            for _ in 0..100 {
                let r = xs.iter().zip(&a).map(|(x, a)| a * x * x).sum::<f64>().sqrt();
                if !(r > 0.0) {
                    return None;
                }
                let grad: Vec<f64> = (0..k)
                    .map(|j| b[j] + 2.0 * a[j] * xs[j] + w * a[j] * xs[j] / r)
                    .collect();
                let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                if gnorm <= 1e-15 * scale {
                    converged = true;
                    break;
                }
                let ax: Vec<f64> = (0..k).map(|j| a[j] * xs[j]).collect();
                let mut h = vec![vec![0.0; k]; k];
                for j in 0..k {
                    for l in 0..k {
                        h[j][l] = -w * ax[j] * ax[l] / (r * r * r);
                    }
                    h[j][j] += 2.0 * a[j] + w * a[j] / r;
                }
                let step = solve_dense(h, grad.iter().map(|g| -g).collect())?;
                let mut t = 1.0;
                // Keep the iterate inside the fixed-sign orthant.
                loop {
                    let ok = (0..k).all(|j| (xs[j] + t * step[j]) * sign[j] > 0.0);
                    if ok || t < 1e-12 {
                        break;
                    }
                    t *= 0.5;
                }
                for j in 0..k {
                    xs[j] += t * step[j];
                }
                let change = step.iter().fold(0.0_f64, |m, s| m.max((t * s).abs()));
                if change <= 1e-16 * xs.iter().fold(1.0_f64, |m, v| m.max(v.abs())) {
                    converged = true;
                    break;
                }
            }
            if !converged || (0..k).any(|j| xs[j] * sign[j] <= 0.0) {
                return None;
            }
            for (j, &i) in idx.iter().enumerate() {
                out[i] = xs[j];
            }
        }
        Some(out)
    }

    /// Norm of an explicit element of ∂F(x).
    fn subgradient_norm(&self, x: &[f64]) -> f64 {
        let p = self.p;
        let d = p.group_size;
        let l1 = p.lambda1;
        let mut total = 0.0;
        for g in 0..x.len() / d {
            let lo = g * d;
            let xg = &x[lo..lo + d];
            let ag = &self.a[lo..lo + d];
            let zg = &p.z[lo..lo + d];
            let r = xg.iter().zip(ag).map(|(x, a)| a * x * x).sum::<f64>().sqrt();
            if r == 0.0 {
                // Residual of the smooth part plus the ℓ₁ subgradient closest
                // to cancelling z; it must lie in w·A^{1/2}·(unit ball).
                let t: Vec<f64> = zg.iter().map(|&zi| zi - zi.clamp(-l1, l1)).collect();
                let rho = t.iter().zip(ag).map(|(t, a)| t * t / a).sum::<f64>().sqrt();
                let tn = t.iter().map(|t| t * t).sum::<f64>().sqrt();
                if rho <= self.w {
                    continue;
                }
                let shrink = if rho > 0.0 { 1.0 - self.w / rho } else { 1.0 };
                total += (tn * shrink).powi(2);
            } else {
                for i in 0..d {
                    let res = if xg[i] != 0.0 {
                        zg[i] + 2.0 * ag[i] * xg[i] + l1 * xg[i].signum() + self.w * ag[i] * xg[i] / r
                    } else {
                        (zg[i].abs() - l1).max(0.0)
                    };
                    total += res * res;
                }
            }
        }
        total.sqrt()
    }
}

/// Root of a decreasing function on `[lo, hi]` with `f(lo) > 0 ≥ f(hi)`;
/// Newton steps safeguarded by bisection.
fn decreasing_root(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64) -> f64 {
    let mut r = hi;
    for _ in 0..200 {
        let (fr, dfr) = f(r);
        if fr == 0.0 {
            return r;
        }
        if fr > 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let newton = r - fr / dfr;
        r = if dfr < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-16 * hi.max(1e-300) {
            break;
        }
        if (r - lo).abs() <= 1e-17 * r || (hi - r).abs() <= 1e-17 * r {
            break;
        }
    }
    r
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
