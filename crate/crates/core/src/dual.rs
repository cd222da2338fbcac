//! Projected supergradient ascent on `d_h` and optimality certificates.
//!
//! `d_h` is concave, and the constraint residuals `E[Ψ] − z` under any
//! minimizer of the inner problem form a supergradient. The ascent starts
//! from `λ = 0` and projects every iterate back onto
//! `{λ ∈ ℝ^m × ℝ^ℓ₊ : ‖λ‖₁ ≤ 2M/ε}`.

use serde::{Deserialize, Serialize};

use crate::chain::{validate_cfl, Discretization};
use crate::dp::{policy_outcome, solve_inner, DualEvaluation, FeedbackPolicy};
use crate::error::{invalid, Result};
use crate::model::{DualPoint, ProblemSpec};
use crate::projection::project_l1_orthant;

/// Smallest qualification margin used to size the box.
pub const EPS_FLOOR: f64 = 1e-6;

/// `{λ : ‖λ‖₁ ≤ 2M/ε}` intersected with the sign constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualBox {
    /// Bound on `|E[cost]|` over all policies.
    pub m_bound: f64,
    /// Qualification radius.
    pub eps: f64,
}

impl DualBox {
    pub fn new(m_bound: f64, eps: f64) -> Result<Self> {
        if !(m_bound > 0.0) || !(eps > 0.0) {
            return invalid(format!("dual box needs M > 0 and eps > 0, got M={m_bound}, eps={eps}"));
        }
        Ok(Self { m_bound, eps })
    }

    /// Box from a measured `M` and a qualification margin, floored at
    /// [`EPS_FLOOR`].
    pub fn from_margin(m_bound: f64, margin: f64) -> Result<Self> {
        let eps = if margin.is_nan() { EPS_FLOOR } else { margin.max(EPS_FLOOR) };
        Self::new(m_bound, eps)
    }

    pub fn radius(&self) -> f64 {
        2.0 * self.m_bound / self.eps
    }
}

/// `M = max_j |Φ₀(x_j)| + T · max |L(t_k, x_j, a)|` over the grid, a bound on
/// the expected cost of every chain policy.
pub fn estimate_cost_bound(spec: &ProblemSpec, disc: &Discretization) -> f64 {
    let terminal = (0..disc.n_nodes)
        .map(|j| (spec.terminal_cost)(disc.x(j)).abs())
        .fold(0.0, f64::max);
    let mut running: f64 = 0.0;
    for k in 0..disc.steps {
        let t = disc.time(k);
        for j in 0..disc.n_nodes {
            for &a in disc.controls.values() {
                running = running.max((spec.running_cost)(t, disc.x(j), a).abs());
            }
        }
    }
    let m = terminal + disc.horizon * running;
    if m > 0.0 {
        m
    } else {
        f64::MIN_POSITIVE
    }
}

/// Euclidean projection onto the dual box.
pub fn project(lambda_raw: &[f64], n_equality: usize, dual_box: &DualBox) -> DualPoint {
    let p = project_l1_orthant(lambda_raw, n_equality, dual_box.radius());
    DualPoint::new(p, n_equality).expect("projection lands in the sign cone")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    /// `θ_k = θ`.
    Constant { theta: f64 },
    /// `θ_k = θ₀ / √(k+1)`; `θ₀` defaults to `radius / ‖g₀‖`.
    Diminishing { theta0: Option<f64> },
    /// `θ_k = θ₀ / (k+1)`; `θ₀` defaults to `radius / ‖g₀‖`.
    Harmonic { theta0: Option<f64> },
    /// `θ_k = (target − d_k) / ‖g_k‖²`, clipped at zero.
    Polyak { target: f64 },
}

impl StepRule {
    /// Step at iteration `iter` given the current value, `‖g‖²` and the
    /// feasible-set radius. `theta0` caches the first-iterate scale.
    pub(crate) fn step(&self, iter: usize, value: f64, grad_norm2: f64, radius: f64, theta0: &mut Option<f64>) -> f64 {
        let mut scale = |given: Option<f64>| {
            *theta0.get_or_insert_with(|| {
                given.unwrap_or_else(|| {
                    let norm = grad_norm2.sqrt();
                    if norm > 0.0 {
                        radius / norm
                    } else {
                        1.0
                    }
                })
            })
        };
        match *self {
            StepRule::Constant { theta } => theta,
            StepRule::Diminishing { theta0: given } => scale(given) / ((iter + 1) as f64).sqrt(),
            StepRule::Harmonic { theta0: given } => scale(given) / (iter + 1) as f64,
            StepRule::Polyak { target } => {
                if grad_norm2 > 0.0 {
                    ((target - value) / grad_norm2).max(0.0)
                } else {
                    0.0
                }
            }
        }
    }
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Diminishing { theta0: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentParams {
    pub step_rule: StepRule,
    /// Stop once the projected supergradient residual falls below this.
    pub grad_tol: f64,
    /// Two consecutive iterates closer than this (sup norm) whose residual
    /// vectors have a convex combination of norm below `grad_tol` also stop
    /// the ascent: they bracket a kink of the piecewise-linear `d_h`.
    pub kink_tol: f64,
    pub max_iters: usize,
}

impl Default for AscentParams {
    fn default() -> Self {
        Self {
            step_rule: StepRule::default(),
            grad_tol: 1e-7,
            kink_tol: 1e-4,
            max_iters: 200,
        }
    }
}

/// One row of the ascent trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub lambda: Vec<f64>,
    pub value: f64,
    /// `‖∇d_h‖_∞`.
    pub grad_inf: f64,
    /// `‖Π(λ + g) − λ‖_∞`, zero exactly at a maximizer over the box.
    pub residual: f64,
    /// Step taken from this iterate (zero on the last row).
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Best iterate.
    pub lambda_star: DualPoint,
    /// `d_h(λ*)`, the approximation of `D_h(0)`.
    pub value: f64,
    pub evaluation: DualEvaluation,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `Π(λ + g) − λ`.
fn residual_vector(lambda: &DualPoint, grad: &[f64], dual_box: &DualBox) -> Vec<f64> {
    let shifted: Vec<f64> = lambda.as_slice().iter().zip(grad).map(|(l, g)| l + g).collect();
    let p = project(&shifted, lambda.n_equality(), dual_box);
    p.as_slice().iter().zip(lambda.as_slice()).map(|(a, b)| a - b).collect()
}

/// Smallest Euclidean norm on the segment `[u, v]`.
fn segment_min_norm(u: &[f64], v: &[f64]) -> f64 {
    let d: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
    let dd: f64 = d.iter().map(|x| x * x).sum();
    let w = if dd > 0.0 {
        (-u.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / dd).clamp(0.0, 1.0)
    } else {
        0.0
    };
    u.iter().zip(&d).map(|(a, b)| (a + w * b).powi(2)).sum::<f64>().sqrt()
}

/// Maximizes `d_h` over the dual box; returns the best iterate seen.
pub fn ascend(
    spec: &ProblemSpec,
    disc: &Discretization,
    dual_box: &DualBox,
    params: &AscentParams,
) -> Result<DualSolution> {
    if !(params.grad_tol > 0.0) || !(params.kink_tol >= 0.0) {
        return invalid("grad_tol must be positive and kink_tol nonnegative");
    }
    let report = validate_cfl(spec, disc);
    if let Some(err) = report.violation {
        return Err(err);
    }
    let m = spec.n_equality();
    let mut lambda = project(&vec![0.0; spec.n_constraints()], m, dual_box);
    let mut trace = Vec::new();
    let mut best: Option<DualEvaluation> = None;
    let mut converged = false;
    let mut theta0 = None;
    let mut previous: Option<(DualPoint, Vec<f64>)> = None;

    for iter in 0..params.max_iters.max(1) {
        let eval = solve_inner(spec, disc, &lambda)?;
        let grad = eval.supergradient.clone();
        let grad_inf = inf_norm(&grad);
        let r = residual_vector(&lambda, &grad, dual_box);
        let residual = inf_norm(&r);
        let value = eval.value;
        if best.as_ref().map_or(true, |b| value > b.value) {
            best = Some(eval);
        }
        let at_kink = previous.as_ref().is_some_and(|(l, rp)| {
            let gap = l.as_slice().iter().zip(lambda.as_slice()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            gap <= params.kink_tol && segment_min_norm(rp, &r) < params.grad_tol
        });
        let done = spec.n_constraints() == 0 || residual < params.grad_tol || at_kink;
        let step = if done {
            0.0
        } else {
            let norm2: f64 = grad.iter().map(|g| g * g).sum();
            params
                .step_rule
                .step(iter, value, norm2, dual_box.radius(), &mut theta0)
        };
        trace.push(TraceRow {
            iter,
            lambda: lambda.as_slice().to_vec(),
            value,
            grad_inf,
            residual,
            step,
        });
        if done {
            converged = true;
            break;
        }
        previous = Some((lambda.clone(), r));
        let raw: Vec<f64> = lambda
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(l, g)| l + step * g)
            .collect();
        lambda = project(&raw, m, dual_box);
    }
    let evaluation = best.expect("at least one evaluation");
    Ok(DualSolution {
        lambda_star: evaluation.lambda.clone(),
        value: evaluation.value,
        evaluation,
        trace,
        converged,
    })
}

/// Feasibility, complementarity and stationarity of a candidate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// `E[Ψᵢ] − zᵢ` under the policy.
    pub feasibility: Vec<f64>,
    /// `|Σ λᵢ (E[Ψᵢ] − zᵢ)|`.
    pub complementarity_gap: f64,
    /// Lagrangian of the policy minus `d_h(λ)`; nonnegative up to rounding.
    pub stationarity_gap: f64,
    pub policy_cost: f64,
    pub dual_value: f64,
    pub feasibility_ok: bool,
    pub complementarity_ok: bool,
    pub stationarity_ok: bool,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.feasibility_ok && self.complementarity_ok && self.stationarity_ok
    }
}

/// Checks the discrete optimality conditions for `(policy, λ)` at tolerance
/// `tol`.
pub fn certify(
    spec: &ProblemSpec,
    disc: &Discretization,
    lambda: &DualPoint,
    policy: &FeedbackPolicy,
    tol: f64,
) -> Result<Certificate> {
    if lambda.len() != spec.n_constraints() {
        return invalid("multiplier dimension does not match the constraint count");
    }
    let outcome = policy_outcome(spec, disc, policy)?;
    let inner = solve_inner(spec, disc, lambda)?;
    let l = lambda.as_slice();
    let lagrangian = outcome.lagrangian(l);
    let complementarity_gap = outcome
        .residuals
        .iter()
        .zip(l)
        .map(|(g, l)| g * l)
        .sum::<f64>()
        .abs();
    let stationarity_gap = lagrangian - inner.value;
    let m = spec.n_equality();
    let feasibility_ok = outcome
        .residuals
        .iter()
        .enumerate()
        .all(|(i, &g)| if i < m { g.abs() <= tol } else { g <= tol });
    Ok(Certificate {
        feasibility: outcome.residuals,
        complementarity_gap,
        stationarity_gap,
        policy_cost: outcome.cost,
        dual_value: inner.value,
        feasibility_ok,
        complementarity_ok: complementarity_gap <= tol,
        stationarity_ok: stationarity_gap <= tol,
    })
}
