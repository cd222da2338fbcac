//! Qualification check through the sign-vector minimax reformulation.
//!
//! The constraints are qualified with margin `ε` iff for every sign vector
//! `e ∈ {−1, 1}^m × {1}^ℓ`
//!
//! ```text
//! v_e = max_{θ ∈ simplex} inf_γ E[θ · eΨ] ≤ −ε.
//! ```
//!
//! The inner infimum is a grid DP with zero cost and terminal payoff
//! `Σ θᵢ eᵢ (Ψᵢ − zᵢ)`; the outer maximization is a projected supergradient
//! ascent on the simplex.

use crate::chain::Discretization;
use crate::dp::solve_inner;
use crate::dual::StepRule;
use crate::error::{invalid, Result};
use crate::model::{DualPoint, ProblemSpec};
use crate::projection::project_simplex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualifyParams {
    pub step_rule: StepRule,
    pub max_iters: usize,
    /// Stop once `‖Π(θ + g) − θ‖_∞` falls below this.
    pub tol: f64,
}

impl Default for QualifyParams {
    fn default() -> Self {
        Self {
            step_rule: StepRule::Harmonic { theta0: None },
            max_iters: 500,
            tol: 1e-9,
        }
    }
}

/// A sign vector and a point of the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct QualificationInstance {
    pub signs: Vec<f64>,
    pub theta: Vec<f64>,
}

impl QualificationInstance {
    pub fn new(signs: Vec<f64>, theta: Vec<f64>, n_equality: usize) -> Result<Self> {
        if signs.len() != theta.len() {
            return invalid("sign vector and simplex point differ in length");
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) || signs[n_equality..].iter().any(|&s| s != 1.0) {
            return invalid("signs must be ±1, and +1 on inequality coordinates");
        }
        if theta.iter().any(|&t| t < 0.0) || (theta.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return invalid("theta must lie on the simplex");
        }
        Ok(Self { signs, theta })
    }

    /// Multiplier `θ ∘ e` fed to the inner solver.
    pub fn weights(&self) -> Vec<f64> {
        self.theta.iter().zip(&self.signs).map(|(t, e)| t * e).collect()
    }
}

/// All sign vectors `{−1, 1}^m × {1}^ℓ`, in binary order of the equality part.
pub fn sign_vectors(n_equality: usize, n_inequality: usize) -> Vec<Vec<f64>> {
    (0..1usize << n_equality)
        .map(|code| {
            (0..n_equality + n_inequality)
                .map(|i| {
                    if i < n_equality && (code >> i) & 1 == 1 {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignReport {
    pub signs: Vec<f64>,
    /// Best value of `θ ↦ inf_γ E[θ · eΨ]` found (a lower bound on `v_e`).
    pub value: f64,
    /// `min` over the tested policies and their pairwise mixtures of
    /// `maxᵢ eᵢ E[Ψᵢ]` (an upper bound on `v_e`).
    pub upper: f64,
    pub theta: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualificationReport {
    pub per_sign: Vec<SignReport>,
    /// `ε̂ = −max_e v_e`; `+∞` without constraints.
    pub margin: f64,
    pub target_eps: f64,
    pub passed: bool,
}

impl QualificationReport {
    /// `−max_e upper_e`, a margin certified by explicit policies.
    pub fn certified_margin(&self) -> f64 {
        -self
            .per_sign
            .iter()
            .map(|r| r.upper)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Smallest `max_i c_i` over the segment between two outcome vectors.
fn pair_minimax(p: &[f64], q: &[f64]) -> f64 {
    let at = |w: f64| -> f64 {
        p.iter()
            .zip(q)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    // The max of affine functions is convex on [0, 1]; its minimum sits at an
    // endpoint or where two coordinates cross.
    let mut best = at(0.0).min(at(1.0));
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let denom = (q[i] - p[i]) - (q[j] - p[j]);
            if denom != 0.0 {
                let w = (p[j] - p[i]) / denom;
                if (0.0..=1.0).contains(&w) {
                    best = best.min(at(w));
                }
            }
        }
    }
    best
}

/// Runs the minimax check for every sign vector.
pub fn check_qualification(
    spec: &ProblemSpec,
    disc: &Discretization,
    target_eps: f64,
    params: &QualifyParams,
) -> Result<QualificationReport> {
    spec.require_dp_compatible()?;
    let m = spec.n_equality();
    let dim = spec.n_constraints();
    if m > 10 {
        return invalid("too many equality constraints for sign enumeration (m <= 10)");
    }
    if dim == 0 {
        return Ok(QualificationReport {
            per_sign: Vec::new(),
            margin: f64::INFINITY,
            target_eps,
            passed: true,
        });
    }
    let payoff_only = spec.constraints_only();
    let mut per_sign = Vec::new();
    for signs in sign_vectors(m, spec.n_inequality()) {
        let mut theta = vec![1.0 / dim as f64; dim];
        let mut best = (f64::NEG_INFINITY, theta.clone());
        let mut tested: Vec<Vec<f64>> = Vec::new();
        let mut theta0 = None;
        let mut iterations = 0;
        for iter in 0..params.max_iters.max(1) {
            iterations = iter + 1;
            let inst = QualificationInstance { signs: signs.clone(), theta: theta.clone() };
            let lambda = DualPoint::new(inst.weights(), m)?;
            let eval = solve_inner(&payoff_only, disc, &lambda)?;
            let grad: Vec<f64> = eval.supergradient.iter().zip(&signs).map(|(g, e)| g * e).collect();
            if eval.value > best.0 {
                best = (eval.value, theta.clone());
            }
            if !tested.contains(&grad) {
                tested.push(grad.clone());
            }
            let shifted: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + g).collect();
            let residual = project_simplex(&shifted)
                .iter()
                .zip(&theta)
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            if dim == 1 || residual < params.tol {
                break;
            }
            let norm2: f64 = grad.iter().map(|g| g * g).sum();
            let step = params.step_rule.step(iter, eval.value, norm2, 1.0, &mut theta0);
            let raw: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + step * g).collect();
            theta = project_simplex(&raw);
        }
        let mut upper = f64::INFINITY;
        for (i, p) in tested.iter().enumerate() {
            upper = upper.min(p.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            for q in &tested[i + 1..] {
                upper = upper.min(pair_minimax(p, q));
            }
        }
        per_sign.push(SignReport {
            signs,
            value: best.0,
            upper,
            theta: best.1,
            iterations,
        });
    }
    let worst = per_sign.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(QualificationReport {
        passed: per_sign.iter().all(|r| r.value <= -target_eps),
        margin: -worst,
        target_eps,
        per_sign,
    })
}
