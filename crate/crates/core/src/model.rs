//! Problem data for a one-dimensional controlled diffusion with expectation
//! constraints.
//!
//! The state follows `dX = μ(t, X, a) dt + σ(t, X, a) dB` on `[0, T]`, the
//! objective is `E[∫ L(t, X, a) dt + Φ₀(X_T)]`, and each constraint asks
//! `E[Ψᵢ(X)] = zᵢ` (equality) or `E[Ψᵢ(X)] ≤ zᵢ` (inequality). Equalities come
//! first in the constraint list.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// Coefficient of the dynamics or the running cost, evaluated at `(t, x, a)`.
pub type CoeffFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Function of the terminal state.
pub type StateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Functional of a whole (linearly interpolated) path.
pub type PathFn = Arc<dyn Fn(&SampledPath<'_>) -> f64 + Send + Sync>;

/// A chain trajectory observed at the grid times. Between grid times the path
/// is the linear interpolation of its samples.
#[derive(Debug, Clone, Copy)]
pub struct SampledPath<'a> {
    pub times: &'a [f64],
    pub states: &'a [f64],
}

impl SampledPath<'_> {
    pub fn terminal(&self) -> f64 {
        *self.states.last().expect("empty path")
    }

    /// Value of the interpolated path at time `t` (clamped to the horizon).
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1];
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.states[k] + w * (self.states[k + 1] - self.states[k])
    }

    pub fn max(&self) -> f64 {
        self.states.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.states.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

/// One expectation constraint `E[Ψ] = target` or `E[Ψ] ≤ target`.
#[derive(Clone)]
pub struct ConstraintFunctional {
    pub kind: ConstraintKind,
    /// `Ψ₀` with `Ψ(ω) = Ψ₀(ω_T)`; required for the grid DP.
    pub terminal_map: Option<StateFn>,
    /// Path functional, only usable by the Monte-Carlo simulator.
    pub path_map: Option<PathFn>,
    pub target: f64,
}

impl ConstraintFunctional {
    pub fn terminal(kind: ConstraintKind, map: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind,
            terminal_map: Some(Arc::new(map)),
            path_map: None,
            target: 0.0,
        }
    }

    pub fn path(
        kind: ConstraintKind,
        map: impl Fn(&SampledPath<'_>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind,
            terminal_map: None,
            path_map: Some(Arc::new(map)),
            target: 0.0,
        }
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target = target;
        self
    }

    pub fn is_dp_compatible(&self) -> bool {
        self.terminal_map.is_some()
    }

    /// Evaluates the functional on a path, preferring the terminal map.
    pub fn eval_path(&self, path: &SampledPath<'_>) -> f64 {
        match (&self.terminal_map, &self.path_map) {
            (Some(f), _) => f(path.terminal()),
            (None, Some(g)) => g(path),
            (None, None) => f64::NAN,
        }
    }
}

impl fmt::Debug for ConstraintFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintFunctional")
            .field("kind", &self.kind)
            .field("terminal_map", &self.terminal_map.is_some())
            .field("path_map", &self.path_map.is_some())
            .field("target", &self.target)
            .finish()
    }
}

/// Immutable description of a constrained control problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub drift: CoeffFn,
    pub diffusion: CoeffFn,
    pub running_cost: CoeffFn,
    pub terminal_cost: StateFn,
    constraints: Vec<ConstraintFunctional>,
    n_equality: usize,
    pub x0: f64,
    pub horizon: f64,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("constraints", &self.constraints)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Unconstrained problem with the given coefficients.
    pub fn new(
        drift: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        running_cost: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        terminal_cost: impl Fn(f64) -> f64 + Send + Sync + 'static,
        x0: f64,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        if !x0.is_finite() {
            return invalid("x0 must be finite");
        }
        Ok(Self {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            running_cost: Arc::new(running_cost),
            terminal_cost: Arc::new(terminal_cost),
            constraints: Vec::new(),
            n_equality: 0,
            x0,
            horizon,
        })
    }

    /// Replaces the constraint list. Equalities must precede inequalities.
    pub fn with_constraints(mut self, constraints: Vec<ConstraintFunctional>) -> Result<Self> {
        let n_equality = constraints
            .iter()
            .take_while(|c| c.kind == ConstraintKind::Equality)
            .count();
        if constraints[n_equality..]
            .iter()
            .any(|c| c.kind == ConstraintKind::Equality)
        {
            return invalid("equality constraints must precede inequality constraints");
        }
        for (i, c) in constraints.iter().enumerate() {
            if c.terminal_map.is_none() && c.path_map.is_none() {
                return invalid(format!("constraint {i} has neither a terminal nor a path map"));
            }
            if !c.target.is_finite() {
                return invalid(format!("constraint {i} has a non-finite target"));
            }
        }
        self.constraints = constraints;
        self.n_equality = n_equality;
        Ok(self)
    }

    pub fn constraints(&self) -> &[ConstraintFunctional] {
        &self.constraints
    }

    /// Number of equality constraints (`m`).
    pub fn n_equality(&self) -> usize {
        self.n_equality
    }

    /// Number of inequality constraints (`ℓ`).
    pub fn n_inequality(&self) -> usize {
        self.constraints.len() - self.n_equality
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Same problem with every constraint target replaced.
    pub fn with_targets(&self, targets: &[f64]) -> Result<Self> {
        if targets.len() != self.constraints.len() {
            return invalid("target vector length mismatch");
        }
        let mut out = self.clone();
        for (c, &z) in out.constraints.iter_mut().zip(targets) {
            c.target = z;
        }
        Ok(out)
    }

    pub fn targets(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.target).collect()
    }

    /// Fails with the index of the first constraint lacking a terminal map.
    pub fn require_dp_compatible(&self) -> Result<()> {
        match self.constraints.iter().position(|c| !c.is_dp_compatible()) {
            Some(index) => Err(Error::PathDependentConstraint { index }),
            None => Ok(()),
        }
    }

    /// Problem whose only payoff is the terminal functional `Σ wᵢ (Ψᵢ − zᵢ)`
    /// after `lagrangian_terminal`, i.e. zero running and terminal cost.
    pub(crate) fn constraints_only(&self) -> Self {
        Self {
            running_cost: Arc::new(|_, _, _| 0.0),
            terminal_cost: Arc::new(|_| 0.0),
            ..self.clone()
        }
    }
}

/// A finite control grid `A_δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    values: Vec<f64>,
    pub label: String,
}

impl ControlSet {
    pub fn new(values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return invalid("control set is empty");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("control values must be finite");
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return invalid("control values must be distinct");
        }
        Ok(Self {
            values,
            label: label.into(),
        })
    }

    /// Uniform grid `lo, lo + step, …` up to `hi` (inclusive within rounding).
    pub fn uniform(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(hi >= lo) {
            return invalid(format!("bad control grid [{lo}, {hi}] step {step}"));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        let values = (0..=n).map(|i| lo + i as f64 * step).collect();
        Self::new(values, format!("uniform[{lo},{hi}] step {step}"))
    }

    /// Dyadic grid of `[lo, hi]` with `2^level + 1` points.
    pub fn dyadic(lo: f64, hi: f64, level: u32) -> Result<Self> {
        let n = 1usize << level;
        let step = (hi - lo) / n as f64;
        let values = (0..=n).map(|i| lo + i as f64 * step).collect();
        Self::new(values, format!("dyadic[{lo},{hi}] level {level}"))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Lagrange multiplier in `ℝ^m × ℝ^ℓ₊`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    lambda: Vec<f64>,
    n_equality: usize,
}

impl DualPoint {
    pub fn new(lambda: Vec<f64>, n_equality: usize) -> Result<Self> {
        if n_equality > lambda.len() {
            return invalid("more equality multipliers than coordinates");
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return invalid("multiplier must be finite");
        }
        if let Some(j) = lambda[n_equality..].iter().position(|&v| v < 0.0) {
            return invalid(format!(
                "inequality multiplier {} is negative",
                n_equality + j
            ));
        }
        Ok(Self { lambda, n_equality })
    }

    pub fn zeros(spec: &ProblemSpec) -> Self {
        Self {
            lambda: vec![0.0; spec.n_constraints()],
            n_equality: spec.n_equality(),
        }
    }

    /// Multiplier shaped for `spec`.
    pub fn for_spec(spec: &ProblemSpec, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != spec.n_constraints() {
            return invalid(format!(
                "multiplier has {} coordinates, problem has {} constraints",
                lambda.len(),
                spec.n_constraints()
            ));
        }
        Self::new(lambda, spec.n_equality())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.lambda
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.lambda
    }

    pub fn n_equality(&self) -> usize {
        self.n_equality
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.lambda.iter().map(|v| v.abs()).sum()
    }
}

/// `Υ(x, λ) = Φ₀(x) + Σᵢ λᵢ (Ψ₀ᵢ(x) − zᵢ)`.
pub fn lagrangian_terminal(x: f64, lambda: &DualPoint, spec: &ProblemSpec) -> Result<f64> {
    if lambda.len() != spec.n_constraints() {
        return invalid("multiplier dimension does not match the constraint count");
    }
    let mut total = (spec.terminal_cost)(x);
    for (index, (c, &l)) in spec.constraints.iter().zip(lambda.as_slice()).enumerate() {
        let psi = c
            .terminal_map
            .as_ref()
            .ok_or(Error::PathDependentConstraint { index })?;
        total += l * (psi(x) - c.target);
    }
    Ok(total)
}

/// Linear-quadratic test problems with `μ = a`, `σ = 1`, `L = ½a²`,
/// `Φ₀ = x²`, `x₀ = 0`, `T = 1`.
pub mod builtin {
    use super::*;

    fn lq_base() -> ProblemSpec {
        ProblemSpec::new(
            |_, _, a| a,
            |_, _, _| 1.0,
            |_, _, a| 0.5 * a * a,
            |x| x * x,
            0.0,
            1.0,
        )
        .expect("valid LQ base")
    }

    /// Equality constraint `E[1 − X_T] = 0`.
    pub fn example1() -> ProblemSpec {
        lq_base()
            .with_constraints(vec![ConstraintFunctional::terminal(
                ConstraintKind::Equality,
                |x| -x + 1.0,
            )])
            .expect("valid constraints")
    }

    /// Inequality constraint `E[(X_T − 1)²] − ½ ≤ 0`.
    pub fn example2() -> ProblemSpec {
        lq_base()
            .with_constraints(vec![ConstraintFunctional::terminal(
                ConstraintKind::Inequality,
                |x| (x - 1.0).powi(2) - 0.5,
            )])
            .expect("valid constraints")
    }

    pub fn by_name(name: &str) -> Option<ProblemSpec> {
        match name {
            "example1" => Some(example1()),
            "example2" => Some(example2()),
            _ => None,
        }
    }
}
