//! Coefficient families that can be described by data, so that problems
//! other than the builtins can be loaded from configuration files.
//!
//! The scalar family has
//!
//! ```text
//! μ(t, x, a) = clamp(drift_const + drift_x·x + drift_a·a, ±drift_bound)
//! σ          = sigma
//! L(t, x, a) = control_cost·a² + state_cost·x²
//! Φ₀, Ψᵢ     = quadratics q(x) = c2·x² + c1·x + c0
//! ```
//!
//! Without `drift_bound` the drift is linear (the linear-quadratic family).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{ConstraintFunctional, ConstraintKind, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quadratic {
    #[serde(default)]
    pub c2: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c0: f64,
}

impl Quadratic {
    pub fn eval(&self, x: f64) -> f64 {
        (self.c2 * x + self.c1) * x + self.c0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintEntry {
    pub kind: ConstraintKind,
    pub map: Quadratic,
    #[serde(default)]
    pub target: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarProblem {
    #[serde(default)]
    pub drift_const: f64,
    #[serde(default)]
    pub drift_x: f64,
    #[serde(default = "one")]
    pub drift_a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_bound: Option<f64>,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "half")]
    pub control_cost: f64,
    #[serde(default)]
    pub state_cost: f64,
    pub terminal: Quadratic,
    #[serde(default)]
    pub constraints: Vec<ConstraintEntry>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "one")]
    pub horizon: f64,
}

impl ScalarProblem {
    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let values = [
            self.drift_const,
            self.drift_x,
            self.drift_a,
            self.sigma,
            self.control_cost,
            self.state_cost,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("coefficients must be finite");
        }
        if let Some(b) = self.drift_bound {
            if !(b > 0.0) {
                return invalid(format!("drift_bound must be positive, got {b}"));
            }
        }
        let (c, cx, ca) = (self.drift_const, self.drift_x, self.drift_a);
        let bound = self.drift_bound.unwrap_or(f64::INFINITY);
        let sigma = self.sigma;
        let (ka, kx) = (self.control_cost, self.state_cost);
        let terminal = self.terminal;
        let spec = ProblemSpec::new(
            move |_, x, a| (c + cx * x + ca * a).clamp(-bound, bound),
            move |_, _, _| sigma,
            move |_, x, a| ka * a * a + kx * x * x,
            move |x| terminal.eval(x),
            self.x0,
            self.horizon,
        )?;
        let constraints = self
            .constraints
            .iter()
            .map(|e| {
                let q = e.map;
                ConstraintFunctional::terminal(e.kind, move |x| q.eval(x)).with_target(e.target)
            })
            .collect();
        spec.with_constraints(constraints)
    }

    /// Bound on `|μ|` over the control range, used for default grid bounds.
    pub fn drift_scale(&self, control_bound: f64, x_scale: f64) -> f64 {
        let linear = self.drift_const.abs() + self.drift_x.abs() * x_scale + self.drift_a.abs() * control_bound;
        self.drift_bound.map_or(linear, |b| linear.min(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, lagrangian_terminal, DualPoint};

    fn lq_example2() -> ScalarProblem {
        ScalarProblem {
            drift_const: 0.0,
            drift_x: 0.0,
            drift_a: 1.0,
            drift_bound: None,
            sigma: 1.0,
            control_cost: 0.5,
            state_cost: 0.0,
            terminal: Quadratic { c2: 1.0, c1: 0.0, c0: 0.0 },
            constraints: vec![ConstraintEntry {
                kind: ConstraintKind::Inequality,
                map: Quadratic { c2: 1.0, c1: -2.0, c0: 0.5 },
                target: 0.0,
            }],
            x0: 0.0,
            horizon: 1.0,
        }
    }

    #[test]
    fn reproduces_builtin_coefficients() {
        let spec = lq_example2().to_spec().unwrap();
        let reference = builtin::example2();
        let lambda = DualPoint::for_spec(&spec, vec![1.3]).unwrap();
        for x in [-2.0, -0.3, 0.0, 1.0, 2.5] {
            for a in [-1.0, 0.0, 2.0] {
                assert_eq!((spec.drift)(0.1, x, a), (reference.drift)(0.1, x, a));
                assert_eq!((spec.running_cost)(0.1, x, a), (reference.running_cost)(0.1, x, a));
            }
            let l = lagrangian_terminal(x, &lambda, &spec).unwrap();
            let r = lagrangian_terminal(x, &lambda, &reference).unwrap();
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn bounded_drift_is_clamped() {
        let mut p = lq_example2();
        p.drift_bound = Some(2.0);
        let spec = p.to_spec().unwrap();
        assert_eq!((spec.drift)(0.0, 0.0, 5.0), 2.0);
        assert_eq!((spec.drift)(0.0, 0.0, -5.0), -2.0);
        assert_eq!((spec.drift)(0.0, 0.0, 1.5), 1.5);
        p.drift_bound = Some(0.0);
        assert!(p.to_spec().is_err());
    }
}
