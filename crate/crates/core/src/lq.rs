//! Closed-form references for the scalar linear-quadratic problem
//! `inf E[∫ ½α² dt + ½a_T X_T² + b_T X_T + c_T]` with `dX = α dt + dB`.

/// Coefficients of the quadratic value `½ a x² + b x + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl RiccatiCoeffs {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn value_at(&self, x: f64) -> f64 {
        0.5 * self.a * x * x + self.b * x + self.c
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LqValue {
    Finite(RiccatiCoeffs),
    /// The terminal cost is too concave: `1 + T a_T ≤ 0`.
    MinusInfinity,
}

impl LqValue {
    /// Value at `x0`, `-∞` when unbounded below.
    pub fn value_at(&self, x0: f64) -> f64 {
        match self {
            LqValue::Finite(c) => c.value_at(x0),
            LqValue::MinusInfinity => f64::NEG_INFINITY,
        }
    }
}

/// Coefficients at time 0 from those at the horizon `horizon`.
pub fn riccati_backward(horizon: f64, at_horizon: RiccatiCoeffs) -> LqValue {
    let RiccatiCoeffs { a, b, c } = at_horizon;
    let q = 1.0 + horizon * a;
    if q <= 0.0 {
        return LqValue::MinusInfinity;
    }
    LqValue::Finite(RiccatiCoeffs {
        a: a / q,
        b: b / q,
        c: c - horizon * b * b / (2.0 * q) + 0.5 * q.ln(),
    })
}

/// Dual function of the equality-constrained example:
/// `−λ²/6 + λ + ½ ln 3`.
pub fn example1_dual(lambda: f64) -> f64 {
    -lambda * lambda / 6.0 + lambda + 0.5 * 3.0f64.ln()
}

/// Dual function of the inequality-constrained example; `-∞` for
/// `λ ≤ −3/2`.
pub fn example2_dual(lambda: f64) -> f64 {
    let u = 3.0 + 2.0 * lambda;
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -2.0 * lambda * lambda / u + 0.5 * lambda + 0.5 * u.ln()
}

/// Terminal coefficients of the Lagrangian payoff for each example.
pub fn example_terminal(example_id: u32, lambda: f64) -> Option<RiccatiCoeffs> {
    match example_id {
        // x² + λ(1 − x)
        1 => Some(RiccatiCoeffs::new(2.0, -lambda, lambda)),
        // x² + λ((x − 1)² − ½)
        2 => Some(RiccatiCoeffs::new(2.0 + 2.0 * lambda, -2.0 * lambda, 0.5 * lambda)),
        _ => None,
    }
}

/// Analytic dual maximizer `(λ*, D(0))` of the two examples.
pub fn analytic_maximizer(example_id: u32) -> crate::Result<(f64, f64)> {
    match example_id {
        1 => Ok((3.0, 1.5 + 0.5 * 3.0f64.ln())),
        2 => {
            // d'(λ) = 0 ⇔ u² − 2u − 18 = 0 with u = 3 + 2λ.
            let lambda = -1.0 + 0.5 * 19.0f64.sqrt();
            Ok((lambda, example2_dual(lambda)))
        }
        other => Err(crate::Error::UnknownExample(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riccati_examples() {
        match riccati_backward(1.0, RiccatiCoeffs::new(2.0, -3.0, 3.0)) {
            LqValue::Finite(c) => {
                assert!((c.a - 2.0 / 3.0).abs() < 1e-15);
                assert!((c.b + 1.0).abs() < 1e-15);
                let expected = 3.0 - 9.0 / 6.0 + 0.5 * 3.0f64.ln();
                assert!((c.c - expected).abs() < 1e-15);
                assert!((c.value_at(0.0) - 2.049_306_144_334_054_8).abs() < 1e-12);
            }
            LqValue::MinusInfinity => panic!("finite expected"),
        }
        assert_eq!(
            riccati_backward(1.0, RiccatiCoeffs::new(0.0, 0.0, 1.7)),
            LqValue::Finite(RiccatiCoeffs::new(0.0, 0.0, 1.7))
        );
        assert_eq!(riccati_backward(1.0, RiccatiCoeffs::new(-1.0, 0.0, 0.0)), LqValue::MinusInfinity);
    }

    #[test]
    fn closed_form_duals() {
        let half_ln3 = 0.5 * 3.0f64.ln();
        assert!((example1_dual(3.0) - (1.5 + half_ln3)).abs() < 1e-15);
        assert!((example1_dual(0.0) - half_ln3).abs() < 1e-15);
        assert!((example1_dual(6.0) - half_ln3).abs() < 1e-14);
        assert!((example2_dual(0.0) - half_ln3).abs() < 1e-15);
        let at_one = -2.0 / 5.0 + 0.5 + 0.5 * 5.0f64.ln();
        assert!((example2_dual(1.0) - at_one).abs() < 1e-15);
        assert_eq!(example2_dual(-1.5), f64::NEG_INFINITY);
        assert_eq!(example2_dual(-4.0), f64::NEG_INFINITY);
    }

    #[test]
    fn maximizers() {
        let (l1, v1) = analytic_maximizer(1).unwrap();
        assert_eq!(l1, 3.0);
        assert!((v1 - 2.0493).abs() < 1e-4);
        let (l2, v2) = analytic_maximizer(2).unwrap();
        assert!((l2 - 1.1794).abs() < 1e-4);
        assert!((v2 - 0.91).abs() < 5e-3);
        assert!(analytic_maximizer(3).is_err());
    }
}
