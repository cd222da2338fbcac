//! Dual decomposition solver for stochastic control problems with
//! expectation constraints.
//!
//! A controlled diffusion is replaced by a three-point Markov chain on a
//! grid. For each multiplier `λ` the Lagrangian problem is solved by backward
//! induction, giving the dual function `d_h(λ)` and a supergradient; a
//! projected supergradient ascent then maximizes `d_h` over a box whose
//! radius comes from a qualification margin.
//!
//! ```
//! use ccs_core::chain::Discretization;
//! use ccs_core::dual::{ascend, AscentParams, DualBox, StepRule};
//! use ccs_core::model::{builtin, ControlSet};
//!
//! let spec = builtin::example1();
//! let controls = ControlSet::uniform(-6.0, 6.0, 0.25).unwrap();
//! let disc = Discretization::standard(&spec, 100, controls).unwrap();
//! let params = AscentParams { step_rule: StepRule::Constant { theta: 1.0 }, ..Default::default() };
//! let sol = ascend(&spec, &disc, &DualBox::new(200.0, 5.0).unwrap(), &params).unwrap();
//! assert!((sol.lambda_star.as_slice()[0] - 3.0).abs() < 0.5);
//! ```

pub mod chain;
pub mod dp;
pub mod dual;
mod error;
pub mod export;
mod linalg;
pub mod lq;
pub mod mc;
pub mod model;
pub mod projection;
pub mod qualify;
pub mod rate;
pub mod registry;

pub use error::{Error, Result};

// The guide's chapters are compiled as doc-tests so their snippets stay in
// sync with the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/chain.md")]
    mod chain {}
    #[doc = include_str!("../../../book/src/dual.md")]
    mod dual {}
    #[doc = include_str!("../../../book/src/qualification.md")]
    mod qualification {}
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/riccati.md")]
    mod riccati {}
}
