//! Three-point Markov chain approximation of the controlled diffusion.
//!
//! Between `t_k` and `t_{k+1}` the chain moves by `+Δx`, `0` or `−Δx`. The
//! probabilities are chosen so that the increment has mean `μ h`; the
//! second moment depends on the [`KernelScheme`]. The grid is truncated to
//! `[x_min, x_max]` with a reflecting boundary: a move that would leave the
//! grid stays on the boundary node.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ControlSet, ProblemSpec};

/// Ratio `h / Δx²` used by the default step schedule `Δx = √(h / 0.1)`.
pub const DEFAULT_STEP_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelScheme {
    /// Positive part of the drift moves up, negative part moves down.
    #[default]
    Upwind,
    /// The whole drift sits in the up-probability:
    /// `p₊ = μh/Δx + ½σ²h/Δx²`, `p₋ = ½σ²h/Δx²`.
    Centered,
    /// Matches `E[H] = μh` and `Var[H] = σ²h` exactly.
    MomentMatched,
}

/// Time-space discretization of the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub horizon: f64,
    pub steps: usize,
    pub dx: f64,
    pub x_min: f64,
    /// Number of grid nodes (`J + 1`).
    pub n_nodes: usize,
    /// Index of `x₀` on the grid.
    pub origin: usize,
    pub controls: ControlSet,
    pub scheme: KernelScheme,
}

impl Discretization {
    /// Explicit grid. `x₀` must fall on a node strictly inside `[x_min, x_max]`.
    pub fn new(
        spec: &ProblemSpec,
        steps: usize,
        dx: f64,
        x_min: f64,
        x_max: f64,
        controls: ControlSet,
    ) -> Result<Self> {
        if steps == 0 {
            return invalid("number of time steps must be positive");
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return invalid(format!("spatial step must be positive, got {dx}"));
        }
        if !(x_min < spec.x0 && spec.x0 < x_max) {
            return invalid(format!(
                "x0 = {} must lie strictly inside [{x_min}, {x_max}]",
                spec.x0
            ));
        }
        let origin_f = (spec.x0 - x_min) / dx;
        let origin = origin_f.round() as usize;
        if (origin_f - origin as f64).abs() > 1e-9 {
            return invalid(format!("x0 = {} is not on the grid", spec.x0));
        }
        let last = ((x_max - x_min) / dx + 1e-9).floor() as usize;
        if last <= origin {
            return invalid("grid has no node above x0");
        }
        Ok(Self {
            horizon: spec.horizon,
            steps,
            dx,
            x_min,
            n_nodes: last + 1,
            origin,
            controls,
            scheme: KernelScheme::default(),
        })
    }

    /// Grid with `Δx = √(h / ratio)` and the default truncation
    /// [`default_radius`].
    pub fn with_ratio(
        spec: &ProblemSpec,
        steps: usize,
        ratio: f64,
        controls: ControlSet,
    ) -> Result<Self> {
        let radius = default_radius(spec, &controls);
        Self::centered(spec, steps, ratio, radius, controls)
    }

    /// Grid `x₀ + iΔx`, `|i| ≤ ⌈radius / Δx⌉`, with `Δx = √(h / ratio)`.
    pub fn centered(
        spec: &ProblemSpec,
        steps: usize,
        ratio: f64,
        radius: f64,
        controls: ControlSet,
    ) -> Result<Self> {
        if !(ratio > 0.0) {
            return invalid("step ratio h/dx^2 must be positive");
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return invalid(format!("grid half-width must be positive, got {radius}"));
        }
        if steps == 0 {
            return invalid("number of time steps must be positive");
        }
        let h = spec.horizon / steps as f64;
        let dx = (h / ratio).sqrt();
        let half = (radius / dx).ceil().max(1.0) as usize;
        let x_min = spec.x0 - half as f64 * dx;
        Ok(Self {
            horizon: spec.horizon,
            steps,
            dx,
            x_min,
            n_nodes: 2 * half + 1,
            origin: half,
            controls,
            scheme: KernelScheme::default(),
        })
    }

    /// `with_ratio` at `h/Δx² = 0.1`.
    pub fn standard(spec: &ProblemSpec, steps: usize, controls: ControlSet) -> Result<Self> {
        Self::with_ratio(spec, steps, DEFAULT_STEP_RATIO, controls)
    }

    pub fn with_scheme(mut self, scheme: KernelScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Time step `h = T / N`.
    pub fn h(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h()
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n_nodes - 1)
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|j| self.x(j)).collect()
    }

    pub(crate) fn up(&self, j: usize) -> usize {
        (j + 1).min(self.n_nodes - 1)
    }

    pub(crate) fn down(&self, j: usize) -> usize {
        j.saturating_sub(1)
    }
}

/// Default half-width `6 σ̄ √T + μ̄ T` of the state grid, with `σ̄`, `μ̄`
/// bounds on `σ` and `|μ|` over the controls at `x₀`.
pub fn default_radius(spec: &ProblemSpec, controls: &ControlSet) -> f64 {
    let times = [0.0, 0.5 * spec.horizon, spec.horizon];
    let mut sigma_bar: f64 = 0.0;
    let mut mu_bar: f64 = 0.0;
    for &t in &times {
        for &a in controls.values() {
            sigma_bar = sigma_bar.max((spec.diffusion)(t, spec.x0, a).abs());
            mu_bar = mu_bar.max((spec.drift)(t, spec.x0, a).abs());
        }
    }
    let radius = 6.0 * sigma_bar * spec.horizon.sqrt() + mu_bar * spec.horizon;
    if radius > 0.0 {
        radius
    } else {
        1.0
    }
}

/// Transition law `(p₊, p₋, 1 − p₊ − p₋)` of one chain step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTriple {
    pub p_up: f64,
    pub p_down: f64,
}

impl KernelTriple {
    pub fn p_stay(&self) -> f64 {
        1.0 - self.p_up - self.p_down
    }

    pub fn mean(&self, dx: f64) -> f64 {
        (self.p_up - self.p_down) * dx
    }

    pub fn second_moment(&self, dx: f64) -> f64 {
        (self.p_up + self.p_down) * dx * dx
    }

    pub fn variance(&self, dx: f64) -> f64 {
        let m = self.mean(dx);
        self.second_moment(dx) - m * m
    }

    /// `E|H|³`.
    pub fn third_abs_moment(&self, dx: f64) -> f64 {
        (self.p_up + self.p_down) * dx * dx * dx
    }

    /// Smallest of the three probabilities and its name.
    fn min_prob(&self) -> (f64, &'static str) {
        let stay = self.p_stay();
        let mut worst = (self.p_up, "p_up");
        if self.p_down < worst.0 {
            worst = (self.p_down, "p_down");
        }
        if stay < worst.0 {
            worst = (stay, "p_stay");
        }
        worst
    }
}

/// Probabilities for drift `mu` and volatility `sigma`, without validation.
#[inline]
pub fn kernel_probabilities(mu: f64, sigma: f64, h: f64, dx: f64, scheme: KernelScheme) -> KernelTriple {
    let diff = sigma * sigma * h / (dx * dx);
    let adv = mu * h / dx;
    match scheme {
        KernelScheme::Upwind => KernelTriple {
            p_up: adv.max(0.0) + 0.5 * diff,
            p_down: (-adv).max(0.0) + 0.5 * diff,
        },
        KernelScheme::Centered => KernelTriple {
            p_up: adv + 0.5 * diff,
            p_down: 0.5 * diff,
        },
        KernelScheme::MomentMatched => {
            let second = diff + adv * adv;
            KernelTriple {
                p_up: 0.5 * (second + adv),
                p_down: 0.5 * (second - adv),
            }
        }
    }
}

const PROB_SLACK: f64 = 1e-12;

#[inline]
pub(crate) fn checked_kernel(
    mu: f64,
    sigma: f64,
    h: f64,
    dx: f64,
    scheme: KernelScheme,
    t: f64,
    x: f64,
    a: f64,
) -> Result<KernelTriple> {
    let k = kernel_probabilities(mu, sigma, h, dx, scheme);
    let (value, which) = k.min_prob();
    let max = k.p_up.max(k.p_down);
    if !(value >= -PROB_SLACK) || !(max <= 1.0 + PROB_SLACK) || sigma < 0.0 {
        let (value, which) = if max > 1.0 + PROB_SLACK {
            if k.p_up >= k.p_down {
                (k.p_up, "p_up")
            } else {
                (k.p_down, "p_down")
            }
        } else if sigma < 0.0 {
            (sigma, "sigma")
        } else {
            (value, which)
        };
        return Err(Error::CflViolation {
            t,
            x,
            a,
            which,
            value,
        });
    }
    Ok(k)
}

/// Kernel at `(t, x, a)` for the discretization's scheme.
pub fn build_kernel(
    spec: &ProblemSpec,
    disc: &Discretization,
    t: f64,
    x: f64,
    a: f64,
) -> Result<KernelTriple> {
    let mu = (spec.drift)(t, x, a);
    let sigma = (spec.diffusion)(t, x, a);
    checked_kernel(mu, sigma, disc.h(), disc.dx, disc.scheme, t, x, a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub passed: bool,
    /// Smallest transition probability seen over the grid (negative on failure).
    pub worst_margin: f64,
    /// `max |μ| h/Δx + σ² h/Δx²` over the grid.
    pub max_ratio: f64,
    /// First offending `(t, x, a)`, if any.
    pub violation: Option<Error>,
}

/// Scans every `(t_k, x_j, a)` of the discretization.
pub fn validate_cfl(spec: &ProblemSpec, disc: &Discretization) -> ValidationReport {
    let h = disc.h();
    let dx = disc.dx;
    let mut worst_margin = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    let mut violation = None;
    for k in 0..disc.steps {
        let t = disc.time(k);
        for j in 0..disc.n_nodes {
            let x = disc.x(j);
            for &a in disc.controls.values() {
                let mu = (spec.drift)(t, x, a);
                let sigma = (spec.diffusion)(t, x, a);
                max_ratio = max_ratio.max(mu.abs() * h / dx + sigma * sigma * h / (dx * dx));
                let triple = kernel_probabilities(mu, sigma, h, dx, disc.scheme);
                let stay = triple.p_stay();
                let margin = triple.p_up.min(triple.p_down).min(stay);
                worst_margin = worst_margin.min(if margin.is_nan() { f64::NEG_INFINITY } else { margin });
                if violation.is_none() {
                    if let Err(e) = checked_kernel(mu, sigma, h, dx, disc.scheme, t, x, a) {
                        violation = Some(e);
                    }
                }
            }
        }
    }
    ValidationReport {
        passed: violation.is_none(),
        worst_margin,
        max_ratio,
        violation,
    }
}

/// Maps one uniform draw to an increment: `+Δx` below `p₊`, `−Δx` on
/// `[p₊, p₊ + p₋)`, zero otherwise.
#[inline]
pub fn sample_increment(kernel: &KernelTriple, u: f64, dx: f64) -> f64 {
    if u < kernel.p_up {
        dx
    } else if u < kernel.p_up + kernel.p_down {
        -dx
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use proptest::prelude::*;

    fn lq_with_sigma(sigma: f64) -> ProblemSpec {
        ProblemSpec::new(move |_, _, a| a, move |_, _, _| sigma, |_, _, _| 0.0, |x| x, 0.0, 1.0).unwrap()
    }

    #[test]
    fn driftless_unit_volatility() {
        // h / dx^2 = 0.1
        for scheme in [KernelScheme::Upwind, KernelScheme::Centered, KernelScheme::MomentMatched] {
            let k = kernel_probabilities(0.0, 1.0, 0.01, 0.1f64.sqrt(), scheme);
            assert!((k.p_up - 0.05).abs() < 1e-15);
            assert!((k.p_down - 0.05).abs() < 1e-15);
            assert!((k.p_stay() - 0.9).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_kernel_stays() {
        let k = kernel_probabilities(0.0, 0.0, 0.3, 0.2, KernelScheme::Upwind);
        assert_eq!((k.p_up, k.p_down, k.p_stay()), (0.0, 0.0, 1.0));
    }

    #[test]
    fn centered_kernel_matches_displayed_formula() {
        let dx = 0.1f64.sqrt();
        let k = kernel_probabilities(1.0, 1.0, 0.01, dx, KernelScheme::Centered);
        // 0.01 / sqrt(0.1) + 0.05
        assert!((k.p_up - 0.081_622_776_601_683_79).abs() < 1e-15);
        assert!((k.p_down - 0.05).abs() < 1e-15);
    }

    #[test]
    fn upwind_splits_negative_drift_downwards() {
        let dx = 0.1f64.sqrt();
        let k = kernel_probabilities(-1.0, 1.0, 0.01, dx, KernelScheme::Upwind);
        assert!((k.p_up - 0.05).abs() < 1e-15);
        assert!((k.p_down - 0.081_622_776_601_683_79).abs() < 1e-15);
        let centered = kernel_probabilities(-3.0, 1.0, 0.01, dx, KernelScheme::Centered);
        assert!(centered.p_up < 0.0);
        let upwind = kernel_probabilities(-3.0, 1.0, 0.01, dx, KernelScheme::Upwind);
        assert!(upwind.p_up > 0.0);
    }

    #[test]
    fn example1_grid_passes_cfl() {
        let spec = builtin::example1();
        let controls = ControlSet::uniform(-6.0, 6.0, 0.5).unwrap();
        let disc = Discretization::standard(&spec, 100, controls).unwrap();
        let report = validate_cfl(&spec, &disc);
        assert!(report.passed, "{report:?}");
        // max |a| h/dx + sigma^2 h/dx^2 = 6 sqrt(0.1 h) + 0.1
        let expected = 6.0 * (0.1f64 * 0.01).sqrt() + 0.1;
        assert!((report.max_ratio - expected).abs() < 1e-12);
        assert!(report.worst_margin > 0.0);
    }

    #[test]
    fn excessive_diffusion_fails_cfl() {
        // sigma^2 h / dx^2 = 2
        let spec = lq_with_sigma(1.0);
        let controls = ControlSet::new(vec![0.0], "zero").unwrap();
        let h = 0.01;
        let dx = (h / 2.0f64).sqrt();
        let disc = Discretization::new(&spec, 100, dx, -10.0 * dx, 10.0 * dx, controls).unwrap();
        let report = validate_cfl(&spec, &disc);
        assert!(!report.passed);
        assert!(report.worst_margin < 0.0);
        match report.violation {
            Some(Error::CflViolation { which, value, .. }) => {
                // p_up = p_down = 1, so the stay mass is -1.
                assert_eq!(which, "p_stay");
                assert!((value + 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(build_kernel(&spec, &disc, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn grid_places_x0_on_a_node() {
        let spec = builtin::example1();
        let disc = Discretization::standard(&spec, 1000, ControlSet::uniform(-6.0, 6.0, 0.5).unwrap()).unwrap();
        assert!((disc.x(disc.origin) - spec.x0).abs() < 1e-12);
        assert!(disc.x_min <= -12.0 && disc.x_max() >= 12.0);
        assert!(Discretization::new(&spec, 10, 0.3, -1.0, 1.0, disc.controls.clone()).is_err());
    }

    #[test]
    fn threshold_sampling() {
        let k = KernelTriple { p_up: 0.05, p_down: 0.05 };
        assert_eq!(sample_increment(&k, 0.02, 0.5), 0.5);
        assert_eq!(sample_increment(&k, 0.07, 0.5), -0.5);
        assert_eq!(sample_increment(&k, 0.50, 0.5), 0.0);
    }

    #[test]
    fn third_moment_scales_like_h_three_halves() {
        let mut ratios = Vec::new();
        for n in [10usize, 100, 1000, 10000] {
            let h = 1.0 / n as f64;
            let dx = (h / DEFAULT_STEP_RATIO).sqrt();
            let k = kernel_probabilities(3.0, 1.0, h, dx, KernelScheme::Upwind);
            ratios.push(k.third_abs_moment(dx) / h.powf(1.5));
        }
        // E|H|³ = σ² h Δx + |μ| h Δx², so the ratio tends to σ² / sqrt(ratio).
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
        let limit = 1.0 / DEFAULT_STEP_RATIO.sqrt();
        assert!((ratios[3] - limit).abs() < 0.35, "{ratios:?}");
    }

    proptest! {
        #[test]
        fn mean_matches_drift(mu in -3.0f64..3.0, sigma in 0.0f64..1.5, n in 50usize..2000) {
            let h = 1.0 / n as f64;
            let dx = (h / DEFAULT_STEP_RATIO).sqrt();
            for scheme in [KernelScheme::Upwind, KernelScheme::MomentMatched] {
                let k = kernel_probabilities(mu, sigma, h, dx, scheme);
                prop_assert!((k.mean(dx) - mu * h).abs() <= 1e-12 * (mu * h).abs().max(1e-300) + 1e-18);
            }
        }

        #[test]
        fn upwind_second_moment_carries_numerical_diffusion(mu in -3.0f64..3.0, sigma in 0.0f64..1.5) {
            let h = 1e-3;
            let dx = (h / DEFAULT_STEP_RATIO).sqrt();
            let k = kernel_probabilities(mu, sigma, h, dx, KernelScheme::Upwind);
            let expected = sigma * sigma * h + mu.abs() * h * dx;
            prop_assert!((k.second_moment(dx) - expected).abs() <= 1e-12 * expected.max(1e-300));
        }
    }
}
