//! Random tiny instances for the duality suites.

#![allow(dead_code)]

use ccs_core::chain::Discretization;
use ccs_core::dp::{enumerate_policy_outcomes, solve_value_table};
use ccs_core::dual::estimate_cost_bound;
use ccs_core::model::{ConstraintFunctional, ConstraintKind, ControlSet, DualPoint, ProblemSpec};
use ccs_core::qualify::{check_qualification, QualificationReport, QualifyParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest certified margin accepted by [`qualified_instances`].
pub const MIN_MARGIN: f64 = 0.02;

pub struct TinyInstance {
    pub seed: u64,
    pub spec: ProblemSpec,
    pub disc: Discretization,
    /// Measured cost bound `M`.
    pub m_bound: f64,
    /// Margin certified by explicit policies (a lower bound on the true one).
    pub eps: f64,
    pub report: QualificationReport,
}

impl TinyInstance {
    pub fn radius(&self) -> f64 {
        2.0 * self.m_bound / self.eps
    }

    /// `d_h(λ)` from the backward pass alone.
    pub fn dual_value(&self, lambda: &[f64]) -> f64 {
        let point = DualPoint::for_spec(&self.spec, lambda.to_vec()).unwrap();
        let (table, _) = solve_value_table(&self.spec, &self.disc, &point).unwrap();
        table.values[0][self.disc.origin]
    }

    /// Uniform draw from the sign cone intersected with `[-r, r]^dim`.
    pub fn random_lambda(&self, rng: &mut impl Rng, r: f64) -> Vec<f64> {
        let m = self.spec.n_equality();
        (0..self.spec.n_constraints())
            .map(|i| if i < m { rng.gen_range(-r..r) } else { rng.gen_range(0.0..r) })
            .collect()
    }
}

/// Quadratic-plus-sine map with random coefficients.
fn random_map(rng: &mut impl Rng) -> (f64, f64, f64) {
    (rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
}

/// One random instance: `N ≤ 2`, nine nodes, `|A| ≤ 3`, `m + ℓ ≤ 2`, all
/// within the CFL limits of the upwind kernel.
pub fn random_instance(seed: u64) -> (ProblemSpec, Discretization) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = rng.gen_range(1..=2usize);
    let h = rng.gen_range(0.1..0.3);
    let horizon = steps as f64 * h;

    let b0 = rng.gen_range(-0.3..0.3);
    let b1 = rng.gen_range(0.5..1.0);
    let s0 = rng.gen_range(0.4..1.0);
    let s1 = rng.gen_range(0.0..0.1);
    let c_a = rng.gen_range(0.1..1.0);
    let c_x = rng.gen_range(0.0..0.5);
    let q2 = rng.gen_range(0.0..1.0);
    let q1 = rng.gen_range(-1.0..1.0);
    let base = ProblemSpec::new(
        move |_, _, a| b0 + b1 * a,
        move |_, x, _| s0 + s1 * x.sin(),
        move |_, x, a| c_a * a * a + c_x * x * x,
        move |x| q2 * x * x + q1 * x,
        0.0,
        horizon,
    )
    .unwrap();

    let mut pool = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
    pool.shuffle(&mut rng);
    let n_controls = rng.gen_range(2..=3usize);
    let mut values: Vec<f64> = pool[..n_controls].to_vec();
    values.sort_by(f64::total_cmp);
    let controls = ControlSet::new(values, "tiny").unwrap();

    let n_constraints = rng.gen_range(1..=2usize);
    let n_equality = rng.gen_range(0..=n_constraints);
    let mut constraints = Vec::new();
    for i in 0..n_constraints {
        let (alpha, beta, gamma) = random_map(&mut rng);
        let kind = if i < n_equality { ConstraintKind::Equality } else { ConstraintKind::Inequality };
        constraints.push(ConstraintFunctional::terminal(kind, move |x| alpha * x + beta * x * x + gamma * x.sin()));
    }
    let spec = base.with_constraints(constraints).unwrap();
    let disc = Discretization::new(&spec, steps, 1.0, -4.0, 4.0, controls).unwrap();

    // Targets: centroid of the reachable outcomes, loosened on inequality
    // rows.
    let outcomes = enumerate_policy_outcomes(&spec, &disc).unwrap();
    let n = outcomes.len() as f64;
    let targets: Vec<f64> = (0..n_constraints)
        .map(|i| {
            let centroid = outcomes.iter().map(|(_, o)| o.residuals[i]).sum::<f64>() / n;
            if i < n_equality { centroid } else { centroid + rng.gen_range(0.0..0.3) }
        })
        .collect();
    let spec = spec.with_targets(&targets).unwrap();
    (spec, disc)
}

/// Measures `M` and the qualification margin of a random instance.
pub fn measure(seed: u64, spec: ProblemSpec, disc: Discretization) -> TinyInstance {
    let report = check_qualification(&spec, &disc, MIN_MARGIN, &QualifyParams::default()).unwrap();
    TinyInstance {
        seed,
        m_bound: estimate_cost_bound(&spec, &disc),
        eps: report.certified_margin(),
        spec,
        disc,
        report,
    }
}

/// The first `count` seeds from `first_seed` whose instance has a certified
/// margin of at least [`MIN_MARGIN`].
pub fn qualified_instances(first_seed: u64, count: usize) -> Vec<TinyInstance> {
    let mut out = Vec::new();
    let mut seed = first_seed;
    while out.len() < count {
        let (spec, disc) = random_instance(seed);
        let inst = measure(seed, spec, disc);
        if inst.eps >= MIN_MARGIN {
            out.push(inst);
        }
        seed += 1;
        assert!(seed < first_seed + 50 * count as u64 + 100, "too few qualified instances");
    }
    out
}

/// Maximizes a concave function on `[lo, hi]` by ternary search.
pub fn ternary_max(mut lo: f64, mut hi: f64, iters: usize, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..iters {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    f(0.5 * (lo + hi))
}

/// `max_λ d_h(λ)` over `[-r, r]^m × [0, r]^ℓ` by nested ternary search.
pub fn dual_max_by_search(inst: &TinyInstance, r: f64, iters: usize) -> f64 {
    let m = inst.spec.n_equality();
    let range = |i: usize| if i < m { (-r, r) } else { (0.0, r) };
    match inst.spec.n_constraints() {
        1 => {
            let (lo, hi) = range(0);
            ternary_max(lo, hi, iters, |l| inst.dual_value(&[l]))
        }
        2 => {
            let (lo0, hi0) = range(0);
            let (lo1, hi1) = range(1);
            ternary_max(lo0, hi0, iters, |l0| ternary_max(lo1, hi1, iters, |l1| inst.dual_value(&[l0, l1])))
        }
        n => panic!("unsupported constraint count {n}"),
    }
}
