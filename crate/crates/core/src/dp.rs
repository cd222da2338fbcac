//! Backward induction for the inner problem `d_h(λ)` and exact forward
//! propagation of the chain law under a feedback policy.

use rayon::prelude::*;

use crate::chain::{checked_kernel, Discretization};
use crate::error::{invalid, Error, Result};
use crate::model::{lagrangian_terminal, DualPoint, ProblemSpec};

/// `values[k][j] = V_k(x_j)` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
}

/// `action[k][j]` indexes the control chosen at `(t_k, x_j)` for `k < N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackPolicy {
    pub action: Vec<Vec<usize>>,
}

impl FeedbackPolicy {
    /// Policy that plays control `index` everywhere.
    pub fn constant(disc: &Discretization, index: usize) -> Self {
        Self {
            action: vec![vec![index; disc.n_nodes]; disc.steps],
        }
    }

    pub fn check_shape(&self, disc: &Discretization) -> Result<()> {
        if self.action.len() != disc.steps
            || self.action.iter().any(|row| row.len() != disc.n_nodes)
        {
            return invalid("policy shape does not match the discretization");
        }
        if self
            .action
            .iter()
            .flatten()
            .any(|&i| i >= disc.controls.len())
        {
            return invalid("policy refers to a control outside the control set");
        }
        Ok(())
    }
}

/// `mass[k][j]`: probability that the chain sits at `x_j` at time `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    pub mass: Vec<Vec<f64>>,
}

impl GridDistribution {
    /// `E[f(X_{t_N})]`, summed in grid order.
    pub fn expect_terminal(&self, disc: &Discretization, f: impl Fn(f64) -> f64) -> f64 {
        let last = self.mass.last().expect("distribution has at least one slice");
        last.iter()
            .enumerate()
            .filter(|(_, &m)| m != 0.0)
            .map(|(j, &m)| m * f(disc.x(j)))
            .sum()
    }
}

/// Result of one inner solve at a fixed multiplier.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub lambda: DualPoint,
    /// `d_h(λ)`.
    pub value: f64,
    /// `E[Ψᵢ] − zᵢ` under the minimizing policy.
    pub supergradient: Vec<f64>,
    pub policy: FeedbackPolicy,
    /// Expected primal cost (running plus terminal) under the policy.
    pub phi_expectation: f64,
}

/// Expectations of the cost and the constraint residuals under a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub cost: f64,
    pub residuals: Vec<f64>,
}

impl PolicyOutcome {
    pub fn lagrangian(&self, lambda: &[f64]) -> f64 {
        self.cost
            + self
                .residuals
                .iter()
                .zip(lambda)
                .map(|(g, l)| g * l)
                .sum::<f64>()
    }
}

/// Backward induction from an arbitrary terminal array.
///
/// Ties in the minimization go to the lowest control index.
pub fn backward_induction(
    spec: &ProblemSpec,
    disc: &Discretization,
    terminal: &[f64],
) -> Result<(ValueTable, FeedbackPolicy)> {
    if terminal.len() != disc.n_nodes {
        return invalid("terminal array does not match the grid");
    }
    let h = disc.h();
    let controls = disc.controls.values();
    let mut values = vec![Vec::new(); disc.steps + 1];
    let mut action = vec![Vec::new(); disc.steps];
    values[disc.steps] = terminal.to_vec();

    for k in (0..disc.steps).rev() {
        let t = disc.time(k);
        let next = &values[k + 1];
        let slice: Vec<(f64, usize)> = (0..disc.n_nodes)
            .into_par_iter()
            .map(|j| {
                let x = disc.x(j);
                let v_stay = next[j];
                let dv_up = next[disc.up(j)] - v_stay;
                let dv_down = next[disc.down(j)] - v_stay;
                let mut best = (f64::INFINITY, 0usize);
                for (i, &a) in controls.iter().enumerate() {
                    let mu = (spec.drift)(t, x, a);
                    let sigma = (spec.diffusion)(t, x, a);
                    let p = checked_kernel(mu, sigma, h, disc.dx, disc.scheme, t, x, a)?;
                    let q = v_stay
                        + (spec.running_cost)(t, x, a) * h
                        + p.p_up * dv_up
                        + p.p_down * dv_down;
                    if q.is_nan() {
                        return Err(Error::NumericalFailure(format!(
                            "NaN value at (t={t}, x={x}, a={a})"
                        )));
                    }
                    if q < best.0 {
                        best = (q, i);
                    }
                }
                Ok(best)
            })
            .collect::<Result<_>>()?;
        values[k] = slice.iter().map(|s| s.0).collect();
        action[k] = slice.iter().map(|s| s.1).collect();
    }
    Ok((ValueTable { values }, FeedbackPolicy { action }))
}

/// Terminal array `Υ(x_j, λ)` on the grid.
pub fn terminal_payoff(spec: &ProblemSpec, disc: &Discretization, lambda: &DualPoint) -> Result<Vec<f64>> {
    (0..disc.n_nodes)
        .map(|j| lagrangian_terminal(disc.x(j), lambda, spec))
        .collect()
}

/// Backward pass only: value table and argmin policy of `d_h(λ)`.
pub fn solve_value_table(
    spec: &ProblemSpec,
    disc: &Discretization,
    lambda: &DualPoint,
) -> Result<(ValueTable, FeedbackPolicy)> {
    spec.require_dp_compatible()?;
    let terminal = terminal_payoff(spec, disc, lambda)?;
    backward_induction(spec, disc, &terminal)
}

/// Solves `d_h(λ)` and evaluates the supergradient by a forward pass under
/// the minimizing policy.
pub fn solve_inner(spec: &ProblemSpec, disc: &Discretization, lambda: &DualPoint) -> Result<DualEvaluation> {
    let (table, policy) = solve_value_table(spec, disc, lambda)?;
    let value = table.values[0][disc.origin];
    let outcome = policy_outcome(spec, disc, &policy)?;
    Ok(DualEvaluation {
        lambda: lambda.clone(),
        value,
        supergradient: outcome.residuals,
        policy,
        phi_expectation: outcome.cost,
    })
}

fn push_forward(
    spec: &ProblemSpec,
    disc: &Discretization,
    policy: &FeedbackPolicy,
    k: usize,
    mass: &[f64],
    next: &mut [f64],
) -> Result<()> {
    let t = disc.time(k);
    let h = disc.h();
    next.iter_mut().for_each(|m| *m = 0.0);
    for (j, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let x = disc.x(j);
        let a = disc.controls.values()[policy.action[k][j]];
        let mu = (spec.drift)(t, x, a);
        let sigma = (spec.diffusion)(t, x, a);
        let p = checked_kernel(mu, sigma, h, disc.dx, disc.scheme, t, x, a)?;
        next[disc.up(j)] += m * p.p_up;
        next[disc.down(j)] += m * p.p_down;
        next[j] += m * p.p_stay();
    }
    Ok(())
}

fn check_mass(slice: &[f64], k: usize) -> Result<()> {
    let total: f64 = slice.iter().sum();
    if (total - 1.0).abs() > 1e-10 || total.is_nan() {
        return Err(Error::NumericalFailure(format!(
            "probability mass {total} at time index {k}"
        )));
    }
    Ok(())
}

/// Law of the chain at every time index under `policy`.
pub fn forward_distribution(
    spec: &ProblemSpec,
    disc: &Discretization,
    policy: &FeedbackPolicy,
) -> Result<GridDistribution> {
    policy.check_shape(disc)?;
    let mut mass = vec![vec![0.0; disc.n_nodes]; disc.steps + 1];
    mass[0][disc.origin] = 1.0;
    for k in 0..disc.steps {
        let (head, tail) = mass.split_at_mut(k + 1);
        push_forward(spec, disc, policy, k, &head[k], &mut tail[0])?;
        check_mass(&tail[0], k + 1)?;
    }
    Ok(GridDistribution { mass })
}

/// Expected cost and constraint residuals of a policy, computed exactly on
/// the grid with two rolling slices.
pub fn policy_outcome(spec: &ProblemSpec, disc: &Discretization, policy: &FeedbackPolicy) -> Result<PolicyOutcome> {
    spec.require_dp_compatible()?;
    policy.check_shape(disc)?;
    let h = disc.h();
    let mut mass = vec![0.0; disc.n_nodes];
    let mut next = vec![0.0; disc.n_nodes];
    mass[disc.origin] = 1.0;
    let mut running = 0.0;
    for k in 0..disc.steps {
        let t = disc.time(k);
        for (j, &m) in mass.iter().enumerate() {
            if m != 0.0 {
                let a = disc.controls.values()[policy.action[k][j]];
                running += m * (spec.running_cost)(t, disc.x(j), a) * h;
            }
        }
        push_forward(spec, disc, policy, k, &mass, &mut next)?;
        check_mass(&next, k + 1)?;
        std::mem::swap(&mut mass, &mut next);
    }
    let expect = |f: &dyn Fn(f64) -> f64| -> f64 {
        mass.iter()
            .enumerate()
            .filter(|(_, &m)| m != 0.0)
            .map(|(j, &m)| m * f(disc.x(j)))
            .sum()
    };
    let cost = running + expect(&*spec.terminal_cost);
    let residuals = spec
        .constraints()
        .iter()
        .map(|c| {
            let psi = c.terminal_map.as_ref().expect("checked DP compatibility");
            expect(&**psi) - c.target
        })
        .collect();
    Ok(PolicyOutcome { cost, residuals })
}

/// Value of the discrete constrained problem `V_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimalValue {
    Finite(f64),
    Infeasible,
}

impl PrimalValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            PrimalValue::Finite(v) => Some(v),
            PrimalValue::Infeasible => None,
        }
    }
}

/// Outcomes of every deterministic feedback policy on a tiny instance,
/// restricted to the nodes the chain can reach. Duplicated outcomes are
/// dropped.
pub fn enumerate_policy_outcomes(spec: &ProblemSpec, disc: &Discretization) -> Result<Vec<(FeedbackPolicy, PolicyOutcome)>> {
    if disc.steps > 2 || disc.n_nodes > 10 || disc.controls.len() > 3 || spec.n_constraints() > 2 {
        return invalid("instance too large for exhaustive enumeration (need N<=2, J<=9, |A|<=3, m+l<=2)");
    }
    spec.require_dp_compatible()?;
    // Decision slots: (k, j) pairs reachable from x0.
    let mut slots = Vec::new();
    for k in 0..disc.steps {
        let lo = disc.origin.saturating_sub(k);
        let hi = (disc.origin + k).min(disc.n_nodes - 1);
        slots.extend((lo..=hi).map(|j| (k, j)));
    }
    let n_controls = disc.controls.len();
    let total = n_controls.pow(slots.len() as u32);
    let mut out: Vec<(FeedbackPolicy, PolicyOutcome)> = Vec::new();
    for code in 0..total {
        let mut policy = FeedbackPolicy::constant(disc, 0);
        let mut c = code;
        for &(k, j) in &slots {
            policy.action[k][j] = c % n_controls;
            c /= n_controls;
        }
        let outcome = policy_outcome(spec, disc, &policy)?;
        if !out.iter().any(|(_, o)| o == &outcome) {
            out.push((policy, outcome));
        }
    }
    Ok(out)
}

/// Exhaustive primal value of a tiny instance over mixtures of deterministic
/// policies.
///
/// The mixture weights solve the linear program `min Σ w_p c_p` subject to
/// `Σ w_p g_p = 0` on equality rows, `Σ w_p g_p + s = 0` with slack `s ≥ 0` on
/// inequality rows, and `Σ w_p = 1`. Every basic solution is enumerated; with
/// at most three rows each one is a small dense solve.
pub fn primal_bruteforce(spec: &ProblemSpec, disc: &Discretization) -> Result<PrimalValue> {
    let outcomes = enumerate_policy_outcomes(spec, disc)?;
    let points: Vec<(f64, Vec<f64>)> = outcomes
        .into_iter()
        .map(|(_, o)| (o.cost, o.residuals))
        .collect();
    Ok(mixture_minimum(&points, spec.n_equality()))
}

/// Minimum of `Σ w_p cost_p` over convex weights with `Σ w_p g_p` feasible
/// for `m` equality rows followed by inequality rows.
pub fn mixture_minimum(points: &[(f64, Vec<f64>)], n_equality: usize) -> PrimalValue {
    let dim = points.first().map_or(0, |p| p.1.len());
    let n_ineq = dim - n_equality;
    let n_cols = points.len() + n_ineq;
    let n_rows = dim + 1;
    let column = |c: usize| -> (f64, Vec<f64>) {
        let mut col = vec![0.0; n_rows];
        if c < points.len() {
            col[..dim].copy_from_slice(&points[c].1);
            col[dim] = 1.0;
            (points[c].0, col)
        } else {
            col[n_equality + (c - points.len())] = 1.0;
            (0.0, col)
        }
    };
    let columns: Vec<(f64, Vec<f64>)> = (0..n_cols).map(column).collect();
    let mut rhs = vec![0.0; n_rows];
    rhs[dim] = 1.0;

    let rows = match independent_rows(&columns, &rhs) {
        Some(rows) => rows,
        None => return PrimalValue::Infeasible,
    };
    let rank = rows.len();
    let b: Vec<f64> = rows.iter().map(|&r| rhs[r]).collect();
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..rank).collect();
    loop {
        let matrix: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| subset.iter().map(|&c| columns[c].1[r]).collect())
            .collect();
        if let Some(w) = crate::linalg::solve(&matrix, &b) {
            if w.iter().all(|&v| v >= -1e-10) {
                let value: f64 = subset.iter().zip(&w).map(|(&c, &v)| columns[c].0 * v).sum();
                best = best.min(value);
            }
        }
        if !next_combination(&mut subset, n_cols) {
            break;
        }
    }
    if best.is_finite() {
        PrimalValue::Finite(best)
    } else {
        PrimalValue::Infeasible
    }
}

/// Rows of `[A | b]` forming a basis of the row space of `A`; `None` when the
/// system is inconsistent.
fn independent_rows(columns: &[(f64, Vec<f64>)], rhs: &[f64]) -> Option<Vec<usize>> {
    let n_rows = rhs.len();
    let n_cols = columns.len();
    let scale = columns
        .iter()
        .flat_map(|c| c.1.iter())
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-10 * scale;
    let mut basis: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut kept = Vec::new();
    for r in 0..n_rows {
        let mut row: Vec<f64> = (0..n_cols).map(|c| columns[c].1[r]).collect();
        let mut b = rhs[r];
        for ((brow, bb), &p) in basis.iter().zip(&pivots) {
            let f = row[p] / brow[p];
            if f != 0.0 {
                row.iter_mut().zip(brow).for_each(|(x, y)| *x -= f * y);
                b -= f * bb;
            }
        }
        let (p, max) = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if max <= tol {
            if b.abs() > tol {
                return None;
            }
            continue;
        }
        basis.push((row, b));
        pivots.push(p);
        kept.push(r);
    }
    Some(kept)
}

fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    for i in (0..k).rev() {
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{kernel_probabilities, KernelScheme};
    use crate::model::{builtin, ConstraintFunctional, ConstraintKind, ControlSet};

    fn constant_problem(c: f64) -> ProblemSpec {
        ProblemSpec::new(|_, _, a| a, |_, _, _| 1.0, |_, _, _| 0.0, move |_| c, 0.0, 1.0).unwrap()
    }

    #[test]
    fn constant_terminal_is_a_fixed_point() {
        let spec = constant_problem(2.5);
        let disc = Discretization::standard(&spec, 50, ControlSet::uniform(-1.0, 1.0, 0.5).unwrap()).unwrap();
        let eval = solve_inner(&spec, &disc, &DualPoint::zeros(&spec)).unwrap();
        assert!((eval.value - 2.5).abs() < 1e-12);
        assert!(eval.supergradient.is_empty());
    }

    #[test]
    fn one_step_matches_hand_enumeration() {
        let spec = ProblemSpec::new(
            |_, x, a| a - 0.5 * x,
            |_, _, a| 1.0 + 0.2 * a,
            |_, _, a| a * a,
            |x| (x - 0.3).powi(2),
            0.0,
            0.1,
        )
        .unwrap();
        let controls = ControlSet::new(vec![-1.0, 1.0], "pair").unwrap();
        let disc = Discretization::new(&spec, 1, 0.5, -1.0, 1.0, controls).unwrap();
        let eval = solve_inner(&spec, &disc, &DualPoint::zeros(&spec)).unwrap();
        let h = 0.1;
        let dx = 0.5;
        let phi = |x: f64| (x - 0.3f64).powi(2);
        let brute = [-1.0f64, 1.0]
            .iter()
            .map(|&a| {
                let k = kernel_probabilities(a, 1.0 + 0.2 * a, h, dx, KernelScheme::Upwind);
                a * a * h + k.p_up * phi(dx) + k.p_down * phi(-dx) + k.p_stay() * phi(0.0)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((eval.value - brute).abs() < 1e-14, "{} vs {brute}", eval.value);
    }

    #[test]
    fn deterministic_chain_stays_put() {
        let spec = ProblemSpec::new(|_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 0.0, |x| x, 0.0, 1.0).unwrap();
        let disc = Discretization::new(&spec, 5, 0.1, -0.5, 0.5, ControlSet::new(vec![0.0], "0").unwrap()).unwrap();
        let policy = FeedbackPolicy::constant(&disc, 0);
        let dist = forward_distribution(&spec, &disc, &policy).unwrap();
        for slice in &dist.mass {
            assert_eq!(slice[disc.origin], 1.0);
        }
    }

    #[test]
    fn one_step_pushforward() {
        let spec = ProblemSpec::new(|_, _, _| 0.0, |_, _, _| 1.0, |_, _, _| 0.0, |x| x, 0.0, 0.01).unwrap();
        let dx = 0.1f64.sqrt();
        let disc = Discretization::new(&spec, 1, dx, -3.0 * dx, 3.0 * dx, ControlSet::new(vec![0.0], "0").unwrap()).unwrap();
        let dist = forward_distribution(&spec, &disc, &FeedbackPolicy::constant(&disc, 0)).unwrap();
        let o = disc.origin;
        assert!((dist.mass[1][o - 1] - 0.05).abs() < 1e-15);
        assert!((dist.mass[1][o] - 0.9).abs() < 1e-15);
        assert!((dist.mass[1][o + 1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_path_constraints_and_bad_policies() {
        let spec = builtin::example1()
            .with_constraints(vec![ConstraintFunctional::path(ConstraintKind::Inequality, |p| p.max())])
            .unwrap();
        let disc = Discretization::standard(&spec, 10, ControlSet::uniform(-1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(matches!(
            solve_inner(&spec, &disc, &DualPoint::zeros(&spec)),
            Err(Error::PathDependentConstraint { index: 0 })
        ));
        let bad = FeedbackPolicy { action: vec![vec![0; 3]; 2] };
        assert!(forward_distribution(&spec, &disc, &bad).is_err());
    }

    #[test]
    fn consistency_identity() {
        let spec = builtin::example2();
        let disc = Discretization::standard(&spec, 40, ControlSet::uniform(-3.0, 3.0, 0.25).unwrap()).unwrap();
        for l in [0.0, 0.7, 2.0] {
            let lambda = DualPoint::for_spec(&spec, vec![l]).unwrap();
            let eval = solve_inner(&spec, &disc, &lambda).unwrap();
            let lagr = eval.phi_expectation + l * eval.supergradient[0];
            assert!((eval.value - lagr).abs() < 1e-8, "{} vs {lagr}", eval.value);
        }
    }

    #[test]
    fn unconstrained_bruteforce_equals_dp() {
        let spec = ProblemSpec::new(|_, _, a| a, |_, _, _| 0.8, |_, x, a| 0.5 * a * a + 0.1 * x, |x| x * x, 0.0, 0.2).unwrap();
        let controls = ControlSet::new(vec![-1.0, 0.0, 1.0], "three").unwrap();
        let disc = Discretization::new(&spec, 2, 0.4, -1.2, 1.2, controls).unwrap();
        let primal = primal_bruteforce(&spec, &disc).unwrap().finite().unwrap();
        let dual = solve_inner(&spec, &disc, &DualPoint::zeros(&spec)).unwrap().value;
        assert!((primal - dual).abs() < 1e-12, "{primal} vs {dual}");
    }

    #[test]
    fn two_point_mixture_by_hand() {
        // Deterministic one-step problem: control a moves x0=0 to a*h exactly
        // (sigma = 0, h = dx = 1 with drift a in {-1, 0, 1}).
        let spec = ProblemSpec::new(|_, _, a| a, |_, _, _| 0.0, |_, _, a| a * a, |_| 0.0, 0.0, 1.0)
            .unwrap()
            .with_constraints(vec![ConstraintFunctional::terminal(ConstraintKind::Equality, |x| x).with_target(0.25)])
            .unwrap();
        let controls = ControlSet::new(vec![-1.0, 0.0, 1.0], "three").unwrap();
        let disc = Discretization::new(&spec, 1, 1.0, -2.0, 2.0, controls).unwrap();
        // Pure outcomes: (cost, E[X]) = (1, -1), (0, 0), (1, 1). Hitting E[X] = 0.25
        // at least cost mixes a=0 (weight 0.75) with a=1 (weight 0.25): cost 0.25.
        let v = primal_bruteforce(&spec, &disc).unwrap();
        assert!((v.finite().unwrap() - 0.25).abs() < 1e-12, "{v:?}");
    }

    #[test]
    fn unreachable_constraint_is_infeasible() {
        let spec = ProblemSpec::new(|_, _, a| a, |_, _, _| 0.0, |_, _, _| 0.0, |_| 0.0, 0.0, 1.0)
            .unwrap()
            .with_constraints(vec![ConstraintFunctional::terminal(ConstraintKind::Inequality, |_| 1.0)])
            .unwrap();
        let controls = ControlSet::new(vec![-1.0, 1.0], "pair").unwrap();
        let disc = Discretization::new(&spec, 1, 1.0, -2.0, 2.0, controls).unwrap();
        assert_eq!(primal_bruteforce(&spec, &disc).unwrap(), PrimalValue::Infeasible);
    }

    #[test]
    fn combination_enumeration() {
        let mut s = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut s, 4) {
            count += 1;
        }
        assert_eq!(count, 6);
    }
}
