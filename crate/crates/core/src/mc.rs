//! Monte-Carlo simulation of the chain under a feedback policy.
//!
//! Path `i` draws its uniforms from a ChaCha8 stream selected by `i`, keyed on
//! the seed; step `k` consumes the `k`-th output. A path therefore does not
//! depend on how many paths are run or how they are scheduled. Paths are
//! processed in fixed-size blocks, summed pairwise inside each block, and the
//! block sums are merged in block order, so the estimates are bit-identical
//! for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::{build_kernel, sample_increment, Discretization, KernelTriple};
use crate::dp::FeedbackPolicy;
use crate::error::{invalid, Result};
use crate::model::{PathFn, ProblemSpec, SampledPath};

const BLOCK: usize = 4096;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub store_paths: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return invalid("n_paths must be at least 1");
        }
        Ok(Self { n_paths, seed, store_paths: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SimEstimate {
    fn from_moments(n: usize, mean: f64, m2: f64) -> Self {
        let nf = n as f64;
        let var = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
        let se = (var / nf).sqrt();
        Self {
            mean,
            se,
            ci_low: mean - Z95 * se,
            ci_high: mean + Z95 * se,
        }
    }

    /// `|a − b| / sqrt(se_a² + se_b²)`, infinite when both are exact and differ.
    pub fn z_distance(&self, other: &SimEstimate) -> f64 {
        let diff = (self.mean - other.mean).abs();
        let se = self.se.hypot(other.se);
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// One estimate per functional, in input order.
    pub estimates: Vec<SimEstimate>,
    /// Running plus terminal cost along the paths.
    pub cost: SimEstimate,
    pub times: Vec<f64>,
    /// Grid states of every path when `store_paths` is set.
    pub paths: Option<Vec<Vec<f64>>>,
}

/// `Ψ(ω) = f(ω_T)` as a path map.
pub fn terminal_functional(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> PathFn {
    std::sync::Arc::new(move |p: &SampledPath<'_>| f(p.terminal()))
}

/// `max_t d(X̂_t, [lower, ∞))`. On a piecewise-linear path the maximum is
/// attained at a grid time.
pub fn running_max_distance_above(lower: f64) -> PathFn {
    std::sync::Arc::new(move |p: &SampledPath<'_>| (lower - p.min()).max(0.0))
}

fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

struct StepTable {
    kernel: Vec<KernelTriple>,
    running: Vec<f64>,
}

fn tabulate(spec: &ProblemSpec, disc: &Discretization, policy: &FeedbackPolicy) -> Result<StepTable> {
    let h = disc.h();
    let mut kernel = Vec::with_capacity(disc.steps * disc.n_nodes);
    let mut running = Vec::with_capacity(disc.steps * disc.n_nodes);
    for k in 0..disc.steps {
        let t = disc.time(k);
        for j in 0..disc.n_nodes {
            let x = disc.x(j);
            let a = disc.controls.values()[policy.action[k][j]];
            kernel.push(build_kernel(spec, disc, t, x, a)?);
            running.push((spec.running_cost)(t, x, a) * h);
        }
    }
    Ok(StepTable { kernel, running })
}

/// Node indices of path `index`.
fn draw_path(disc: &Discretization, table: &StepTable, seed: u64, index: u64, nodes: &mut Vec<usize>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    nodes.clear();
    let mut j = disc.origin;
    nodes.push(j);
    let mut running = 0.0;
    for k in 0..disc.steps {
        let cell = k * disc.n_nodes + j;
        running += table.running[cell];
        let u: f64 = rng.gen();
        let step = sample_increment(&table.kernel[cell], u, 1.0);
        j = if step > 0.0 {
            disc.up(j)
        } else if step < 0.0 {
            disc.down(j)
        } else {
            j
        };
        nodes.push(j);
    }
    running
}

/// Simulates `config.n_paths` chain trajectories under `policy` and
/// estimates each functional on the interpolated paths.
pub fn simulate(
    spec: &ProblemSpec,
    disc: &Discretization,
    policy: &FeedbackPolicy,
    functionals: &[PathFn],
    config: &SimConfig,
) -> Result<SimReport> {
    policy.check_shape(disc)?;
    if config.n_paths == 0 {
        return invalid("n_paths must be at least 1");
    }
    let table = tabulate(spec, disc, policy)?;
    let times: Vec<f64> = (0..=disc.steps).map(|k| disc.time(k)).collect();
    let n_out = functionals.len() + 1;
    let n_blocks = config.n_paths.div_ceil(BLOCK);

    // Per block: count, means and centered second moments of
    // [cost, functionals...], and the stored paths when requested.
    let blocks: Vec<(usize, Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK;
            let end = (start + BLOCK).min(config.n_paths);
            let mut samples = vec![Vec::with_capacity(end - start); n_out];
            let mut stored = Vec::new();
            let mut nodes = Vec::with_capacity(disc.steps + 1);
            let mut states = vec![0.0; disc.steps + 1];
            for i in start..end {
                let running = draw_path(disc, &table, config.seed, i as u64, &mut nodes);
                for (s, &j) in states.iter_mut().zip(&nodes) {
                    *s = disc.x(j);
                }
                let path = SampledPath { times: &times, states: &states };
                samples[0].push(running + (spec.terminal_cost)(path.terminal()));
                for (f, out) in functionals.iter().zip(&mut samples[1..]) {
                    out.push(f(&path));
                }
                if config.store_paths {
                    stored.push(states.clone());
                }
            }
            let n = (end - start) as f64;
            let means: Vec<f64> = samples.iter().map(|v| pairwise_sum(v) / n).collect();
            let m2 = samples
                .iter()
                .zip(&means)
                .map(|(v, m)| pairwise_sum(&v.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>()))
                .collect();
            (end - start, means, m2, stored)
        })
        .collect();

    // Chan et al. pairwise update, merged in block order.
    let mut count = 0usize;
    let mut mean = vec![0.0; n_out];
    let mut m2 = vec![0.0; n_out];
    let mut paths = config.store_paths.then(Vec::new);
    for (nb, mb, qb, stored) in blocks {
        let total = (count + nb) as f64;
        if count == 0 {
            mean.copy_from_slice(&mb);
            m2.copy_from_slice(&qb);
        } else {
            for c in 0..n_out {
                let delta = mb[c] - mean[c];
                mean[c] += delta * nb as f64 / total;
                m2[c] += qb[c] + delta * delta * count as f64 * nb as f64 / total;
            }
        }
        count += nb;
        if let Some(p) = paths.as_mut() {
            p.extend(stored);
        }
    }
    let mut estimates: Vec<SimEstimate> = (0..n_out)
        .map(|c| SimEstimate::from_moments(count, mean[c], m2[c]))
        .collect();
    let cost = estimates.remove(0);
    Ok(SimReport { estimates, cost, times, paths })
}

/// Empirical frequencies of the up, down and stay moves from node `j` at
/// time index `k`, using the same streams as [`simulate`].
pub fn one_step_frequencies(
    spec: &ProblemSpec,
    disc: &Discretization,
    policy: &FeedbackPolicy,
    k: usize,
    j: usize,
    config: &SimConfig,
) -> Result<[f64; 3]> {
    policy.check_shape(disc)?;
    if k >= disc.steps || j >= disc.n_nodes {
        return invalid("node outside the discretization");
    }
    let a = disc.controls.values()[policy.action[k][j]];
    let kernel = build_kernel(spec, disc, disc.time(k), disc.x(j), a)?;
    let counts = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i);
            let u: f64 = rng.gen();
            let step = sample_increment(&kernel, u, 1.0);
            if step > 0.0 {
                [1u64, 0, 0]
            } else if step < 0.0 {
                [0, 1, 0]
            } else {
                [0, 0, 1]
            }
        })
        .reduce(|| [0, 0, 0], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
    let n = config.n_paths as f64;
    Ok([counts[0] as f64 / n, counts[1] as f64 / n, counts[2] as f64 / n])
}
