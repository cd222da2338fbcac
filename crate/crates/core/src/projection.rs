//! Euclidean projections used by the multiplier and qualification ascents.

/// Soft threshold `τ ≥ 0` with `Σ max(uᵢ − τ, 0) = radius` for nonnegative
/// `u` whose sum exceeds `radius` (sorting algorithm).
fn l1_threshold(magnitudes: &[f64], radius: f64) -> f64 {
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - radius) / (i + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    tau.max(0.0)
}

/// Projection onto `{λ : λᵢ ≥ 0 for i ≥ n_free, ‖λ‖₁ ≤ radius}`.
///
/// The sign-constrained coordinates are clipped first; the ℓ¹ shrinkage then
/// acts on magnitudes and keeps signs, so clipped coordinates stay at zero.
pub fn project_l1_orthant(raw: &[f64], n_free: usize, radius: f64) -> Vec<f64> {
    let clipped: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| if i >= n_free { v.max(0.0) } else { v })
        .collect();
    let norm: f64 = clipped.iter().map(|v| v.abs()).sum();
    if norm <= radius {
        return clipped;
    }
    let magnitudes: Vec<f64> = clipped.iter().map(|v| v.abs()).collect();
    let tau = l1_threshold(&magnitudes, radius);
    clipped
        .iter()
        .map(|&v| v.signum() * (v.abs() - tau).max(0.0))
        .map(|v| if v == 0.0 { 0.0 } else { v })
        .collect()
}

/// Projection onto the probability simplex `{θ ≥ 0, Σθ = 1}`.
pub fn project_simplex(raw: &[f64]) -> Vec<f64> {
    let mut sorted = raw.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    let mut out: Vec<f64> = raw.iter().map(|&v| (v - tau).max(0.0)).collect();
    // Renormalize the rounding residue onto the largest coordinate.
    let sum: f64 = out.iter().sum();
    if let Some(i) = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b])) {
        out[i] += 1.0 - sum;
    }
    out
}
