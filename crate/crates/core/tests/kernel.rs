use ccs_core::chain::{kernel_probabilities, sample_increment, KernelScheme, KernelTriple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random `(μ, σ, h, Δx)` whose kernel is a probability vector.
fn draw_within_cfl(rng: &mut impl Rng, scheme: KernelScheme) -> (f64, f64, f64, f64, KernelTriple) {
    loop {
        // (t, x, a) enter only through μ and σ.
        let a = rng.gen_range(-6.0..6.0);
        let x = rng.gen_range(-12.0..12.0);
        let t: f64 = rng.gen_range(0.0..1.0);
        let mu = a + 0.1 * x * t.cos();
        let sigma = rng.gen_range(0.1..2.0) * (1.0 + 0.1 * x.sin());
        let h = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let dx = (h / rng.gen_range(0.05..0.5)).sqrt();
        let k = kernel_probabilities(mu, sigma, h, dx, scheme);
        if k.p_up >= 0.0 && k.p_down >= 0.0 && k.p_stay() >= 0.0 {
            return (mu, sigma, h, dx, k);
        }
    }
}

#[test]
fn moment_matched_kernel_hits_both_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let (mu, sigma, h, dx, k) = draw_within_cfl(&mut rng, KernelScheme::MomentMatched);
        // Errors are measured against the size of the summands, E[H²]/Δx and
        // E[H²], since the mean is a difference of two probabilities.
        let scale = k.second_moment(dx);
        assert!((k.mean(dx) - mu * h).abs() <= 1e-12 * scale / dx, "mean at mu={mu}, h={h}");
        let want = sigma * sigma * h + (mu * h).powi(2);
        assert!((k.second_moment(dx) - want).abs() <= 1e-12 * want, "second moment at mu={mu}, h={h}");
        assert!((k.variance(dx) - sigma * sigma * h).abs() <= 1e-12 * want);
    }
}

#[test]
fn upwind_matches_the_mean_with_extra_diffusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let (mu, sigma, h, dx, k) = draw_within_cfl(&mut rng, KernelScheme::Upwind);
        let scale = k.second_moment(dx);
        assert!((k.mean(dx) - mu * h).abs() <= 1e-12 * scale / dx);
        let want = sigma * sigma * h + mu.abs() * h * dx;
        assert!((k.second_moment(dx) - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn third_moment_is_order_h_three_halves() {
    // Along Δx = √(h/0.1) the ratio E|H|³ / h^{3/2} stays bounded.
    let worst = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
        .iter()
        .map(|&h| {
            let dx = (h / 0.1f64).sqrt();
            let k = kernel_probabilities(6.0, 1.0, h, dx, KernelScheme::Upwind);
            k.third_abs_moment(dx) / h.powf(1.5)
        })
        .fold(0.0f64, f64::max);
    assert!(worst <= 1.0 / 0.1f64.sqrt() + 6.0 + 1e-9, "{worst}");
}

#[test]
fn sampled_increments_follow_the_triple() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 1_000_000;
    for scheme in [KernelScheme::Upwind, KernelScheme::MomentMatched] {
        let (_, _, _, dx, k) = draw_within_cfl(&mut rng, scheme);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let step = sample_increment(&k, rng.gen(), dx);
            counts[if step > 0.0 { 0 } else if step < 0.0 { 1 } else { 2 }] += 1;
        }
        for (c, p) in counts.iter().zip([k.p_up, k.p_down, k.p_stay()]) {
            let f = *c as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() <= 3.0 * sd + 1e-12, "{f} vs {p}");
        }
    }
}
