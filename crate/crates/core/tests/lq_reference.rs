use ccs_core::lq::{analytic_maximizer, example1_dual, example2_dual, example_terminal, riccati_backward};

fn composed(example: u32, lambda: f64) -> f64 {
    riccati_backward(1.0, example_terminal(example, lambda).unwrap()).value_at(0.0)
}

/// Central difference with one Richardson step, `O(h⁴)`.
fn derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let h = 1e-3;
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Golden-section minimizer of a unimodal function on `[lo, hi]`.
fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-14 * (1.0 + lo.abs()) {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn closed_forms_match_riccati_composition() {
    for i in 0..1000 {
        let l1 = -20.0 + 40.0 * i as f64 / 999.0;
        let a = example1_dual(l1);
        assert!((a - composed(1, l1)).abs() <= 1e-12 * (1.0 + a.abs()), "example 1 at {l1}");
        // Example 2 lives on λ > −3/2.
        let l2 = -1.49 + 21.49 * i as f64 / 999.0;
        let b = example2_dual(l2);
        assert!((b - composed(2, l2)).abs() <= 1e-12 * (1.0 + b.abs()), "example 2 at {l2}");
    }
    assert_eq!(example2_dual(-1.5), f64::NEG_INFINITY);
    assert_eq!(composed(2, -1.5), f64::NEG_INFINITY);
}

#[test]
fn maximizers_match_golden_section() {
    // The oracle minimizes |d′| (monotone for a concave d) and then the value.
    for (example, f) in [(1u32, example1_dual as fn(f64) -> f64), (2, example2_dual)] {
        let (lambda, value) = analytic_maximizer(example).unwrap();
        let root = golden_min(0.0, 10.0, |l| derivative(f, l).abs());
        assert!((root - lambda).abs() <= 1e-10, "example {example}: {root} vs {lambda}");
        let peak = golden_min(0.0, 10.0, |l| -f(l));
        assert!((f(peak) - value).abs() <= 1e-10);
    }
    let (l1, d1) = analytic_maximizer(1).unwrap();
    assert_eq!(l1, 3.0);
    assert!((d1 - 2.049_306_144_334_055).abs() < 1e-12);
    let (l2, _) = analytic_maximizer(2).unwrap();
    assert!((l2 - 1.179_449_471_770_337).abs() < 1e-12);
}

#[test]
fn closed_forms_are_concave() {
    let h = 1e-2;
    for i in 0..2000 {
        let l = -1.4 + 20.0 * i as f64 / 1999.0;
        for f in [example1_dual as fn(f64) -> f64, example2_dual] {
            let second = f(l + h) - 2.0 * f(l) + f(l - h);
            assert!(second <= 1e-8, "second difference {second} at {l}");
        }
    }
}

#[test]
fn first_order_conditions_at_maximizers() {
    for (example, f) in [(1u32, example1_dual as fn(f64) -> f64), (2, example2_dual)] {
        let (lambda, _) = analytic_maximizer(example).unwrap();
        let h = 1e-5;
        let slope = (f(lambda + h) - f(lambda - h)) / (2.0 * h);
        assert!(slope.abs() <= 1e-8, "example {example}: slope {slope}");
    }
}
