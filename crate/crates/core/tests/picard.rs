use steer_core::picard::{
    delta_metric, empirical_contraction, exp_taylor, picard_apply, picard_sequence, triangular_diff_stats,
    ContractionConfig, PicardIterate, DEFAULT_RESOLUTION,
};
use steer_core::{Array, Result, RngStream};

fn decay(_t: f64, z: &Array) -> Result<Array> {
    Ok(z.scale(-1.0))
}

// Degree-k Taylor polynomial of e^{-t}, summed directly.
fn taylor(t: f64, k: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..=k {
        term *= -t / j as f64;
        sum += term;
    }
    sum
}

#[test]
fn library_taylor_matches_direct_sum() {
    for t in [-0.4, -0.1, 0.0, 0.25, 0.4] {
        for k in 0..10 {
            assert!((exp_taylor(t, k) - taylor(t, k)).abs() < 1e-15);
        }
    }
}

#[test]
fn unshifted_iteration_is_the_taylor_sequence() {
    let a = 0.4;
    let seq = picard_sequence(
        &decay,
        &Array::vector(vec![1.0]),
        0.0,
        a,
        0.0,
        8,
        DEFAULT_RESOLUTION,
        &mut RngStream::new(1, 0),
    )
    .unwrap();
    let h = a * DEFAULT_RESOLUTION;
    for (k, it) in seq.iter().enumerate() {
        let err = it
            .grid
            .iter()
            .zip(&it.values)
            .map(|(t, v)| (v - taylor(*t, k)).abs())
            .fold(0.0, f64::max);
        // composite trapezoid: a·h²/12·max|g''| per application, |g''| <= e^a
        let quad = k as f64 * a * h * h / 12.0 * a.exp();
        assert!(err <= 10.0 * quad + 1e-15, "k = {k}: {err} vs {quad}");
    }
}

#[test]
fn unshifted_operator_contracts_by_a() {
    let grid = PicardIterate::grid(0.0, 0.4, 1e-2).unwrap();
    let p1 = PicardIterate::from_fn(grid.clone(), 1, 0, |t| vec![1.0 + t]).unwrap();
    let p2 = PicardIterate::from_fn(grid, 1, 0, |t| vec![1.0 - t * t]).unwrap();
    let z0 = Array::vector(vec![1.0]);
    let mut rng = RngStream::new(2, 0);
    let t1 = picard_apply(&decay, &z0, 0.0, &p1, 0.0, &mut rng).unwrap();
    let t2 = picard_apply(&decay, &z0, 0.0, &p2, 0.0, &mut rng).unwrap();
    let before = delta_metric(&p1, &p2).unwrap();
    let after = delta_metric(&t1, &t2).unwrap();
    assert!(after <= 0.4 * before + 1e-9, "{after} vs {before}");
}

#[test]
fn triangular_difference_has_zero_mean_and_known_spread() {
    let b = 1.0;
    let n = 200_000;
    let s = triangular_diff_stats(b, n, 20, &mut RngStream::new(5, 0)).unwrap();
    assert!(s.mean.abs() <= 3.0 * s.std / (n as f64).sqrt(), "{}", s.mean);
    // Var(U1 - U2) = 2·b²/12
    assert!((s.std - (b * b / 6.0).sqrt()).abs() < 5e-3, "{}", s.std);
    for bin in &s.histogram {
        assert!((bin.density - bin.expected).abs() < 0.05, "{bin:?}");
    }
}

#[test]
fn contraction_experiment_is_reproducible_and_bounded_at_zero_state() {
    let cfg = ContractionConfig {
        n_trials: 200,
        ..ContractionConfig::default()
    };
    let z0 = Array::vector(vec![0.0]);
    let a = empirical_contraction(&decay, &z0, &cfg, &RngStream::new(9, 0)).unwrap();
    let b = empirical_contraction(&decay, &z0, &cfg, &RngStream::new(9, 0)).unwrap();
    assert_eq!(a.mean_ratio, b.mean_ratio);
    assert!(a.hypotheses_hold());
    assert!(a.mean_ratio < 0.5, "{}", a.mean_ratio);
}

#[test]
fn shift_beyond_half_width_is_rejected() {
    let cfg = ContractionConfig {
        b: 0.3,
        ..ContractionConfig::default()
    };
    assert!(empirical_contraction(&decay, &Array::vector(vec![1.0]), &cfg, &RngStream::new(0, 0)).is_err());
}
