use steer_core::steer::{ClipWindow, EndTimeSampler};
use steer_core::{RngStream, SamplerKind};

fn draws(s: &EndTimeSampler, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0);
    (0..n).map(|_| s.sample(&mut rng).unwrap()).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn fixed_rule_always_returns_t1() {
    let s = EndTimeSampler::fixed(2.0, 2.125);
    assert!(draws(&s, 100, 1).iter().all(|&t| t == 2.125));
}

#[test]
fn uniform_rule_covers_the_window_evenly() {
    let s = EndTimeSampler::uniform(0.0, 0.125, 0.124);
    let xs = draws(&s, 100_000, 2);
    assert!(xs.iter().all(|&t| (0.001..=0.249).contains(&t)));
    // U(t1 - b, t1 + b) has mean t1 and std b/sqrt(3)
    let m = mean(&xs);
    let sd = (xs.iter().map(|t| (t - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    assert!((m - 0.125).abs() < 3.0 * 0.124 / 3f64.sqrt() / (xs.len() as f64).sqrt());
    assert!((sd - 0.124 / 3f64.sqrt()).abs() < 1e-3);
}

#[test]
fn constrained_shift_never_passes_t1() {
    let s = EndTimeSampler::uniform(0.0, 1.0, 0.375).with_constrained_shift(true);
    let xs = draws(&s, 20_000, 3);
    assert!(xs.iter().all(|&t| (0.25 - 1e-12..=1.0 + 1e-12).contains(&t)));
    assert!((mean(&xs) - 0.625).abs() < 0.01);
}

#[test]
fn gaussian_rule_respects_its_clip() {
    let kind = SamplerKind::Gaussian {
        std: 0.05,
        clip: Some(ClipWindow {
            below: 0.1,
            above: 0.1,
        }),
    };
    let s = EndTimeSampler::new(kind, 0.0, 1.0);
    let xs = draws(&s, 50_000, 4);
    assert!(xs.iter().all(|&t| (0.9..=1.1).contains(&t)));
    assert!((mean(&xs) - 1.0).abs() < 2e-3);
}

#[test]
fn bound_is_checked_with_the_documented_message() {
    let msg = EndTimeSampler::uniform(0.0, 0.125, 0.2).validate().unwrap_err().to_string();
    assert!(msg.contains("b = 0.2 violates the end-time bound 0 <= b < t1 - t0 = 0.125"), "{msg}");
    assert!(EndTimeSampler::uniform(0.0, 0.125, 0.124).validate().is_ok());
    assert!(EndTimeSampler::uniform(0.0, 0.125, -0.01).validate().is_err());
}

#[test]
fn streams_are_reproducible_and_independent() {
    let s = EndTimeSampler::uniform(0.0, 1.0, 0.5);
    assert_eq!(draws(&s, 50, 9), draws(&s, 50, 9));
    assert_ne!(draws(&s, 50, 9), draws(&s, 50, 10));
    let root = RngStream::new(9, 0);
    let mut a = root.split(0);
    let mut b = root.split(1);
    let xa: Vec<f64> = (0..20).map(|_| a.uniform(0.0, 1.0)).collect();
    let xb: Vec<f64> = (0..20).map(|_| b.uniform(0.0, 1.0)).collect();
    assert_ne!(xa, xb);
}

#[test]
fn wide_gaussian_is_capped_above_t0() {
    let kind = SamplerKind::gaussian_clipped(0.124, 3.0, 0.125, 1e-3, false);
    let s = EndTimeSampler::new(kind, 2.0, 2.125);
    s.validate().unwrap();
    let xs = draws(&s, 20_000, 6);
    assert!(xs.iter().all(|&t| (2.001 - 1e-12..=2.125 + 0.372 + 1e-12).contains(&t)));
    assert!(xs.iter().filter(|&&t| t < 2.0015).count() > 1000);

    let uncapped = SamplerKind::Gaussian {
        std: 0.124,
        clip: Some(ClipWindow {
            below: 0.372,
            above: 0.372,
        }),
    };
    let msg = EndTimeSampler::new(uncapped, 2.0, 2.125).validate().unwrap_err().to_string();
    assert!(msg.contains("not above t0"), "{msg}");
}
