//! Stochastic end-time rules.
//!
//! During training the integration end point is replaced by a random `T`
//! drawn around the nominal end time `t1`. Evaluation always integrates to
//! the nominal end time; these samplers are only consulted by training loops.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default number of standard deviations kept on each side by Gaussian clipping.
pub const DEFAULT_CLIP_SIGMAS: f64 = 3.0;

/// Default gap margin of the adaptive irregular-grid rule.
pub const DEFAULT_ADAPTIVE_EPS: f64 = 1e-3;

/// Seeded, counter-based random stream. Identical `(seed, stream)` pairs
/// yield identical draws on every platform.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream; `split(k)` is a pure function of `(seed, stream, k)`.
    pub fn split(&self, k: u64) -> RngStream {
        RngStream::new(self.seed, mix(self.stream ^ mix(k.wrapping_add(1))))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.rng.random_range(lo..hi)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Clipping window for Gaussian end times, as offsets relative to `t1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipWindow {
    pub below: f64,
    pub above: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplerKind {
    Fixed,
    /// `T ~ Uniform(t1 − b, t1 + b)`
    Uniform { b: f64 },
    /// `T ~ N(t1, std²)`, then clipped to `[t1 − below, t1 + above]` if set.
    Gaussian { std: f64, clip: Option<ClipWindow> },
    /// Per-interval uniform rule with `b = (t1 − t0) − eps`.
    AdaptiveGrid { eps: f64 },
}

impl SamplerKind {
    /// Gaussian rule clipped to `sigmas·std` either side of the centre, with
    /// the lower offset capped so draws stay at least `eps` above `t0` for an
    /// interval of length `span`.
    pub fn gaussian_clipped(std: f64, sigmas: f64, span: f64, eps: f64, constrained_shift: bool) -> Self {
        if !(sigmas > 0.0) {
            return SamplerKind::Gaussian { std, clip: None };
        }
        let above = sigmas * std;
        let room = if constrained_shift { span - above } else { span };
        SamplerKind::Gaussian {
            std,
            clip: Some(ClipWindow {
                below: (sigmas * std).min((room - eps).max(0.0)),
                above,
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Fixed => "fixed",
            SamplerKind::Uniform { .. } => "uniform",
            SamplerKind::Gaussian { .. } => "gaussian",
            SamplerKind::AdaptiveGrid { .. } => "adaptive_grid",
        }
    }

    /// Gaussian rule with the default symmetric `±3σ` clip.
    pub fn gaussian(std: f64) -> Self {
        SamplerKind::Gaussian {
            std,
            clip: Some(ClipWindow {
                below: DEFAULT_CLIP_SIGMAS * std,
                above: DEFAULT_CLIP_SIGMAS * std,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndTimeSampler {
    pub kind: SamplerKind,
    pub t0: f64,
    pub t1: f64,
    /// Shift the centre down so that sampled end times never exceed `t1`.
    pub constrained_shift: bool,
}

impl EndTimeSampler {
    pub fn new(kind: SamplerKind, t0: f64, t1: f64) -> Self {
        Self {
            kind,
            t0,
            t1,
            constrained_shift: false,
        }
    }

    pub fn fixed(t0: f64, t1: f64) -> Self {
        Self::new(SamplerKind::Fixed, t0, t1)
    }

    pub fn uniform(t0: f64, t1: f64, b: f64) -> Self {
        Self::new(SamplerKind::Uniform { b }, t0, t1)
    }

    pub fn with_constrained_shift(mut self, on: bool) -> Self {
        self.constrained_shift = on;
        self
    }

    /// The same rule applied to another interval.
    pub fn with_window(mut self, t0: f64, t1: f64) -> Self {
        self.t0 = t0;
        self.t1 = t1;
        self
    }

    /// Uniform half-width, if the rule has one.
    pub fn half_width(&self) -> Option<f64> {
        match self.kind {
            SamplerKind::Uniform { b } => Some(b),
            SamplerKind::AdaptiveGrid { eps } => Some((self.t1 - self.t0) - eps),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let span = self.t1 - self.t0;
        if !(span > 0.0) {
            return Err(Error::Config(format!(
                "end time t1 = {} must exceed start time t0 = {}",
                self.t1, self.t0
            )));
        }
        match self.kind {
            SamplerKind::Fixed => Ok(()),
            SamplerKind::Uniform { b } => {
                if !(b >= 0.0 && b < span) {
                    return Err(Error::Config(format!(
                        "b = {b} violates the end-time bound 0 <= b < t1 - t0 = {span}"
                    )));
                }
                Ok(())
            }
            SamplerKind::Gaussian { std, clip } => {
                if !(std >= 0.0) {
                    return Err(Error::Config(format!("std = {std} must be non-negative")));
                }
                if let Some(c) = clip {
                    if !(c.below >= 0.0 && c.above >= 0.0) {
                        return Err(Error::Config("clip offsets must be non-negative".into()));
                    }
                    let lowest = self.center() - c.below;
                    if lowest <= self.t0 {
                        return Err(Error::Config(format!(
                            "Gaussian clip reaches t = {lowest}, not above t0 = {}",
                            self.t0
                        )));
                    }
                }
                Ok(())
            }
            SamplerKind::AdaptiveGrid { eps } => {
                if !(eps > 0.0) {
                    return Err(Error::Config(format!("eps = {eps} must be positive")));
                }
                if eps > span {
                    return Err(Error::Config(format!(
                        "eps = {eps} exceeds the interval length {span}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// True when a uniform half-width sits within `1e-6` of its upper bound.
    pub fn near_bound(&self) -> bool {
        match self.kind {
            SamplerKind::Uniform { b } => (self.t1 - self.t0) - b < 1e-6,
            _ => false,
        }
    }

    /// Centre of the distribution after the optional constrained shift.
    pub fn center(&self) -> f64 {
        if !self.constrained_shift {
            return self.t1;
        }
        match self.kind {
            SamplerKind::Uniform { b } => self.t1 - b,
            SamplerKind::Gaussian { clip: Some(c), .. } => self.t1 - c.above,
            SamplerKind::AdaptiveGrid { eps } => self.t1 - ((self.t1 - self.t0) - eps),
            _ => self.t1,
        }
    }

    /// Draws one end time. Never re-draws: a sample at or below `t0` is an error.
    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        self.validate()?;
        let c = self.center();
        let t_end = match self.kind {
            SamplerKind::Fixed => self.t1,
            SamplerKind::Uniform { b } => uniform_around(c, b, rng),
            SamplerKind::AdaptiveGrid { eps } => {
                uniform_around(c, (self.t1 - self.t0) - eps, rng)
            }
            SamplerKind::Gaussian { std, clip } => {
                if std == 0.0 {
                    c
                } else {
                    let t = c + std * rng.standard_normal();
                    match clip {
                        Some(w) => t.clamp(c - w.below, c + w.above),
                        None => t,
                    }
                }
            }
        };
        if t_end <= self.t0 {
            return Err(Error::DegenerateSample {
                t_end,
                t0: self.t0,
            });
        }
        Ok(t_end)
    }
}

fn uniform_around(c: f64, b: f64, rng: &mut RngStream) -> f64 {
    if b == 0.0 {
        c
    } else {
        rng.uniform(c - b, c + b)
    }
}

/// Training end time under the constrained shift: `t1 + b` lands on the original horizon.
pub fn constrained_t1(t1_original: f64, b: f64, t0: f64) -> Result<f64> {
    if !(b >= 0.0 && b < t1_original - t0) {
        return Err(Error::Config(format!(
            "b = {b} violates the end-time bound 0 <= b < t1 - t0 = {}",
            t1_original - t0
        )));
    }
    Ok(t1_original - b)
}

/// End times for an irregular grid: interval `(tᵢ, tᵢ₊₁)` uses the uniform
/// rule with `bᵢ = (tᵢ₊₁ − tᵢ) − eps`.
pub fn adaptive_grid_end_times(times: &[f64], eps: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if times.len() < 2 {
        return Err(Error::Config("need at least two grid times".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps = {eps} must be positive")));
    }
    for (i, w) in times.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if !(gap > 0.0) {
            return Err(Error::Config(format!(
                "grid times must be strictly ascending (interval {i}: {} -> {})",
                w[0], w[1]
            )));
        }
        if eps > gap {
            return Err(Error::Config(format!(
                "eps = {eps} exceeds the gap {gap} of interval {i} ({} -> {})",
                w[0], w[1]
            )));
        }
    }
    times
        .windows(2)
        .map(|w| {
            EndTimeSampler::new(SamplerKind::AdaptiveGrid { eps }, w[0], w[1]).sample(rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_with_zero_width_is_exact() {
        let s = EndTimeSampler::uniform(0.0, 1.0, 0.0);
        let mut rng = RngStream::new(1, 0);
        for _ in 0..10 {
            assert_eq!(s.sample(&mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn gaussian_zero_std_is_exact() {
        let s = EndTimeSampler::new(SamplerKind::gaussian(0.0), 0.0, 1.0);
        let mut rng = RngStream::new(1, 0);
        assert_eq!(s.sample(&mut rng).unwrap(), 1.0);
    }

    #[test]
    fn fixed_ignores_randomness() {
        let s = EndTimeSampler::fixed(2.0, 2.5);
        let mut rng = RngStream::new(9, 3);
        assert_eq!(s.sample(&mut rng).unwrap(), 2.5);
    }

    #[test]
    fn uniform_moments_and_support() {
        let (t1, b, n) = (1.0, 0.5, 100_000);
        let s = EndTimeSampler::uniform(0.0, t1, b);
        let mut rng = RngStream::new(42, 0);
        let draws: Vec<f64> = (0..n).map(|_| s.sample(&mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let bound = 3.0 * (b / 3f64.sqrt()) / (n as f64).sqrt();
        assert!((mean - t1).abs() <= bound, "mean {mean}");
        assert!(draws.iter().all(|&t| (0.5..=1.5).contains(&t)));
    }

    #[test]
    fn uniform_passes_kolmogorov_smirnov() {
        let (t1, b, n) = (1.0, 0.3, 100_000);
        let s = EndTimeSampler::uniform(0.0, t1, b);
        let mut rng = RngStream::new(7, 5);
        let mut draws: Vec<f64> = (0..n).map(|_| s.sample(&mut rng).unwrap()).collect();
        draws.sort_by(f64::total_cmp);
        let nf = n as f64;
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = (x - (t1 - b)) / (2.0 * b);
                (cdf - i as f64 / nf).abs().max(((i + 1) as f64 / nf - cdf).abs())
            })
            .fold(0.0, f64::max);
        // asymptotic critical value at alpha = 0.001
        let critical = (-(0.001f64 / 2.0).ln() / 2.0).sqrt() / nf.sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn absolute_perturbation_difference_has_zero_mean() {
        let (b, n) = (0.2, 200_000);
        let mut rng = RngStream::new(3, 1);
        let ys: Vec<f64> = (0..n)
            .map(|_| rng.uniform(-b, b).abs() - rng.uniform(-b, b).abs())
            .collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 3.0 * var.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn bound_violation_is_config_error() {
        let s = EndTimeSampler::uniform(0.0, 0.125, 0.2);
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let s = EndTimeSampler::uniform(0.0, 0.125, 0.125);
        assert!(s.validate().is_err());
        assert!(EndTimeSampler::uniform(0.0, 1.0, 1.0 - 1e-7).near_bound());
    }

    #[test]
    fn gaussian_degenerate_sample_errors() {
        let s = EndTimeSampler::new(
            SamplerKind::Gaussian {
                std: 5.0,
                clip: None,
            },
            0.0,
            0.1,
        );
        let mut rng = RngStream::new(0, 0);
        let outcomes: Vec<_> = (0..50).map(|_| s.sample(&mut rng)).collect();
        assert!(outcomes
            .iter()
            .any(|r| matches!(r, Err(Error::DegenerateSample { .. }))));
    }

    #[test]
    fn gaussian_default_clip_is_symmetric() {
        let s = EndTimeSampler::new(SamplerKind::gaussian(0.1), 0.0, 1.0);
        let mut rng = RngStream::new(4, 0);
        for _ in 0..10_000 {
            let t = s.sample(&mut rng).unwrap();
            assert!((0.7..=1.3).contains(&t));
        }
    }

    #[test]
    fn constrained_shift_examples() {
        assert_eq!(constrained_t1(1.0, 0.5, 0.0).unwrap(), 0.5);
        assert_eq!(constrained_t1(1.0, 0.125, 0.0).unwrap(), 0.875);
        assert_eq!(constrained_t1(1.0, 0.0, 0.0).unwrap(), 1.0);
        assert!(matches!(constrained_t1(1.0, 1.0, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn constrained_shift_keeps_samples_below_horizon() {
        let s = EndTimeSampler::uniform(0.0, 1.0, 0.375).with_constrained_shift(true);
        let mut rng = RngStream::new(5, 0);
        for _ in 0..10_000 {
            let t = s.sample(&mut rng).unwrap();
            assert!((0.25..=1.0).contains(&t));
        }
    }

    #[test]
    fn adaptive_grid_interval_arithmetic() {
        let mut rng = RngStream::new(8, 2);
        for _ in 0..2_000 {
            let ts = adaptive_grid_end_times(&[0.0, 1.0, 3.0], 0.1, &mut rng).unwrap();
            assert!((0.1..=1.9).contains(&ts[0]));
            assert!((1.1..=4.9).contains(&ts[1]));
        }
    }

    #[test]
    fn adaptive_grid_degenerate_and_single_interval() {
        let mut rng = RngStream::new(8, 2);
        let ts = adaptive_grid_end_times(&[0.0, 0.5, 2.0], 0.5, &mut rng).unwrap();
        assert_eq!(ts[0], 0.5);
        // a single interval with eps = 1 - b is the uniform rule
        let b = 0.3;
        let mut r1 = RngStream::new(2, 0);
        let mut r2 = RngStream::new(2, 0);
        let a = adaptive_grid_end_times(&[0.0, 1.0], 1.0 - b, &mut r1).unwrap();
        let u = EndTimeSampler::uniform(0.0, 1.0, b).sample(&mut r2).unwrap();
        assert!((a[0] - u).abs() < 1e-12);
    }

    #[test]
    fn adaptive_grid_rejects_large_eps() {
        let mut rng = RngStream::new(0, 0);
        let err = adaptive_grid_end_times(&[0.0, 1.0, 1.05], 0.1, &mut rng).unwrap_err();
        assert!(err.to_string().contains("interval 1"));
    }

    #[test]
    fn streams_are_reproducible_and_split_independent() {
        let s = EndTimeSampler::uniform(0.0, 1.0, 0.4);
        let mut a = RngStream::new(11, 3);
        let mut b = RngStream::new(11, 3);
        let xs: Vec<f64> = (0..100).map(|_| s.sample(&mut a).unwrap()).collect();
        let ys: Vec<f64> = (0..100).map(|_| s.sample(&mut b).unwrap()).collect();
        assert_eq!(xs, ys);
        let mut c = RngStream::new(11, 3).split(0);
        let zs: Vec<f64> = (0..100).map(|_| s.sample(&mut c).unwrap()).collect();
        assert_ne!(xs, zs);
    }
}
