//! Randomized Picard iteration on a grid.
//!
//! The operator is `T[φ](t) = z0 + ∫_{t0}^{t+δ} f(s, φ(s)) ds` with a single
//! `δ ∼ U(−b, b)` drawn per application. Integrals use the composite
//! trapezoid rule on the iterate's grid; beyond the grid the integrand is
//! extended linearly from the last segment, up to half the grid's half-width.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ode::Dynamics;
use crate::steer::RngStream;
use crate::tensor::Array;

/// Grid spacing as a fraction of the half-width `a`.
pub const DEFAULT_RESOLUTION: f64 = 1e-3;

/// Expected contraction bound: `E Δ(Tφ₁, Tφ₂) ≤ ½ Δ(φ₁, φ₂)`.
pub const CONTRACTION_BOUND: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct PicardIterate {
    pub grid: Vec<f64>,
    /// Row-major `[grid.len(), dim]`.
    pub values: Vec<f64>,
    pub dim: usize,
    pub k: usize,
}

impl PicardIterate {
    /// Uniform grid on `[t0 − a, t0 + a]` with spacing `resolution·a`; `t0` is a node.
    pub fn grid(t0: f64, a: f64, resolution: f64) -> Result<Vec<f64>> {
        if !(a > 0.0) || !(resolution > 0.0 && resolution <= 0.5) {
            return Err(Error::Config(format!(
                "picard grid needs a > 0 and resolution in (0, 0.5], got a = {a}, resolution = {resolution}"
            )));
        }
        let half = (1.0 / resolution).round() as i64;
        let h = a / half as f64;
        Ok((-half..=half).map(|i| t0 + i as f64 * h).collect())
    }

    pub fn from_fn<F>(grid: Vec<f64>, dim: usize, k: usize, phi: F) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for &t in &grid {
            let v = phi(t);
            if v.len() != dim {
                return Err(Error::Contract(format!(
                    "iterate function returned {} components, expected {dim}",
                    v.len()
                )));
            }
            values.extend(v);
        }
        let it = Self {
            grid,
            values,
            dim,
            k,
        };
        it.check_finite()?;
        Ok(it)
    }

    /// `φ₀(t) = z0` on the given grid.
    pub fn constant(grid: Vec<f64>, z0: &Array) -> Result<Self> {
        let z = z0.data().to_vec();
        Self::from_fn(grid, z.len(), 0, |_| z.clone())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Half-width of the grid.
    pub fn half_width(&self) -> f64 {
        (self.grid[self.grid.len() - 1] - self.grid[0]) / 2.0
    }

    fn spacing(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    fn check_finite(&self) -> Result<()> {
        if self.grid.len() < 2 {
            return Err(Error::Contract("picard grid needs at least two nodes".into()));
        }
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { layer: 0 })
        }
    }
}

/// `sup_t max_i |φa_i(t) − φb_i(t)|` over the shared grid.
pub fn delta_metric(a: &PicardIterate, b: &PicardIterate) -> Result<f64> {
    if a.grid != b.grid || a.dim != b.dim {
        return Err(Error::Contract("delta_metric needs iterates on the same grid".into()));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

/// Integrand values `f(t_i, φ(t_i))` and their cumulative trapezoid integral from `t0`.
struct Antiderivative {
    grid: Vec<f64>,
    h: f64,
    dim: usize,
    g: Vec<f64>,
    big_f: Vec<f64>,
    reach: (f64, f64),
}

impl Antiderivative {
    fn new(f: &dyn Dynamics, t0: f64, phi: &PicardIterate) -> Result<Self> {
        let n = phi.len();
        let dim = phi.dim;
        let h = phi.spacing();
        let i0 = ((t0 - phi.grid[0]) / h).round();
        if i0 < 0.0 || i0 as usize >= n || (phi.grid[i0 as usize] - t0).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::Contract(format!("t0 = {t0} is not a node of the iterate grid")));
        }
        let i0 = i0 as usize;
        let mut g = Vec::with_capacity(n * dim);
        for i in 0..n {
            let v = f.eval(phi.grid[i], &Array::vector(phi.at(i).to_vec()))?;
            if v.len() != dim {
                return Err(Error::Contract(format!(
                    "dynamics returned {} components for a {dim}-dimensional iterate",
                    v.len()
                )));
            }
            g.extend_from_slice(v.data());
        }
        let mut big_f = vec![0.0; n * dim];
        for i in i0 + 1..n {
            for d in 0..dim {
                big_f[i * dim + d] = big_f[(i - 1) * dim + d]
                    + 0.5 * (phi.grid[i] - phi.grid[i - 1]) * (g[(i - 1) * dim + d] + g[i * dim + d]);
            }
        }
        for i in (0..i0).rev() {
            for d in 0..dim {
                big_f[i * dim + d] = big_f[(i + 1) * dim + d]
                    - 0.5 * (phi.grid[i + 1] - phi.grid[i]) * (g[i * dim + d] + g[(i + 1) * dim + d]);
            }
        }
        let ext = phi.half_width() / 2.0;
        Ok(Self {
            grid: phi.grid.clone(),
            h,
            dim,
            g,
            big_f,
            reach: (phi.grid[0] - ext, phi.grid[n - 1] + ext),
        })
    }

    /// `∫_{t0}^{x} g`, exact for the piecewise-linear interpolant of `g`.
    fn integral_to(&self, x: f64, out: &mut [f64]) -> Result<()> {
        if x < self.reach.0 - 1e-12 || x > self.reach.1 + 1e-12 {
            return Err(Error::Range(format!(
                "upper limit {x} lies outside the grid extension [{}, {}]",
                self.reach.0, self.reach.1
            )));
        }
        let n = self.grid.len();
        let j = (((x - self.grid[0]) / self.h).floor().max(0.0) as usize).min(n - 2);
        let tj = self.grid[j];
        let w = (x - tj) / self.h;
        for (d, o) in out.iter_mut().enumerate() {
            let gj = self.g[j * self.dim + d];
            let gj1 = self.g[(j + 1) * self.dim + d];
            let gx = gj + (gj1 - gj) * w;
            *o = self.big_f[j * self.dim + d] + 0.5 * (x - tj) * (gj + gx);
        }
        Ok(())
    }
}

/// Applies the operator with the given shift `δ`.
pub fn picard_apply_with_shift(
    f: &dyn Dynamics,
    z0: &Array,
    t0: f64,
    phi: &PicardIterate,
    delta: f64,
) -> Result<PicardIterate> {
    if z0.len() != phi.dim {
        return Err(Error::Contract(format!(
            "z0 has {} components, iterate has {}",
            z0.len(),
            phi.dim
        )));
    }
    let anti = Antiderivative::new(f, t0, phi)?;
    let mut values = vec![0.0; phi.values.len()];
    for (i, &t) in phi.grid.iter().enumerate() {
        let row = &mut values[i * phi.dim..(i + 1) * phi.dim];
        anti.integral_to(t + delta, row)?;
        for (v, z) in row.iter_mut().zip(z0.data()) {
            *v += z;
        }
    }
    let out = PicardIterate {
        grid: phi.grid.clone(),
        values,
        dim: phi.dim,
        k: phi.k + 1,
    };
    out.check_finite()?;
    Ok(out)
}

/// One application with a fresh `δ ∼ U(−b, b)`; requires `b ≤ a/2`.
pub fn picard_apply(
    f: &dyn Dynamics,
    z0: &Array,
    t0: f64,
    phi: &PicardIterate,
    b: f64,
    rng: &mut RngStream,
) -> Result<PicardIterate> {
    let delta = draw_shift(b, phi.half_width(), rng)?;
    picard_apply_with_shift(f, z0, t0, phi, delta)
}

fn draw_shift(b: f64, a: f64, rng: &mut RngStream) -> Result<f64> {
    if !(b >= 0.0) || b > a / 2.0 + 1e-12 {
        return Err(Error::Config(format!(
            "shift half-width b = {b} must lie in [0, a/2] with a = {a}"
        )));
    }
    Ok(if b == 0.0 { 0.0 } else { rng.uniform(-b, b) })
}

/// `iterations` successive applications starting from `φ₀ = z0`.
pub fn picard_sequence(
    f: &dyn Dynamics,
    z0: &Array,
    t0: f64,
    a: f64,
    b: f64,
    iterations: usize,
    resolution: f64,
    rng: &mut RngStream,
) -> Result<Vec<PicardIterate>> {
    let mut seq = vec![PicardIterate::constant(PicardIterate::grid(t0, a, resolution)?, z0)?];
    for _ in 0..iterations {
        let next = picard_apply(f, z0, t0, seq.last().unwrap(), b, rng)?;
        seq.push(next);
    }
    Ok(seq)
}

/// `Δ(φ_{k+1}, φ_k)` along a sequence.
pub fn successive_deltas(seq: &[PicardIterate]) -> Result<Vec<f64>> {
    seq.windows(2).map(|w| delta_metric(&w[1], &w[0])).collect()
}

/// Lipschitz and bound constants of `f` on `[t0 − a, t0 + a] × {|x − z0|∞ ≤ c}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxConstants {
    pub lipschitz: f64,
    pub bound: f64,
}

impl BoxConstants {
    /// Largest `a` the existence argument allows: `min(c/M, 1/(2L))`.
    pub fn max_half_width(&self, c: f64) -> f64 {
        let by_bound = if self.bound > 0.0 { c / self.bound } else { f64::INFINITY };
        let by_lip = if self.lipschitz > 0.0 {
            0.5 / self.lipschitz
        } else {
            f64::INFINITY
        };
        by_bound.min(by_lip)
    }
}

/// Dense-sampling estimate of `L` and `M`. Scalar states use a regular
/// `t × x` lattice; vector states use seeded random points.
pub fn estimate_box_constants(
    f: &dyn Dynamics,
    z0: &Array,
    t0: f64,
    a: f64,
    c: f64,
    rng: &mut RngStream,
) -> Result<BoxConstants> {
    let dim = z0.len();
    let eps = 1e-6 * c.max(1e-3);
    let mut lipschitz: f64 = 0.0;
    let mut bound: f64 = 0.0;
    let mut probe = |t: f64, x: Vec<f64>, dir: Vec<f64>| -> Result<()> {
        let fx = f.eval(t, &Array::vector(x.clone()))?;
        bound = bound.max(fx.max_abs());
        let y: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + eps * di).collect();
        let fy = f.eval(t, &Array::vector(y))?;
        let num = fx.sub(&fy)?.max_abs();
        let den = eps * dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if den > 0.0 {
            lipschitz = lipschitz.max(num / den);
        }
        Ok(())
    };
    let nt = 41;
    for it in 0..nt {
        let t = t0 - a + 2.0 * a * it as f64 / (nt - 1) as f64;
        if dim == 1 {
            let nx = 201;
            for ix in 0..nx {
                let x = z0.data()[0] - c + 2.0 * c * ix as f64 / (nx - 1) as f64;
                probe(t, vec![x], vec![1.0])?;
            }
        } else {
            for _ in 0..200 {
                let x: Vec<f64> = z0.data().iter().map(|z| z + rng.uniform(-c, c)).collect();
                let dir: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
                probe(t, x, dir)?;
            }
        }
    }
    Ok(BoxConstants { lipschitz, bound })
}

/// A smooth random iterate `φ₀ + Σ_{j=1..3} c_j ((t − t0)/a)^j` with
/// `c_j ∼ U(−c/4, c/4)` per component, so `|φ − φ₀| ≤ 3c/4`.
pub fn random_iterate(
    grid: &[f64],
    z0: &Array,
    t0: f64,
    c: f64,
    rng: &mut RngStream,
) -> Result<PicardIterate> {
    let a = (grid[grid.len() - 1] - grid[0]) / 2.0;
    let coeffs: Vec<[f64; 3]> = z0
        .data()
        .iter()
        .map(|_| [0; 3].map(|_| rng.uniform(-c / 4.0, c / 4.0)))
        .collect();
    PicardIterate::from_fn(grid.to_vec(), z0.len(), 0, |t| {
        let s = (t - t0) / a;
        z0.data()
            .iter()
            .zip(&coeffs)
            .map(|(z, cj)| z + cj[0] * s + cj[1] * s * s + cj[2] * s * s * s)
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionTrial {
    pub delta_before: f64,
    pub delta_after: f64,
}

impl ContractionTrial {
    pub fn ratio(&self) -> f64 {
        self.delta_after / self.delta_before
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionReport {
    pub trials: Vec<ContractionTrial>,
    pub skipped: usize,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub constants: BoxConstants,
    pub bound: f64,
    /// Vector states are outside the scalar setting the contraction argument covers.
    pub beyond_hypotheses: bool,
}

impl ContractionReport {
    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn standard_error(&self) -> f64 {
        self.std_ratio / (self.trials.len() as f64).sqrt()
    }

    /// `mean ≤ bound + sigmas·SE`.
    pub fn within_bound(&self, sigmas: f64) -> bool {
        self.mean_ratio <= self.bound + sigmas * self.standard_error()
    }

    pub fn max_ratio(&self) -> f64 {
        self.trials.iter().map(ContractionTrial::ratio).fold(0.0, f64::max)
    }

    /// Whether `a < min(c/M, 1/(2L))` and `b ≤ a/2` hold for the estimated constants.
    pub fn hypotheses_hold(&self) -> bool {
        self.a < self.constants.max_half_width(self.c) && self.b <= self.a / 2.0 + 1e-12
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionConfig {
    pub t0: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub n_trials: usize,
    pub resolution: f64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            a: 0.4,
            b: 0.2,
            c: 1.0,
            n_trials: 1000,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

/// Monte-Carlo estimate of `E Δ(Tφ₁, Tφ₂) / Δ(φ₁, φ₂)` over random iterate
/// pairs with independent shifts for the two applications. Trial `i` draws
/// from `rng.split(i)`.
pub fn empirical_contraction(
    f: &dyn Dynamics,
    z0: &Array,
    cfg: &ContractionConfig,
    rng: &RngStream,
) -> Result<ContractionReport> {
    if cfg.n_trials < 100 {
        return Err(Error::Config(format!(
            "contraction estimate needs at least 100 trials, got {}",
            cfg.n_trials
        )));
    }
    let grid = PicardIterate::grid(cfg.t0, cfg.a, cfg.resolution)?;
    let constants = estimate_box_constants(f, z0, cfg.t0, cfg.a, cfg.c, &mut rng.split(u64::MAX))?;
    let mut trials = Vec::with_capacity(cfg.n_trials);
    let mut skipped = 0;
    for i in 0..cfg.n_trials {
        let mut r = rng.split(i as u64);
        let p1 = random_iterate(&grid, z0, cfg.t0, cfg.c, &mut r)?;
        let p2 = random_iterate(&grid, z0, cfg.t0, cfg.c, &mut r)?;
        let before = delta_metric(&p1, &p2)?;
        if before == 0.0 {
            skipped += 1;
            continue;
        }
        let t1 = picard_apply(f, z0, cfg.t0, &p1, cfg.b, &mut r)?;
        let t2 = picard_apply(f, z0, cfg.t0, &p2, cfg.b, &mut r)?;
        trials.push(ContractionTrial {
            delta_before: before,
            delta_after: delta_metric(&t1, &t2)?,
        });
    }
    if trials.is_empty() {
        return Err(Error::Contract("every contraction trial had identical iterates".into()));
    }
    let (mean_ratio, std_ratio) = mean_std(trials.iter().map(ContractionTrial::ratio));
    Ok(ContractionReport {
        trials,
        skipped,
        mean_ratio,
        std_ratio,
        a: cfg.a,
        b: cfg.b,
        c: cfg.c,
        constants,
        bound: CONTRACTION_BOUND,
        beyond_hypotheses: z0.len() > 1,
    })
}

/// Sample mean and (n − 1)-normalized standard deviation.
pub fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub center: f64,
    pub density: f64,
    /// `(b − |y|)/b²` at the bin center.
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangularStats {
    pub b: f64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub histogram: Vec<HistogramBin>,
}

impl TriangularStats {
    /// `|mean| ≤ sigmas·std/√n`.
    pub fn mean_consistent_with_zero(&self, sigmas: f64) -> bool {
        self.mean.abs() <= sigmas * self.std / (self.n as f64).sqrt()
    }
}

/// Draws `Y = |δ₂| − |δ₁|` with `|δᵢ| ∼ U(0, b)`.
pub fn triangular_diff_stats(
    b: f64,
    n: usize,
    bins: usize,
    rng: &mut RngStream,
) -> Result<TriangularStats> {
    if n < 10_000 || !(b >= 0.0) || bins == 0 {
        return Err(Error::Config(format!(
            "triangular statistics need n >= 10000, b >= 0 and bins > 0 (got n = {n}, b = {b}, bins = {bins})"
        )));
    }
    let mut counts = vec![0usize; bins];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let y = if b == 0.0 {
            0.0
        } else {
            let d1: f64 = rng.random_range(-b..b);
            let d2: f64 = rng.random_range(-b..b);
            d2.abs() - d1.abs()
        };
        sum += y;
        sum_sq += y * y;
        if b > 0.0 {
            let i = (((y + b) / (2.0 * b)) * bins as f64).floor() as usize;
            counts[i.min(bins - 1)] += 1;
        }
    }
    let nf = n as f64;
    let mean = sum / nf;
    let std = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0).sqrt();
    let width = 2.0 * b / bins as f64;
    let histogram = if b == 0.0 {
        Vec::new()
    } else {
        counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let center = -b + (i as f64 + 0.5) * width;
                HistogramBin {
                    center,
                    density: c as f64 / (nf * width),
                    expected: (b - center.abs()) / (b * b),
                }
            })
            .collect()
    };
    Ok(TriangularStats {
        b,
        n,
        mean,
        std,
        histogram,
    })
}

/// Distribution of `Δ(Tφ*, φ*)` for an iterate `φ*` reached after
/// `iterations` applications, over `samples` fresh shifts.
pub fn fixed_point_residuals(
    f: &dyn Dynamics,
    z0: &Array,
    cfg: &ContractionConfig,
    iterations: usize,
    samples: usize,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let seq = picard_sequence(
        f,
        z0,
        cfg.t0,
        cfg.a,
        cfg.b,
        iterations,
        cfg.resolution,
        &mut rng.split(0),
    )?;
    let star = seq.last().unwrap();
    let mut r = rng.split(1);
    (0..samples)
        .map(|_| {
            let next = picard_apply(f, z0, cfg.t0, star, cfg.b, &mut r)?;
            delta_metric(&next, star)
        })
        .collect()
}

/// `Σ_{j=0..k} (−t)^j / j!`, the classical Picard iterate of `dz/dt = −z`, `z(0) = 1`.
pub fn exp_taylor(t: f64, k: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..=k {
        term *= -t / j as f64;
        sum += term;
    }
    sum
}
