//! One-dimensional continuous normalizing flow with an exact trace.
//!
//! The flow carries the augmented state `[z, ℓ]` with `dz/dt = f(z, t)` and
//! `dℓ/dt = −∂f/∂z`. Integrating from `(x, 0)` at time `T` back to `t0` gives
//! `ℓ(t0) = ∫_{t0}^{T} ∂f/∂z dt`, and the change of variables reads
//! `log p(x) = log N(z(t0); 0, 1) − ℓ(t0)`.

use std::f64::consts::PI;
use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpVars};
use crate::ode::{self, Dynamics, MlpField, SolveResult, SolverConfig, TracedDynamics};
use crate::optim::{Adam, AdamConfig};
use crate::steer::{EndTimeSampler, RngStream, SamplerKind};
use crate::tensor::Array;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - HALF_LN_2PI
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CnfState {
    pub z: f64,
    /// `−∫ tr(∂f/∂z) dt` accumulated so far.
    pub delta_logp: f64,
}

impl CnfState {
    pub fn new(z: f64) -> Self {
        Self { z, delta_logp: 0.0 }
    }
}

/// `(f(z, t), −∂f/∂z)`, the derivative taken exactly with dual numbers.
pub fn cnf_rhs(net: &Mlp, z: f64, t: f64) -> Result<(f64, f64)> {
    let (f, df) = net.dual_eval(z, t)?;
    Ok((f, -df))
}

/// Augmented field on `[n, 2]` states `[z, ℓ]`, `dℓ/dt = −∂f/∂z`.
#[derive(Clone, Copy, Debug)]
pub struct CnfField<'a>(pub &'a Mlp);

impl Dynamics for CnfField<'_> {
    fn eval(&self, t: f64, state: &Array) -> Result<Array> {
        let (n, cols) = state.rows_cols();
        if cols != 2 {
            return Err(Error::Contract(format!(
                "augmented state needs 2 columns, got {cols}"
            )));
        }
        let mut out = Vec::with_capacity(2 * n);
        for row in state.data().chunks_exact(2) {
            let (f, neg_tr) = cnf_rhs(self.0, row[0], t)?;
            out.push(f);
            out.push(neg_tr);
        }
        Array::from_vec(vec![n, 2], out)
    }
}

struct TracedCnfField<'a> {
    net: &'a Mlp,
    vars: &'a MlpVars,
}

impl TracedDynamics for TracedCnfField<'_> {
    fn eval_traced(&self, tape: &mut Tape, t: f64, state: Var) -> Result<Var> {
        let z = tape.column(state, 0)?;
        let (f, df) = self.net.forward_traced_with_tangent(tape, self.vars, z, t)?;
        let neg = tape.neg(df);
        tape.concat_columns(&[f, neg])
    }
}

fn augmented(xs: &[f64]) -> Result<Array> {
    Ok(Array::from_vec(vec![xs.len(), 1], xs.to_vec())?.append_column(0.0))
}

/// `log p(x)` for one sample, integrating `[x, 0]` from `t_end` back to `t0`.
pub fn log_likelihood(net: &Mlp, x: f64, t0: f64, t_end: f64, solver: &SolverConfig) -> Result<f64> {
    Ok(log_likelihood_batch(net, &[x], t0, t_end, solver)?.0[0])
}

/// Joint solve for a batch; all samples share one step sequence.
pub fn log_likelihood_batch(
    net: &Mlp,
    xs: &[f64],
    t0: f64,
    t_end: f64,
    solver: &SolverConfig,
) -> Result<(Vec<f64>, SolveResult)> {
    if xs.is_empty() {
        return Err(Error::Contract("log-likelihood needs at least one sample".into()));
    }
    let r = ode::solve(&CnfField(net), &augmented(xs)?, t_end, t0, solver)?;
    let logp = r
        .final_state
        .data()
        .chunks_exact(2)
        .map(|row| {
            let s = CnfState {
                z: row[0],
                delta_logp: -row[1],
            };
            std_normal_log_pdf(s.z) + s.delta_logp
        })
        .collect();
    Ok((logp, r))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MogSpec {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MogSpec {
    pub fn new(means: Vec<f64>, stds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = Self {
            means,
            stds,
            weights,
        };
        m.validate()?;
        Ok(m)
    }

    /// Bimodal fixture: means ±2, standard deviations 0.5, equal weights.
    pub fn fixture() -> Self {
        Self {
            means: vec![-2.0, 2.0],
            stds: vec![0.5, 0.5],
            weights: vec![0.5, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 || self.stds.len() != k || self.weights.len() != k {
            return Err(Error::Config(
                "mixture needs matching, non-empty means, stds and weights".into(),
            ));
        }
        if self.stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("mixture standard deviations must be positive".into()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.means
            .iter()
            .zip(&self.stds)
            .zip(&self.weights)
            .map(|((m, s), w)| {
                let u = (x - m) / s;
                w * (-0.5 * u * u).exp() / (s * (2.0 * PI).sqrt())
            })
            .sum()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let u = rng.uniform(0.0, 1.0);
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k] + self.stds[k] * rng.standard_normal()
    }

    /// Interval holding all but a negligible tail of the mixture.
    pub fn support(&self, sigmas: f64) -> (f64, f64) {
        let lo = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(m, s)| m - sigmas * s)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(m, s)| m + sigmas * s)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Differential entropy by composite Simpson quadrature; the lowest
    /// achievable expected NLL.
    pub fn entropy(&self) -> f64 {
        let (lo, hi) = self.support(10.0);
        simpson(lo, hi, 20_000, |x| {
            let p = self.pdf(x);
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
    }
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(lo: f64, hi: f64, n: usize, f: F) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Trapezoid rule over tabulated values on a uniform grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let n = points.max(2) - 1;
    (0..=n)
        .map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 })
        .collect()
}

/// Expected NLL `−∫ p(x) log q(x) dx` of the model `q` under the mixture `p`,
/// by trapezoid quadrature on `points` nodes over the mixture's 6σ support.
pub fn quadrature_nll(
    net: &Mlp,
    mog: &MogSpec,
    t0: f64,
    t_end: f64,
    solver: &SolverConfig,
    points: usize,
) -> Result<(f64, usize)> {
    let (lo, hi) = mog.support(6.0);
    let xs = linspace(lo, hi, points);
    let (logq, r) = log_likelihood_batch(net, &xs, t0, t_end, solver)?;
    let integrand: Vec<f64> = xs.iter().zip(&logq).map(|(x, lq)| -mog.pdf(*x) * lq).collect();
    Ok((trapezoid(&xs, &integrand), r.nfe))
}

/// `∫ q(x) dx` over `range` by trapezoid quadrature.
pub fn density_mass(
    net: &Mlp,
    t0: f64,
    t_end: f64,
    solver: &SolverConfig,
    range: (f64, f64),
    points: usize,
) -> Result<f64> {
    let xs = linspace(range.0, range.1, points);
    let (logq, _) = log_likelihood_batch(net, &xs, t0, t_end, solver)?;
    let q: Vec<f64> = logq.iter().map(|l| l.exp()).collect();
    Ok(trapezoid(&xs, &q))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnfConfig {
    pub mog: MogSpec,
    pub hidden: Vec<usize>,
    pub sampler: SamplerKind,
    /// Centre the end-time distribution at `t1 − b` so samples stay within `t1`.
    pub constrained_shift: bool,
    pub t0: f64,
    /// Evaluation end time; training end times are drawn around it.
    pub t1: f64,
    pub solver: SolverConfig,
    pub adam: AdamConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub pool_size: usize,
    pub eval_every: usize,
    pub eval_points: usize,
    /// NLL within this many nats of the oracle counts as converged.
    pub nll_margin: f64,
    pub seed: u64,
    pub record_wall_clock: bool,
}

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_210_607;

impl Default for CnfConfig {
    fn default() -> Self {
        Self {
            mog: MogSpec::fixture(),
            hidden: vec![32, 32],
            sampler: SamplerKind::Fixed,
            constrained_shift: true,
            t0: 0.0,
            t1: 1.0,
            solver: SolverConfig::dopri5(1e-5, 1e-5),
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            iterations: 600,
            batch_size: 256,
            pool_size: 10_000,
            eval_every: 20,
            eval_points: 401,
            nll_margin: 0.15,
            seed: DEFAULT_SEED,
            record_wall_clock: false,
        }
    }
}

impl CnfConfig {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![2];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn end_time_sampler(&self) -> EndTimeSampler {
        EndTimeSampler::new(self.sampler, self.t0, self.t1)
            .with_constrained_shift(self.constrained_shift)
    }

    pub fn b(&self) -> f64 {
        match self.sampler {
            SamplerKind::Uniform { b } => b,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mog.validate()?;
        self.end_time_sampler().validate()?;
        self.solver.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.batch_size == 0 || self.pool_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, pool_size and eval_every must be positive".into(),
            ));
        }
        if self.eval_points < 3 {
            return Err(Error::Config("eval_points must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CnfEpoch {
    /// Training iterations completed when this row was evaluated.
    pub epoch: usize,
    pub nll: f64,
    pub cumulative_nfe: usize,
    /// Mean sampled end time over the iterations since the previous row.
    pub t_end_mean: f64,
}

#[derive(Clone, Debug)]
pub struct CnfOutcome {
    pub model: Mlp,
    pub history: Vec<CnfEpoch>,
    pub oracle_nll: f64,
    /// Training NFE spent before the evaluation NLL first came within the margin.
    pub nfe_to_threshold: Option<usize>,
    /// `ok`, or the reason training stopped early.
    pub status: String,
    pub wall_secs: f64,
}

impl CnfOutcome {
    pub fn final_nll(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.nll)
    }
}

fn batch_nll_grad(
    net: &Mlp,
    xs: &[f64],
    t0: f64,
    t_end: f64,
    solver: &SolverConfig,
) -> Result<(f64, Vec<f64>, usize)> {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape);
    let s = tape.constant(augmented(xs)?);
    let field = TracedCnfField { net, vars: &vars };
    let solved = ode::solve_traced(&field, &mut tape, s, t_end, t0, solver)?;
    let z0 = tape.column(solved.final_var, 0)?;
    let ell = tape.column(solved.final_var, 1)?;
    let sq = tape.square(z0);
    let quad = tape.mean(sq);
    let quad = tape.scale(quad, 0.5);
    let trace = tape.mean(ell);
    let nll = tape.add(quad, trace)?;
    let nll = tape.affine(nll, 1.0, HALF_LN_2PI);
    let value = tape.value(nll).item()?;
    let grads = net.collect_grads(&vars, &tape.backward(nll)?);
    Ok((value, grads, solved.result.nfe))
}

/// Maximum-likelihood training on minibatches drawn from a fixed sample pool.
/// A fresh end time is drawn for every iteration; evaluation always uses `t1`.
pub fn train_cnf(cfg: &CnfConfig) -> Result<CnfOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let root = RngStream::new(cfg.seed, 0);
    let mut data_rng = root.split(0);
    let pool: Vec<f64> = (0..cfg.pool_size).map(|_| cfg.mog.sample(&mut data_rng)).collect();
    let mut model = Mlp::new(&cfg.widths(), &mut root.split(1))?;
    let mut batch_rng = root.split(2);
    let mut time_rng = root.split(3);
    let sampler = cfg.end_time_sampler();
    let mut adam = Adam::new(cfg.adam, model.num_params());
    let oracle_nll = cfg.mog.entropy();

    let mut history = Vec::new();
    let mut nfe = 0;
    let mut nfe_to_threshold = None;
    let mut status = "ok".to_string();
    let mut t_sum = 0.0;
    let mut t_count = 0;

    for it in 0..cfg.iterations {
        let t_end = match sampler.sample(&mut time_rng) {
            Ok(t) => t,
            Err(e) => {
                status = format!("failed: iteration {it}: {e}");
                break;
            }
        };
        t_sum += t_end;
        t_count += 1;
        let xs: Vec<f64> = (0..cfg.batch_size)
            .map(|_| pool[batch_rng.index(pool.len())])
            .collect();
        let (_, grads, used) = match batch_nll_grad(&model, &xs, cfg.t0, t_end, &cfg.solver) {
            Ok(v) => v,
            Err(e) if e.is_solver_failure() => {
                status = format!("failed: iteration {it}: {e}");
                break;
            }
            Err(e) => return Err(e),
        };
        nfe += used;
        let mut params = model.params();
        adam.step(&mut params, &grads)?;
        model.set_params(&params)?;

        if (it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations {
            let nll = match quadrature_nll(&model, &cfg.mog, cfg.t0, cfg.t1, &cfg.solver, cfg.eval_points) {
                Ok((v, _)) => v,
                Err(e) if e.is_solver_failure() => {
                    status = format!("failed: evaluation after iteration {it}: {e}");
                    break;
                }
                Err(e) => return Err(e),
            };
            if nfe_to_threshold.is_none() && nll <= oracle_nll + cfg.nll_margin {
                nfe_to_threshold = Some(nfe);
            }
            history.push(CnfEpoch {
                epoch: it + 1,
                nll,
                cumulative_nfe: nfe,
                t_end_mean: t_sum / t_count as f64,
            });
            t_sum = 0.0;
            t_count = 0;
        }
    }
    Ok(CnfOutcome {
        model,
        history,
        oracle_nll,
        nfe_to_threshold,
        status,
        wall_secs: if cfg.record_wall_clock {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

/// `(sample_id, t, z)` rows: each start is integrated forward through the
/// checkpoints, which must be ascending and not below `t0`.
pub fn export_trajectories(
    net: &Mlp,
    starts: &[f64],
    t0: f64,
    checkpoints: &[f64],
    solver: &SolverConfig,
) -> Result<Vec<(usize, f64, f64)>> {
    if starts.is_empty() {
        return Err(Error::Contract("no starting points to integrate".into()));
    }
    if checkpoints.windows(2).any(|w| w[1] < w[0]) || checkpoints.iter().any(|&c| c < t0) {
        return Err(Error::Contract("checkpoints must be ascending and >= t0".into()));
    }
    let field = MlpField(net);
    let mut z = Array::from_vec(vec![starts.len(), 1], starts.to_vec())?;
    let mut t = t0;
    let mut snaps = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        if c > t {
            z = ode::solve(&field, &z, t, c, solver)?.final_state;
            t = c;
        }
        snaps.push((c, z.clone()));
    }
    let mut rows = Vec::with_capacity(starts.len() * checkpoints.len());
    for i in 0..starts.len() {
        for (c, zs) in &snaps {
            rows.push((i, *c, zs.data()[i]));
        }
    }
    Ok(rows)
}

/// Mean `|z(t1) − z(t1 − b)|` over `n` base samples pushed forward from `t0`.
pub fn path_shortening(
    net: &Mlp,
    t0: f64,
    t1: f64,
    b: f64,
    n: usize,
    solver: &SolverConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    if !(b > 0.0 && t1 - b >= t0) {
        return Err(Error::Config(format!(
            "displacement window needs 0 < b <= t1 - t0, got b = {b}"
        )));
    }
    let starts: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    let rows = export_trajectories(net, &starts, t0, &[t1 - b, t1], solver)?;
    let total: f64 = rows.chunks_exact(2).map(|p| (p[1].2 - p[0].2).abs()).sum();
    Ok(total / n as f64)
}
