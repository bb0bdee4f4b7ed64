//! Learning a stiff scalar ODE from short trajectory snippets.
//!
//! The problem family is `dy/dt = −r·y + r·A − 2r·Σₖ e^{−k t} (+ r·sin t)`
//! with `y(0) = 0`; its stiffness ratio is `r` for the base member. Training
//! pairs `(t0, y(t0)) → y(t0 + dt)` are drawn from the closed-form solution;
//! a network `f(y, t)` is fitted by integrating each snippet with an adaptive
//! solver, optionally to a randomly perturbed end time. Evaluation chains
//! fixed-length solves across a longer test horizon.

use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::ode::{self, solve_loss_grad, MlpField, SolveResult, SolverConfig};
use crate::optim::{Adam, AdamConfig};
use crate::steer::{EndTimeSampler, RngStream, SamplerKind};
use crate::tensor::Array;

/// Predictions are clamped to this magnitude once a test trajectory diverges.
pub const DIVERGENCE_CLAMP: f64 = 1e3;

#[derive(Clone, Debug, PartialEq)]
pub enum Variant {
    /// `−r·y + 3r − 2r·e^{−t}`
    Base,
    /// `−r·y + 3r − 2r·Σₖ e^{−k t}`
    MultiExp(Vec<f64>),
    /// Base plus a periodic forcing `r·sin t`.
    Periodic,
    /// Base with the steady state moved from 3 to 7.
    Steady7,
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Base => "base".into(),
            Variant::MultiExp(ks) => {
                let ks: Vec<String> = ks.iter().map(|k| format!("{k}")).collect();
                format!("multi_exp({})", ks.join(";"))
            }
            Variant::Periodic => "periodic".into(),
            Variant::Steady7 => "steady7".into(),
        }
    }

    fn steady_level(&self) -> f64 {
        match self {
            Variant::Steady7 => 7.0,
            _ => 3.0,
        }
    }

    fn decay_rates(&self) -> Vec<f64> {
        match self {
            Variant::MultiExp(ks) => ks.clone(),
            _ => vec![1.0],
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "periodic" => Ok(Variant::Periodic),
            "steady7" => Ok(Variant::Steady7),
            _ => {
                let inner = s
                    .strip_prefix("multi_exp(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))?;
                let ks = inner
                    .split([';', ' '])
                    .filter(|p| !p.is_empty())
                    .map(|p| {
                        p.parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad decay rate {p:?} in {s:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if ks.is_empty() {
                    return Err(Error::Config(format!("no decay rates in {s:?}")));
                }
                Ok(Variant::MultiExp(ks))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StiffProblem {
    pub variant: Variant,
    pub r: f64,
}

impl StiffProblem {
    pub fn new(variant: Variant, r: f64) -> Result<Self> {
        if !(r > 1.0) {
            return Err(Error::Config(format!("stiffness parameter r = {r} must exceed 1")));
        }
        Ok(Self { variant, r })
    }

    pub fn base(r: f64) -> Result<Self> {
        Self::new(Variant::Base, r)
    }

    /// Ratio of the fastest to the slowest decay rate of the linear system.
    pub fn stiffness_ratio(&self) -> f64 {
        let slow = self
            .variant
            .decay_rates()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
            .min(self.r);
        let fast = self
            .variant
            .decay_rates()
            .into_iter()
            .fold(self.r, f64::max);
        fast / slow
    }

    /// Every variant is linear with exponential or sinusoidal forcing, so a
    /// closed form exists unless a forcing rate coincides with `r`.
    pub fn closed_form_available(&self) -> bool {
        self.variant.decay_rates().iter().all(|&k| k != self.r)
    }

    pub fn rhs(&self, y: f64, t: f64) -> f64 {
        let r = self.r;
        let forcing: f64 = self
            .variant
            .decay_rates()
            .iter()
            .map(|k| (-k * t).exp())
            .sum();
        let mut dy = -r * y + self.variant.steady_level() * r - 2.0 * r * forcing;
        if self.variant == Variant::Periodic {
            dy += r * t.sin();
        }
        dy
    }

    /// Exact solution with `y(0) = 0`.
    pub fn solution(&self, t: f64) -> Result<f64> {
        let r = self.r;
        let level = self.variant.steady_level();
        let mut y = level;
        let mut at_zero = level;
        for k in self.variant.decay_rates() {
            if k == r {
                return Err(Error::Singular(format!(
                    "forcing rate {k} coincides with r = {r}"
                )));
            }
            let coeff = -2.0 * r / (r - k);
            y += coeff * (-k * t).exp();
            at_zero += coeff;
        }
        if self.variant == Variant::Periodic {
            let d = r * r + 1.0;
            y += (r * r / d) * t.sin() - (r / d) * t.cos();
            at_zero -= r / d;
        }
        Ok(y - at_zero * (-r * t).exp())
    }
}

/// Right-hand side of the base family at stiffness `r`.
pub fn stiff_rhs(p: &StiffProblem, y: f64, t: f64) -> f64 {
    p.rhs(y, t)
}

/// `y(t) = 3 − ((r − 3)/(r − 1))·e^{−rt} − (2r/(r − 1))·e^{−t}`.
pub fn stiff_solution(r: f64, t: f64) -> Result<f64> {
    if r == 1.0 {
        return Err(Error::Singular("r = 1 makes the solution coefficients infinite".into()));
    }
    Ok(3.0 - ((r - 3.0) / (r - 1.0)) * (-r * t).exp() - (2.0 * r / (r - 1.0)) * (-t).exp())
}

/// What the snippet loss compares the solve at the sampled end time against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// The label at the nominal end time `t0 + dt`, whatever end time was sampled.
    Nominal,
    /// The exact solution at the sampled end time.
    Sampled,
}

impl TargetMode {
    pub fn name(self) -> &'static str {
        match self {
            TargetMode::Nominal => "nominal",
            TargetMode::Sampled => "sampled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Each test interval starts from the previous prediction.
    ClosedLoop,
    /// Each test interval restarts from the exact solution.
    OpenLoop,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::ClosedLoop => "closed_loop",
            EvalMode::OpenLoop => "open_loop",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub r: f64,
    pub hidden: usize,
    pub dt: f64,
    pub train_range: (f64, f64),
    pub test_range: (f64, f64),
    pub n_train: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// End-time rule, re-centred on each snippet's window.
    pub sampler: SamplerKind,
    pub constrained_shift: bool,
    pub target: TargetMode,
    pub solver: SolverConfig,
    pub eval_mode: EvalMode,
    pub grid_points: usize,
    pub seed: u64,
    /// When false, `wall_secs` is written as 0 so records stay reproducible.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Base,
            r: 1000.0,
            hidden: 500,
            dt: 0.125,
            train_range: (0.0, 15.0),
            test_range: (0.0, 25.0),
            n_train: 1000,
            adam: AdamConfig::default(),
            epochs: 400,
            sampler: SamplerKind::Fixed,
            constrained_shift: false,
            target: TargetMode::Nominal,
            solver: SolverConfig::default(),
            eval_mode: EvalMode::ClosedLoop,
            grid_points: 2001,
            seed: DEFAULT_SEED,
            record_wall_clock: false,
        }
    }
}

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_210_607;

impl TrainConfig {
    pub fn problem(&self) -> Result<StiffProblem> {
        StiffProblem::new(self.variant.clone(), self.r)
    }

    /// The end-time rule for the snippet starting at `t0`.
    pub fn sampler_for(&self, t0: f64) -> EndTimeSampler {
        EndTimeSampler::new(self.sampler, t0, t0 + self.dt)
            .with_constrained_shift(self.constrained_shift)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        self.problem()?;
        self.sampler_for(0.0).validate()?;
        self.solver.validate()?;
        if self.hidden == 0 || self.n_train == 0 {
            return Err(Error::Config("hidden and n_train must be positive".into()));
        }
        if !(self.train_range.1 > self.train_range.0) || !(self.test_range.1 > self.test_range.0)
        {
            return Err(Error::Config("training and test ranges must be non-empty".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        Ok(())
    }

    pub fn b(&self) -> f64 {
        match self.sampler {
            SamplerKind::Uniform { b } => b,
            SamplerKind::AdaptiveGrid { eps } => self.dt - eps,
            _ => 0.0,
        }
    }

    pub fn std(&self) -> f64 {
        match self.sampler {
            SamplerKind::Gaussian { std, .. } => std,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example {
    pub t0: f64,
    pub y0: f64,
    pub t1: f64,
    pub y1: f64,
}

/// Snippets with `t0 ~ U(train_range)` labelled by the closed form.
pub fn make_training_set(cfg: &TrainConfig, rng: &mut RngStream) -> Result<Vec<Example>> {
    let p = cfg.problem()?;
    if !p.closed_form_available() {
        return Err(Error::Config(format!(
            "variant {} has no closed form at r = {}",
            p.variant.name(),
            p.r
        )));
    }
    (0..cfg.n_train)
        .map(|_| {
            let t0 = rng.uniform(cfg.train_range.0, cfg.train_range.1);
            let t1 = t0 + cfg.dt;
            Ok(Example {
                t0,
                y0: p.solution(t0)?,
                t1,
                y1: p.solution(t1)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub mse: f64,
    /// `(t, y_true, y_pred)` on the dense grid.
    pub trajectory: Vec<(f64, f64, f64)>,
    pub diverged: bool,
    pub nfe: usize,
}

impl EvalResult {
    /// Prediction at the end of the test horizon.
    pub fn final_prediction(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |p| p.2)
    }
}

/// Evenly spaced evaluation grid including both endpoints.
pub fn dense_grid(range: (f64, f64), points: usize) -> Vec<f64> {
    let n = points.max(2) - 1;
    (0..=n)
        .map(|i| {
            if i == n {
                range.1
            } else {
                range.0 + (range.1 - range.0) * i as f64 / n as f64
            }
        })
        .collect()
}

/// Chains solves of length `dt` across `range`; MSE against the closed form on
/// the dense grid. End times are never perturbed here.
pub fn eval_mse(
    field: &dyn ode::Dynamics,
    problem: &StiffProblem,
    range: (f64, f64),
    dt: f64,
    grid_points: usize,
    solver: &SolverConfig,
    mode: EvalMode,
) -> Result<EvalResult> {
    let grid = dense_grid(range, grid_points);
    let n_intervals = (((range.1 - range.0) / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut y = problem.solution(range.0)?;
    let mut nfe = 0;
    let mut diverged = false;
    let mut last_finite = y;
    let mut trajectory = Vec::with_capacity(grid.len());
    let mut g = 0;

    for k in 0..n_intervals {
        let a = range.0 + k as f64 * dt;
        let b = if k + 1 == n_intervals {
            range.1
        } else {
            range.0 + (k + 1) as f64 * dt
        };
        if mode == EvalMode::OpenLoop {
            y = problem.solution(a)?;
            diverged = false;
        }
        let solved: Option<SolveResult> = if diverged {
            None
        } else {
            match ode::solve(field, &Array::scalar(y), a, b, solver) {
                Ok(r) => {
                    nfe += r.nfe;
                    Some(r)
                }
                Err(e) if e.is_solver_failure() => {
                    diverged = true;
                    None
                }
                Err(e) => return Err(e),
            }
        };
        while g < grid.len() && (grid[g] <= b || k + 1 == n_intervals) {
            let t = grid[g];
            let pred = match &solved {
                Some(r) => r.sample_at(t.clamp(a, b))?.item()?,
                None => last_finite.clamp(-DIVERGENCE_CLAMP, DIVERGENCE_CLAMP),
            };
            if pred.is_finite() {
                last_finite = pred;
            }
            trajectory.push((t, problem.solution(t)?, pred));
            g += 1;
        }
        if let Some(r) = &solved {
            y = r.final_state.item()?;
        }
    }
    let mse = trajectory
        .iter()
        .map(|(_, yt, yp)| {
            let yp = yp.clamp(-DIVERGENCE_CLAMP, DIVERGENCE_CLAMP);
            (yt - yp).powi(2)
        })
        .sum::<f64>()
        / trajectory.len() as f64;
    Ok(EvalResult {
        mse,
        trajectory,
        diverged,
        nfe,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_mse: f64,
    /// Function evaluations spent by the training solves of this epoch.
    pub train_nfe: usize,
    pub mean_end_time_offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub variant: String,
    pub r: f64,
    pub sampler_kind: String,
    pub b: f64,
    pub std: f64,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub rtol: f64,
    pub atol: f64,
    pub min_test_mse: f64,
    pub final_test_mse: f64,
    pub min_epoch: usize,
    pub total_nfe: usize,
    pub wall_secs: f64,
    /// `ok`, or `failed: <reason>` when training stopped early.
    pub status: String,
}

impl RunRecord {
    pub const HEADER: [&'static str; 17] = [
        "seed",
        "variant",
        "r",
        "sampler_kind",
        "b",
        "std",
        "hidden",
        "lr",
        "epochs",
        "rtol",
        "atol",
        "min_test_mse",
        "final_test_mse",
        "min_epoch",
        "total_nfe",
        "wall_secs",
        "status",
    ];

    fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            seed: cfg.seed,
            variant: cfg.variant.name(),
            r: cfg.r,
            sampler_kind: cfg.sampler.name().into(),
            b: cfg.b(),
            std: cfg.std(),
            hidden: cfg.hidden,
            lr: cfg.adam.lr,
            epochs: cfg.epochs,
            rtol: cfg.solver.rtol,
            atol: cfg.solver.atol,
            min_test_mse: f64::NAN,
            final_test_mse: f64::NAN,
            min_epoch: 0,
            total_nfe: 0,
            wall_secs: 0.0,
            status: "ok".into(),
        }
    }

    pub fn failed(&self) -> bool {
        self.status != "ok"
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    /// Parameters at the epoch with the lowest test MSE.
    pub best_model: Mlp,
    pub final_model: Mlp,
    pub history: Vec<EpochStats>,
    /// Test trajectory of the best model.
    pub best_eval: Option<EvalResult>,
}

fn squared_error(target: f64) -> impl Fn(&mut Tape, Var) -> Result<Var> {
    move |tape: &mut Tape, z: Var| {
        let t = tape.constant(Array::scalar(target));
        let d = tape.sub(z, t)?;
        let sq = tape.square(d);
        Ok(tape.sum(sq))
    }
}

/// One pass over the training set; returns the mean loss, its gradient and the NFE spent.
fn epoch_gradient(
    cfg: &TrainConfig,
    problem: &StiffProblem,
    net: &Mlp,
    data: &[Example],
    rng: &mut RngStream,
) -> Result<(f64, Vec<f64>, usize, f64)> {
    let n = data.len() as f64;
    let mut grads = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    let mut nfe = 0;
    let mut offset = 0.0;
    for ex in data {
        let t_end = cfg.sampler_for(ex.t0).sample(rng)?;
        offset += t_end - ex.t1;
        let target = match cfg.target {
            TargetMode::Nominal => ex.y1,
            TargetMode::Sampled => problem.solution(t_end)?,
        };
        let g = solve_loss_grad(
            net,
            &Array::scalar(ex.y0),
            ex.t0,
            t_end,
            &cfg.solver,
            squared_error(target),
        )?;
        loss += g.loss / n;
        nfe += g.solve.nfe;
        for (acc, gi) in grads.iter_mut().zip(&g.grads) {
            *acc += gi / n;
        }
    }
    Ok((loss, grads, nfe, offset / n))
}

/// Full-batch Adam training with per-epoch test evaluation.
///
/// Solver failures during training stop the run; the record is marked failed
/// and the history up to that point is kept.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let problem = cfg.problem()?;
    let root = RngStream::new(cfg.seed, 0);
    let data = make_training_set(cfg, &mut root.split(0))?;
    let mut net = Mlp::new(&[2, cfg.hidden, 1], &mut root.split(1))?;
    let mut sampler_rng = root.split(2);
    let mut adam = Adam::new(cfg.adam, net.num_params());

    let mut record = RunRecord::from_config(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_model = net.clone();
    let mut best_eval = None;
    let mut best_mse = f64::INFINITY;
    let mut last_mse = f64::NAN;

    let evaluate = |net: &Mlp| {
        eval_mse(
            &MlpField(net),
            &problem,
            cfg.test_range,
            cfg.dt,
            cfg.grid_points,
            &cfg.solver,
            cfg.eval_mode,
        )
    };

    for epoch in 0..cfg.epochs {
        let (loss, grads, nfe, offset) =
            match epoch_gradient(cfg, &problem, &net, &data, &mut sampler_rng) {
                Ok(v) => v,
                Err(e) if e.is_solver_failure() => {
                    record.status = format!("failed: epoch {epoch}: {e}");
                    break;
                }
                Err(e) => return Err(e),
            };
        let mut params = net.params();
        adam.step(&mut params, &grads)?;
        net.set_params(&params)?;
        record.total_nfe += nfe;

        let ev = evaluate(&net)?;
        last_mse = ev.mse;
        if ev.mse < best_mse {
            best_mse = ev.mse;
            best_model = net.clone();
            record.min_epoch = epoch;
            best_eval = Some(ev.clone());
        }
        history.push(EpochStats {
            epoch,
            train_loss: loss,
            test_mse: ev.mse,
            train_nfe: nfe,
            mean_end_time_offset: offset,
        });
    }

    record.min_test_mse = best_mse;
    record.final_test_mse = last_mse;
    if history.is_empty() {
        record.min_test_mse = f64::NAN;
    }
    if cfg.record_wall_clock {
        record.wall_secs = started.elapsed().as_secs_f64();
    }
    Ok(TrainOutcome {
        record,
        best_model,
        final_model: net,
        history,
        best_eval,
    })
}

/// Axes of an experiment grid. Cells are enumerated variant → r → sampler →
/// hidden width → seed, so the order is a pure function of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub variants: Vec<Variant>,
    pub rs: Vec<f64>,
    pub samplers: Vec<SamplerKind>,
    pub hiddens: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for v in &self.variants {
            for &r in &self.rs {
                for &s in &self.samplers {
                    for &h in &self.hiddens {
                        for &seed in &self.seeds {
                            out.push(TrainConfig {
                                variant: v.clone(),
                                r,
                                sampler: s,
                                hidden: h,
                                seed,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
            || self.rs.is_empty()
            || self.samplers.is_empty()
            || self.hiddens.is_empty()
            || self.seeds.is_empty()
    }
}

/// Runs every cell on up to `workers` threads and returns the records in
/// cell order. A failing cell yields a record with a `failed` status.
pub fn sweep(grid: &SweepGrid, base: &TrainConfig, workers: usize) -> Result<Vec<RunRecord>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid has an empty axis".into()));
    }
    let cells = grid.cells(base);
    let results = run_parallel(&cells, workers, |cfg| match train(cfg) {
        Ok(o) => o.record,
        Err(e) => {
            let mut r = RunRecord::from_config(cfg);
            r.status = format!("failed: {e}");
            r
        }
    });
    Ok(results)
}

/// Maps `f` over `items` on a fixed pool of scoped threads, preserving order.
pub fn run_parallel<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell produces a result"))
        .collect()
}
