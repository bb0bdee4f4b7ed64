use super::{Dynamics, Method, SolveResult, SolverConfig, Step, TracedDynamics, TracedSolve};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Array;

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
// Fifth-order weights; also the last row of the tableau (FSAL).
const B5: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
// PI controller exponents for an order-5 pair.
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const BETA: f64 = 0.04;

/// Stage arithmetic shared by the plain and the recorded solvers.
trait Backend {
    type V: Clone;
    fn eval(&mut self, t: f64, z: &Self::V) -> Result<Self::V>;
    fn lincomb(&mut self, base: &Self::V, terms: &[(f64, &Self::V)]) -> Result<Self::V>;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Array;
    fn checkpoint(&self) -> usize;
    fn rollback(&mut self, mark: usize);
}

struct Plain<'a, F: ?Sized>(&'a F);

impl<F: Dynamics + ?Sized> Backend for Plain<'_, F> {
    type V = Array;

    fn eval(&mut self, t: f64, z: &Array) -> Result<Array> {
        self.0.eval(t, z)
    }

    fn lincomb(&mut self, base: &Array, terms: &[(f64, &Array)]) -> Result<Array> {
        Array::lincomb(base, terms)
    }

    fn value<'a>(&'a self, v: &'a Array) -> &'a Array {
        v
    }

    fn checkpoint(&self) -> usize {
        0
    }

    fn rollback(&mut self, _mark: usize) {}
}

struct Traced<'a, F: ?Sized> {
    f: &'a F,
    tape: &'a mut Tape,
}

impl<F: TracedDynamics + ?Sized> Backend for Traced<'_, F> {
    type V = Var;

    fn eval(&mut self, t: f64, z: &Var) -> Result<Var> {
        self.f.eval_traced(self.tape, t, *z)
    }

    fn lincomb(&mut self, base: &Var, terms: &[(f64, &Var)]) -> Result<Var> {
        let terms: Vec<(f64, Var)> = terms.iter().map(|&(c, v)| (c, *v)).collect();
        self.tape.lincomb(*base, &terms)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Array {
        self.tape.value(*v)
    }

    fn checkpoint(&self) -> usize {
        self.tape.len()
    }

    fn rollback(&mut self, mark: usize) {
        self.tape.truncate(mark);
    }
}

fn empty_result(z0: Array, t0: f64) -> SolveResult {
    SolveResult {
        final_state: z0.clone(),
        trajectory: vec![(t0, z0)],
        nfe: 0,
        accepted: 0,
        rejected: 0,
        steps: Vec::new(),
    }
}

fn rk4_step<B: Backend>(b: &mut B, t: f64, h: f64, y: &B::V) -> Result<B::V> {
    let k1 = b.eval(t, y)?;
    let y2 = b.lincomb(y, &[(0.5 * h, &k1)])?;
    let k2 = b.eval(t + 0.5 * h, &y2)?;
    let y3 = b.lincomb(y, &[(0.5 * h, &k2)])?;
    let k3 = b.eval(t + 0.5 * h, &y3)?;
    let y4 = b.lincomb(y, &[(h, &k3)])?;
    let k4 = b.eval(t + h, &y4)?;
    b.lincomb(
        y,
        &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)],
    )
}

fn rk4_core<B: Backend>(
    b: &mut B,
    z0: B::V,
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<(B::V, SolveResult)> {
    if n_steps < 1 {
        return Err(Error::Config("rk4 needs at least one step".into()));
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut y = z0;
    let mut res = empty_result(b.value(&y).clone(), t0);
    for i in 0..n_steps {
        let t = t0 + i as f64 * h;
        let t_next = if i + 1 == n_steps {
            t1
        } else {
            t0 + (i + 1) as f64 * h
        };
        y = rk4_step(b, t, t_next - t, &y)?;
        res.nfe += 4;
        let v = b.value(&y);
        if !v.is_finite() {
            return Err(Error::Divergence { step: i, t });
        }
        res.accepted += 1;
        res.steps.push(Step {
            t_start: t,
            t_end: t_next,
            error_norm: 0.0,
        });
        res.trajectory.push((t_next, v.clone()));
    }
    res.final_state = b.value(&y).clone();
    Ok((y, res))
}

struct Dp5Stages<V> {
    y5: V,
    k7: V,
    ks: [V; 7],
}

/// The six new stage evaluations of one Dormand–Prince step, given `k1`.
fn dopri5_stages<B: Backend>(b: &mut B, t: f64, h: f64, y: &B::V, k1: &B::V) -> Result<Dp5Stages<B::V>> {
    let y2 = b.lincomb(y, &[(h * A2[0], k1)])?;
    let k2 = b.eval(t + C[1] * h, &y2)?;
    let y3 = b.lincomb(y, &[(h * A3[0], k1), (h * A3[1], &k2)])?;
    let k3 = b.eval(t + C[2] * h, &y3)?;
    let y4 = b.lincomb(y, &[(h * A4[0], k1), (h * A4[1], &k2), (h * A4[2], &k3)])?;
    let k4 = b.eval(t + C[3] * h, &y4)?;
    let y5s = b.lincomb(
        y,
        &[(h * A5[0], k1), (h * A5[1], &k2), (h * A5[2], &k3), (h * A5[3], &k4)],
    )?;
    let k5 = b.eval(t + C[4] * h, &y5s)?;
    let y6 = b.lincomb(
        y,
        &[
            (h * A6[0], k1),
            (h * A6[1], &k2),
            (h * A6[2], &k3),
            (h * A6[3], &k4),
            (h * A6[4], &k5),
        ],
    )?;
    let k6 = b.eval(t + C[5] * h, &y6)?;
    let y5 = b.lincomb(
        y,
        &[
            (h * B5[0], k1),
            (h * B5[1], &k2),
            (h * B5[2], &k3),
            (h * B5[3], &k4),
            (h * B5[4], &k5),
            (h * B5[5], &k6),
        ],
    )?;
    let k7 = b.eval(t + C[6] * h, &y5)?;
    Ok(Dp5Stages {
        y5,
        k7: k7.clone(),
        ks: [k1.clone(), k2, k3, k4, k5, k6, k7],
    })
}

/// Max-norm of the embedded error estimate scaled by `atol + rtol·max(|y|, |y_new|)`.
fn error_norm(
    h: f64,
    ks: [&Array; 7],
    y: &Array,
    y_new: &Array,
    rtol: f64,
    atol: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..y.len() {
        let mut e = 0.0;
        for (j, k) in ks.iter().enumerate() {
            e += (B5.get(j).copied().unwrap_or(0.0) - B4[j]) * k.data()[i];
        }
        let e = (h * e).abs();
        let scale = atol + rtol * y.data()[i].abs().max(y_new.data()[i].abs());
        let r = e / scale;
        if r.is_nan() {
            return f64::INFINITY;
        }
        worst = worst.max(r);
    }
    worst
}

fn dopri5_core<B: Backend>(
    b: &mut B,
    z0: B::V,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<(B::V, SolveResult)> {
    cfg.validate()?;
    let mut res = empty_result(b.value(&z0).clone(), t0);
    if t1 == t0 {
        return Ok((z0, res));
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut h = cfg.initial_step.unwrap_or(span).min(span);
    let mut t = t0;
    let mut y = z0;
    let mut k1 = b.eval(t, &y)?;
    res.nfe = 1;
    let mut err_prev: f64 = 1e-4;
    let mut last_rejected = false;

    while (t1 - t) * dir > 0.0 {
        if res.accepted + res.rejected >= cfg.max_steps {
            return Err(Error::StepLimit {
                max_steps: cfg.max_steps,
                t,
                h,
            });
        }
        let remaining = (t1 - t).abs();
        let landing = h >= remaining;
        if landing {
            h = remaining;
        }
        let hs = dir * h;
        let mark = b.checkpoint();
        let st = dopri5_stages(b, t, hs, &y, &k1)?;
        res.nfe += 6;
        let err = {
            let ks = [
                b.value(&st.ks[0]),
                b.value(&st.ks[1]),
                b.value(&st.ks[2]),
                b.value(&st.ks[3]),
                b.value(&st.ks[4]),
                b.value(&st.ks[5]),
                b.value(&st.ks[6]),
            ];
            let y5 = b.value(&st.y5);
            if y5.is_finite() {
                error_norm(hs, ks, b.value(&y), y5, cfg.rtol, cfg.atol)
            } else {
                f64::INFINITY
            }
        };

        if err <= 1.0 {
            let t_new = if landing { t1 } else { t + hs };
            res.steps.push(Step {
                t_start: t,
                t_end: t_new,
                error_norm: err,
            });
            res.accepted += 1;
            t = t_new;
            y = st.y5;
            k1 = st.k7;
            res.trajectory.push((t, b.value(&y).clone()));

            let mut factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                SAFETY * err.powf(-ALPHA) * err_prev.powf(BETA)
            };
            factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
            if last_rejected {
                factor = factor.min(1.0);
            }
            err_prev = err.max(1e-4);
            h *= factor;
            last_rejected = false;
        } else {
            b.rollback(mark);
            res.rejected += 1;
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).max(MIN_FACTOR)
            } else {
                MIN_FACTOR
            };
            h *= factor;
            last_rejected = true;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }
    }
    res.final_state = b.value(&y).clone();
    Ok((y, res))
}

fn replay_core<B: Backend>(
    b: &mut B,
    method: Method,
    z0: B::V,
    schedule: &[(f64, f64)],
) -> Result<(B::V, SolveResult)> {
    let t0 = schedule.first().map_or(0.0, |s| s.0);
    let mut res = empty_result(b.value(&z0).clone(), t0);
    let mut y = z0;
    let mut k1 = None;
    for (i, &(ta, tb)) in schedule.iter().enumerate() {
        let h = tb - ta;
        y = match method {
            Method::Rk4 => {
                res.nfe += 4;
                rk4_step(b, ta, h, &y)?
            }
            Method::Dopri5 => {
                let first = match k1.take() {
                    Some(k) => k,
                    None => {
                        res.nfe += 1;
                        b.eval(ta, &y)?
                    }
                };
                let st = dopri5_stages(b, ta, h, &y, &first)?;
                res.nfe += 6;
                k1 = Some(st.k7);
                st.y5
            }
        };
        if !b.value(&y).is_finite() {
            return Err(Error::Divergence { step: i, t: ta });
        }
        res.accepted += 1;
        res.steps.push(Step {
            t_start: ta,
            t_end: tb,
            error_norm: 0.0,
        });
        res.trajectory.push((tb, b.value(&y).clone()));
    }
    res.final_state = b.value(&y).clone();
    Ok((y, res))
}

/// Classical fourth-order Runge–Kutta with `n_steps` equal steps; `t1 < t0`
/// integrates backward.
pub fn rk4_solve<F: Dynamics + ?Sized>(
    f: &F,
    z0: &Array,
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<SolveResult> {
    rk4_core(&mut Plain(f), z0.clone(), t0, t1, n_steps).map(|(_, r)| r)
}

pub fn rk4_solve_traced<F: TracedDynamics + ?Sized>(
    f: &F,
    tape: &mut Tape,
    z0: Var,
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<TracedSolve> {
    let (final_var, result) = rk4_core(&mut Traced { f, tape }, z0, t0, t1, n_steps)?;
    Ok(TracedSolve { result, final_var })
}

/// Adaptive Dormand–Prince 5(4) with FSAL and a PI step controller.
pub fn dopri5_solve<F: Dynamics + ?Sized>(
    f: &F,
    z0: &Array,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    dopri5_core(&mut Plain(f), z0.clone(), t0, t1, cfg).map(|(_, r)| r)
}

/// Recorded adaptive solve. Rejected trial steps are rolled back off the
/// tape, so gradients flow only through accepted stages.
pub fn dopri5_solve_traced<F: TracedDynamics + ?Sized>(
    f: &F,
    tape: &mut Tape,
    z0: Var,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<TracedSolve> {
    let (final_var, result) = dopri5_core(&mut Traced { f, tape }, z0, t0, t1, cfg)?;
    Ok(TracedSolve { result, final_var })
}

pub fn solve<F: Dynamics + ?Sized>(
    f: &F,
    z0: &Array,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    match cfg.method {
        Method::Rk4 => rk4_solve(f, z0, t0, t1, cfg.fixed_steps),
        Method::Dopri5 => dopri5_solve(f, z0, t0, t1, cfg),
    }
}

pub fn solve_traced<F: TracedDynamics + ?Sized>(
    f: &F,
    tape: &mut Tape,
    z0: Var,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<TracedSolve> {
    match cfg.method {
        Method::Rk4 => rk4_solve_traced(f, tape, z0, t0, t1, cfg.fixed_steps),
        Method::Dopri5 => dopri5_solve_traced(f, tape, z0, t0, t1, cfg),
    }
}

/// Re-runs a method over a frozen list of `(t_start, t_end)` steps without
/// any error control.
pub fn replay_schedule<F: Dynamics + ?Sized>(
    f: &F,
    method: Method,
    z0: &Array,
    schedule: &[(f64, f64)],
) -> Result<SolveResult> {
    replay_core(&mut Plain(f), method, z0.clone(), schedule).map(|(_, r)| r)
}

pub fn replay_schedule_traced<F: TracedDynamics + ?Sized>(
    f: &F,
    tape: &mut Tape,
    method: Method,
    z0: Var,
    schedule: &[(f64, f64)],
) -> Result<TracedSolve> {
    let (final_var, result) = replay_core(&mut Traced { f, tape }, method, z0, schedule)?;
    Ok(TracedSolve { result, final_var })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, z: &Array) -> Result<Array> {
        Ok(z.scale(-1.0))
    }

    fn zero(_t: f64, z: &Array) -> Result<Array> {
        Ok(Array::zeros_like(z))
    }

    #[test]
    fn rk4_constant_flow() {
        let r = rk4_solve(&zero, &Array::scalar(5.0), 0.0, 3.0, 7).unwrap();
        assert_eq!(r.final_state.item().unwrap(), 5.0);
        assert_eq!(r.nfe, 28);
    }

    #[test]
    fn rk4_exponential_and_backward() {
        let r = rk4_solve(&decay, &Array::scalar(1.0), 0.0, 1.0, 100).unwrap();
        let e = (-1f64).exp();
        assert!((r.final_state.item().unwrap() - e).abs() <= 1e-8);
        let back = rk4_solve(&decay, &Array::scalar(e), 1.0, 0.0, 100).unwrap();
        assert!((back.final_state.item().unwrap() - 1.0).abs() <= 1e-8);
        assert!(back.trajectory.windows(2).all(|w| w[1].0 < w[0].0));
    }

    #[test]
    fn rk4_order_four_window() {
        let e = (-1f64).exp();
        let err = |n| {
            let r = rk4_solve(&decay, &Array::scalar(1.0), 0.0, 1.0, n).unwrap();
            (r.final_state.item().unwrap() - e).abs()
        };
        for n in [4, 8, 16] {
            let ratio = err(n) / err(2 * n);
            assert!((12.0..=20.0).contains(&ratio), "n = {n}: ratio {ratio}");
        }
    }

    #[test]
    fn rk4_divergence_reports_step() {
        let blow = |_t: f64, z: &Array| Ok(z.map(|v| v * v * 1e200));
        let err = rk4_solve(&blow, &Array::scalar(10.0), 0.0, 1.0, 10).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 0, .. }));
    }

    #[test]
    fn dopri5_zero_flow_takes_one_step() {
        let r = dopri5_solve(&zero, &Array::scalar(2.0), 0.0, 4.0, &SolverConfig::default())
            .unwrap();
        assert_eq!(r.accepted, 1);
        assert_eq!(r.rejected, 0);
        assert_eq!(r.steps[0].error_norm, 0.0);
        assert_eq!(r.nfe, 7);
    }

    #[test]
    fn dopri5_exponential() {
        let cfg = SolverConfig::dopri5(1e-6, 1e-6);
        let r = dopri5_solve(&decay, &Array::scalar(1.0), 0.0, 1.0, &cfg).unwrap();
        assert!((r.final_state.item().unwrap() - (-1f64).exp()).abs() <= 1e-5);
        assert_eq!(r.nfe, 6 * (r.accepted + r.rejected) + 1);
        assert!(r.steps.iter().all(|s| s.error_norm <= 1.0));
    }

    #[test]
    fn dopri5_step_limit_carries_state() {
        let cfg = SolverConfig {
            max_steps: 3,
            ..SolverConfig::dopri5(1e-10, 1e-12)
        };
        let fast = |_t: f64, z: &Array| Ok(z.scale(-50.0));
        match dopri5_solve(&fast, &Array::scalar(1.0), 0.0, 10.0, &cfg) {
            Err(Error::StepLimit { max_steps: 3, t, h }) => {
                assert!(t < 10.0 && h > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dopri5_backward_lands_on_start() {
        let cfg = SolverConfig::dopri5(1e-8, 1e-10);
        let fwd = dopri5_solve(&decay, &Array::scalar(1.0), 0.0, 2.0, &cfg).unwrap();
        let back = dopri5_solve(&decay, &fwd.final_state, 2.0, 0.0, &cfg).unwrap();
        assert_eq!(back.trajectory.last().unwrap().0, 0.0);
        assert!((back.final_state.item().unwrap() - 1.0).abs() <= 1e-7);
    }

    #[test]
    fn replay_reproduces_adaptive_solution() {
        let cfg = SolverConfig::dopri5(1e-7, 1e-9);
        let osc = |t: f64, z: &Array| Ok(z.map(|v| -v + t.sin()));
        let r = dopri5_solve(&osc, &Array::vector(vec![1.0, -2.0]), 0.0, 3.0, &cfg).unwrap();
        let rep = replay_schedule(&osc, Method::Dopri5, &Array::vector(vec![1.0, -2.0]), &r.schedule())
            .unwrap();
        assert_eq!(rep.final_state, r.final_state);
        assert_eq!(rep.nfe, 6 * r.accepted + 1);
    }

    #[test]
    fn sample_at_interpolates_linearly() {
        let r = rk4_solve(&zero, &Array::scalar(1.0), 0.0, 1.0, 4).unwrap();
        assert_eq!(r.sample_at(0.6).unwrap().item().unwrap(), 1.0);
        assert!(r.sample_at(1.5).is_err());
        let lin = |_t: f64, z: &Array| Ok(Array::filled(z.shape(), 1.0));
        let r = rk4_solve(&lin, &Array::scalar(0.0), 0.0, 2.0, 2).unwrap();
        assert!((r.sample_at(0.25).unwrap().item().unwrap() - 0.25).abs() < 1e-15);
    }
}
