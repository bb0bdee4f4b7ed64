use super::{replay_schedule, solve_traced, MlpField, SolveResult, SolverConfig, TracedMlpField};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::mlp::Mlp;
use crate::tensor::Array;

#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient in [`Mlp::params`] order.
    pub grads: Vec<f64>,
    pub solve: SolveResult,
}

/// Solves `dz/dt = net(z, t)` from `t0` to `t_end` on a tape, applies `loss` to
/// the final state and backpropagates through every accepted solver stage.
/// The end time is treated as a constant.
pub fn solve_loss_grad<L>(
    net: &Mlp,
    z0: &Array,
    t0: f64,
    t_end: f64,
    cfg: &SolverConfig,
    loss: L,
) -> Result<LossGrad>
where
    L: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = net.register(&mut tape);
    let z = tape.constant(z0.clone());
    let field = TracedMlpField { net, vars: &vars };
    let traced = solve_traced(&field, &mut tape, z, t0, t_end, cfg)?;
    let out = loss(&mut tape, traced.final_var)?;
    let value = tape.value(out).item()?;
    let grads = net.collect_grads(&vars, &tape.backward(out)?);
    Ok(LossGrad {
        loss: value,
        grads,
        solve: traced.result,
    })
}

/// Loss value after replaying a frozen step schedule; the finite-difference
/// counterpart of [`solve_loss_grad`] for adaptive solves.
pub fn solve_loss_on_schedule<L>(
    net: &Mlp,
    z0: &Array,
    cfg: &SolverConfig,
    schedule: &[(f64, f64)],
    loss: L,
) -> Result<f64>
where
    L: Fn(&Array) -> Result<f64>,
{
    let r = replay_schedule(&MlpField(net), cfg.method, z0, schedule)?;
    loss(&r.final_state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveGradCheck {
    /// `max |analytic − numeric| / (|numeric| + 1e-12)` over parameters.
    pub max_rel_err: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub steps: usize,
    pub nfe: usize,
}

/// Sum-of-squares loss on the final state: tape gradient through the solve
/// against central differences replayed on the solve's own step schedule.
pub fn solve_grad_check(
    net: &Mlp,
    z0: &Array,
    t0: f64,
    t_end: f64,
    cfg: &SolverConfig,
    eps: f64,
) -> Result<SolveGradCheck> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(crate::error::Error::Config(format!(
            "eps = {eps} must lie in (0, 1e-2]"
        )));
    }
    let g = solve_loss_grad(net, z0, t0, t_end, cfg, |tape, z| {
        let sq = tape.square(z);
        Ok(tape.sum(sq))
    })?;
    let schedule = g.solve.schedule();
    let base = net.params();
    let value_at = |p: &[f64]| -> Result<f64> {
        let mut probe = net.clone();
        probe.set_params(p)?;
        solve_loss_on_schedule(&probe, z0, cfg, &schedule, |z| z.dot(z))
    };
    let mut numeric = Vec::with_capacity(base.len());
    let mut worst: f64 = 0.0;
    for (i, ad) in g.grads.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        let up = value_at(&p)?;
        p[i] = base[i] - eps;
        let down = value_at(&p)?;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((ad - fd).abs() / (fd.abs() + 1e-12));
        numeric.push(fd);
    }
    Ok(SolveGradCheck {
        max_rel_err: worst,
        analytic: g.grads,
        numeric,
        steps: schedule.len(),
        nfe: g.solve.nfe,
    })
}
