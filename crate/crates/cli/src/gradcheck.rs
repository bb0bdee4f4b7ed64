use std::path::PathBuf;

use steer_core::ode::{solve_grad_check, Method, SolverConfig};
use steer_core::{Array, Mlp, RngStream};

use crate::config::{key, KeySpec, Settings};
use crate::output::{base_metadata, push, table, write_table};
use crate::{CliError, RunConfig};

pub const GRADCHECK_KEYS: &[KeySpec] = &[
    key("seed", "20210607", "Random seed for the network weights"),
    key("method", "dopri5", "Solver: dopri5 or rk4"),
    key("steps", "4", "Steps for rk4"),
    key("hidden", "16", "Hidden units"),
    key("z0", "0.5,-0.3", "Initial state"),
    key("t0", "0", "Start time"),
    key("t1", "1", "End time"),
    key("rtol", "1e-6", "Relative tolerance"),
    key("atol", "1e-8", "Absolute tolerance"),
    key("eps", "1e-6", "Finite-difference step"),
    key("tolerance", "1e-3", "Largest accepted relative error"),
];

pub fn run_gradcheck(s: &Settings, rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let z0 = s.get_f64_list("z0")?;
    if z0.is_empty() {
        return Err(CliError::Config("key `z0`: needs at least one value".into()));
    }
    let hidden = s.get_usize("hidden")?;
    if hidden == 0 {
        return Err(CliError::Config("key `hidden`: must be positive".into()));
    }
    let method: Method = s.get_str("method").parse()?;
    let solver = match method {
        Method::Rk4 => SolverConfig::rk4(s.get_usize("steps")?),
        Method::Dopri5 => SolverConfig::dopri5(s.get_f64("rtol")?, s.get_f64("atol")?),
    };
    solver.validate()?;
    let dim = z0.len();
    let net = Mlp::new(&[dim + 1, hidden, dim], &mut RngStream::new(rc.seed, 0))?;
    let check = solve_grad_check(
        &net,
        &Array::vector(z0),
        s.get_f64("t0")?,
        s.get_f64("t1")?,
        &solver,
        s.get_f64("eps")?,
    )?;
    let tolerance = s.get_f64("tolerance")?;

    let mut m = base_metadata(rc, s.metadata());
    m.push("max_rel_err", check.max_rel_err);
    m.push("steps_taken", check.steps);
    m.push("nfe", check.nfe);
    let mut t = table(&m, &["param", "analytic", "numeric", "abs_diff"]);
    for (i, (a, n)) in check.analytic.iter().zip(&check.numeric).enumerate() {
        push(&mut t, vec![i.into(), (*a).into(), (*n).into(), (a - n).abs().into()])?;
    }
    let files = vec![write_table(rc, "gradcheck.csv", &t)?];
    println!(
        "max relative error {:.3e} over {} parameters ({} steps, {} evaluations)",
        check.max_rel_err,
        check.analytic.len(),
        check.steps,
        check.nfe
    );
    if !(check.max_rel_err <= tolerance) {
        return Err(CliError::Runtime(format!(
            "gradient mismatch: relative error {:.3e} exceeds {tolerance:e}",
            check.max_rel_err
        )));
    }
    Ok(files)
}
