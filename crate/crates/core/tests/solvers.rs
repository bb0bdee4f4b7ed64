use std::cell::Cell;

use steer_core::ode::{dopri5_solve, replay_schedule, rk4_solve, solve, Method, SolverConfig};
use steer_core::{Array, Error, Result};

fn decay(_t: f64, z: &Array) -> Result<Array> {
    Ok(z.scale(-1.0))
}

// Textbook RK4 on a scalar, written out independently of the library.
fn rk4_scalar(f: impl Fn(f64, f64) -> f64, y0: f64, t0: f64, t1: f64, n: usize) -> f64 {
    let h = (t1 - t0) / n as f64;
    let mut y = y0;
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

#[test]
fn rk4_counts_four_evaluations_per_step() {
    for n in [1, 3, 10, 57] {
        let calls = Cell::new(0);
        let f = |t: f64, z: &Array| {
            calls.set(calls.get() + 1);
            Ok(z.map(|v| v * t.cos()))
        };
        let r = rk4_solve(&f, &Array::vector(vec![0.7]), 0.0, 2.0, n).unwrap();
        assert_eq!(r.nfe, 4 * n);
        assert_eq!(calls.get(), 4 * n);
        let want = rk4_scalar(|t, y| y * t.cos(), 0.7, 0.0, 2.0, n);
        assert!((r.final_state.data()[0] - want).abs() <= 1e-14, "{n}");
    }
}

#[test]
fn rk4_error_shrinks_at_fourth_order() {
    let err = |n| (rk4_solve(&decay, &Array::vector(vec![1.0]), 0.0, 1.0, n).unwrap().final_state.data()[0]
        - (-1.0f64).exp())
    .abs();
    let ratio = err(10) / err(20);
    assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
}

#[test]
fn dopri5_accounting_matches_call_counter() {
    for (rtol, atol) in [(1e-3, 1e-6), (1e-6, 1e-6), (1e-9, 1e-12)] {
        let calls = Cell::new(0);
        let f = |t: f64, z: &Array| {
            calls.set(calls.get() + 1);
            let d = z.data();
            Ok(Array::vector(vec![d[1], -d[0] + 0.1 * t]))
        };
        let cfg = SolverConfig::dopri5(rtol, atol);
        let r = dopri5_solve(&f, &Array::vector(vec![1.0, 0.0]), 0.0, 10.0, &cfg).unwrap();
        assert_eq!(r.nfe, 6 * (r.accepted + r.rejected) + 1);
        assert_eq!(r.nfe, calls.get());
        assert_eq!(r.steps.len(), r.accepted);
    }
}

#[test]
fn dopri5_reaches_exp_minus_one() {
    let cfg = SolverConfig::dopri5(1e-6, 1e-6);
    let r = solve(&decay, &Array::vector(vec![1.0]), 0.0, 1.0, &cfg).unwrap();
    assert!((r.final_state.data()[0] - (-1.0f64).exp()).abs() <= 1e-5);
}

#[test]
fn backward_integration_inverts_forward() {
    let cfg = SolverConfig::dopri5(1e-10, 1e-12);
    let z1 = solve(&decay, &Array::vector(vec![2.0]), 0.0, 1.5, &cfg).unwrap().final_state;
    let z0 = solve(&decay, &z1, 1.5, 0.0, &cfg).unwrap().final_state;
    assert!((z0.data()[0] - 2.0).abs() < 1e-8);
}

#[test]
fn stiff_decay_forces_many_steps() {
    let fast = |_t: f64, z: &Array| Ok(z.scale(-1000.0));
    let slow = decay;
    let cfg = SolverConfig::dopri5(1e-5, 1e-7);
    let a = solve(&fast, &Array::vector(vec![1.0]), 0.0, 1.0, &cfg).unwrap();
    let b = solve(&slow, &Array::vector(vec![1.0]), 0.0, 1.0, &cfg).unwrap();
    assert!(a.nfe > 20 * b.nfe, "{} vs {}", a.nfe, b.nfe);
}

#[test]
fn replaying_the_schedule_reproduces_the_solve() {
    let f = |t: f64, z: &Array| Ok(z.map(|v| (v * t).sin()));
    let cfg = SolverConfig::dopri5(1e-7, 1e-9);
    let r = solve(&f, &Array::vector(vec![0.3, -1.2]), 0.0, 3.0, &cfg).unwrap();
    let again = replay_schedule(&f, Method::Dopri5, &Array::vector(vec![0.3, -1.2]), &r.schedule()).unwrap();
    assert_eq!(again.final_state, r.final_state);
}

#[test]
fn step_budget_is_a_solver_error() {
    let cfg = SolverConfig {
        max_steps: 3,
        ..SolverConfig::dopri5(1e-12, 1e-12)
    };
    let e = solve(&decay, &Array::vector(vec![1.0]), 0.0, 10.0, &cfg).unwrap_err();
    assert!(e.is_solver_failure(), "{e}");
}

#[test]
fn invalid_tolerances_are_config_errors() {
    let cfg = SolverConfig::dopri5(-1.0, 1e-6);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}
