//! Python bindings: solvers, end-time samplers, the stiff benchmark, Picard
//! experiments and the 1-D flow.

use std::cell::RefCell;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use steer_core::cnf::{self, CnfConfig, MogSpec};
use steer_core::ode::{self, solve_grad_check, Method, SolverConfig};
use steer_core::picard::{self, empirical_contraction, triangular_diff_stats, ContractionConfig};
use steer_core::stiff::{self, TargetMode, TrainConfig, Variant};
use steer_core::{Array, EndTimeSampler, Error, Mlp, RngStream, SamplerKind};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn sampler_kind(
    kind: &str,
    b: f64,
    std: f64,
    clip_sigmas: f64,
    eps: f64,
    span: f64,
    constrained_shift: bool,
) -> PyResult<SamplerKind> {
    Ok(match kind {
        "fixed" => SamplerKind::Fixed,
        "uniform" => SamplerKind::Uniform { b },
        "gaussian" => SamplerKind::gaussian_clipped(std, clip_sigmas, span, eps, constrained_shift),
        "adaptive_grid" => SamplerKind::AdaptiveGrid { eps },
        other => return Err(PyValueError::new_err(format!("unknown sampler {other:?}"))),
    })
}

fn solver(method: &str, rtol: f64, atol: f64, steps: usize) -> PyResult<SolverConfig> {
    let m: Method = method.parse().map_err(to_py)?;
    let cfg = match m {
        Method::Rk4 => SolverConfig::rk4(steps),
        Method::Dopri5 => SolverConfig::dopri5(rtol, atol),
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Random end-time rule; `sample(n, seed)` draws `n` end times.
#[pyclass(name = "Sampler", module = "steer_py")]
struct PySampler {
    inner: EndTimeSampler,
}

#[pymethods]
impl PySampler {
    #[new]
    #[pyo3(signature = (kind, t0, t1, b=0.0, std=0.0, clip_sigmas=3.0, eps=1e-3, constrained_shift=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        t0: f64,
        t1: f64,
        b: f64,
        std: f64,
        clip_sigmas: f64,
        eps: f64,
        constrained_shift: bool,
    ) -> PyResult<Self> {
        let inner = EndTimeSampler::new(
            sampler_kind(kind, b, std, clip_sigmas, eps, t1 - t0, constrained_shift)?,
            t0,
            t1,
        )
            .with_constrained_shift(constrained_shift);
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| self.inner.sample(&mut rng).map_err(to_py)).collect()
    }

    #[getter]
    fn center(&self) -> f64 {
        self.inner.center()
    }

    fn __repr__(&self) -> String {
        format!("Sampler({:?})", self.inner)
    }
}

/// Gaussian mixture in one dimension.
#[pyclass(name = "Mixture", module = "steer_py")]
struct PyMixture {
    inner: MogSpec,
}

#[pymethods]
impl PyMixture {
    #[new]
    fn new(means: Vec<f64>, stds: Vec<f64>, weights: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: MogSpec::new(means, stds, weights).map_err(to_py)?,
        })
    }

    fn pdf(&self, x: f64) -> f64 {
        self.inner.pdf(x)
    }

    fn log_pdf(&self, x: f64) -> f64 {
        self.inner.log_pdf(x)
    }

    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| self.inner.sample(&mut rng)).collect()
    }
}

/// Integrates `dz/dt = f(t, z)` where `f` takes and returns a list of floats.
#[pyfunction]
#[pyo3(signature = (f, z0, t0, t1, method="dopri5", rtol=1e-6, atol=1e-8, steps=100))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    f: Bound<'py, PyAny>,
    z0: Vec<f64>,
    t0: f64,
    t1: f64,
    method: &str,
    rtol: f64,
    atol: f64,
    steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = solver(method, rtol, atol, steps)?;
    let failure: RefCell<Option<PyErr>> = RefCell::new(None);
    let field = |t: f64, z: &Array| -> steer_core::Result<Array> {
        let out = f
            .call1((t, z.data().to_vec()))
            .and_then(|v| v.extract::<Vec<f64>>());
        match out {
            Ok(v) if v.len() == z.len() => Ok(Array::vector(v)),
            Ok(v) => Err(Error::Contract(format!("f returned {} values for a state of {}", v.len(), z.len()))),
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                Err(Error::Contract("python callback raised".into()))
            }
        }
    };
    let r = ode::solve(&field, &Array::vector(z0), t0, t1, &cfg);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let r = r.map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("z", r.final_state.data().to_vec())?;
    d.set_item("nfe", r.nfe)?;
    d.set_item("accepted", r.accepted)?;
    d.set_item("rejected", r.rejected)?;
    d.set_item("schedule", r.schedule())?;
    Ok(d)
}

#[pyfunction]
fn stiff_solution(r: f64, t: f64) -> PyResult<f64> {
    stiff::stiff_solution(r, t).map_err(to_py)
}

/// Trains one stiff-benchmark model and returns its run record as a dict.
#[pyfunction]
#[pyo3(signature = (
    b=0.0, std=0.0, r=1000.0, variant="base", hidden=500, epochs=400, n_train=1000,
    lr=1e-3, seed=stiff::DEFAULT_SEED, target="nominal", grid_points=2001,
))]
#[allow(clippy::too_many_arguments)]
fn train_stiff<'py>(
    py: Python<'py>,
    b: f64,
    std: f64,
    r: f64,
    variant: &str,
    hidden: usize,
    epochs: usize,
    n_train: usize,
    lr: f64,
    seed: u64,
    target: &str,
    grid_points: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match (b > 0.0, std > 0.0) {
        (true, true) => return Err(PyValueError::new_err("set either b or std, not both")),
        (true, false) => "uniform",
        (false, true) => "gaussian",
        _ => "fixed",
    };
    let mut cfg = TrainConfig {
        variant: variant.parse::<Variant>().map_err(to_py)?,
        r,
        hidden,
        epochs,
        n_train,
        seed,
        grid_points,
        sampler: sampler_kind(kind, b, std, 3.0, 1e-3, 0.125, false)?,
        target: match target {
            "nominal" => TargetMode::Nominal,
            "sampled" => TargetMode::Sampled,
            other => return Err(PyValueError::new_err(format!("unknown target {other:?}"))),
        },
        ..TrainConfig::default()
    };
    cfg.adam.lr = lr;
    let out = py.detach(|| stiff::train(&cfg)).map_err(to_py)?;
    let rec = &out.record;
    let d = PyDict::new(py);
    d.set_item("seed", rec.seed)?;
    d.set_item("variant", &rec.variant)?;
    d.set_item("sampler_kind", &rec.sampler_kind)?;
    d.set_item("b", rec.b)?;
    d.set_item("std", rec.std)?;
    d.set_item("min_test_mse", rec.min_test_mse)?;
    d.set_item("final_test_mse", rec.final_test_mse)?;
    d.set_item("min_epoch", rec.min_epoch)?;
    d.set_item("total_nfe", rec.total_nfe)?;
    d.set_item("status", &rec.status)?;
    d.set_item(
        "final_prediction",
        out.best_eval.as_ref().map(|e| e.final_prediction()),
    )?;
    d.set_item("history", out.history.iter().map(|h| (h.epoch, h.train_loss, h.test_mse, h.train_nfe)).collect::<Vec<_>>())?;
    Ok(d)
}

/// Monte-Carlo contraction ratio of the randomized Picard operator on `f = -x`.
#[pyfunction]
#[pyo3(signature = (z0=1.0, a=0.4, b=0.2, c=1.0, trials=1000, seed=0))]
fn contraction<'py>(
    py: Python<'py>,
    z0: f64,
    a: f64,
    b: f64,
    c: f64,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ContractionConfig {
        a,
        b,
        c,
        n_trials: trials,
        ..ContractionConfig::default()
    };
    let decay = |_t: f64, z: &Array| Ok(z.scale(-1.0));
    let rep = empirical_contraction(&decay, &Array::vector(vec![z0]), &cfg, &RngStream::new(seed, 0))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mean_ratio", rep.mean_ratio)?;
    d.set_item("standard_error", rep.standard_error())?;
    d.set_item("bound", rep.bound)?;
    d.set_item("lipschitz", rep.constants.lipschitz)?;
    d.set_item("sup_bound", rep.constants.bound)?;
    d.set_item("hypotheses_hold", rep.hypotheses_hold())?;
    Ok(d)
}

/// Mean and std of `|d2| - |d1|` with `|di| ~ U(0, b)`.
#[pyfunction]
#[pyo3(signature = (b=1.0, n=1_000_000, seed=0))]
fn triangular_stats(b: f64, n: usize, seed: u64) -> PyResult<(f64, f64)> {
    let s = triangular_diff_stats(b, n, 20, &mut RngStream::new(seed, 0)).map_err(to_py)?;
    Ok((s.mean, s.std))
}

/// Largest gap between the `k`-th unshifted Picard iterate of `dz/dt = -z`
/// and the degree-`k` Taylor polynomial of `e^{-t}`.
#[pyfunction]
#[pyo3(signature = (k=8, a=0.4))]
fn picard_taylor_error(k: usize, a: f64) -> PyResult<f64> {
    let decay = |_t: f64, z: &Array| Ok(z.scale(-1.0));
    let seq = picard::picard_sequence(
        &decay,
        &Array::vector(vec![1.0]),
        0.0,
        a,
        0.0,
        k,
        picard::DEFAULT_RESOLUTION,
        &mut RngStream::new(0, 0),
    )
    .map_err(to_py)?;
    let last = &seq[k];
    Ok(last
        .grid
        .iter()
        .zip(&last.values)
        .map(|(t, v)| (v - picard::exp_taylor(*t, k)).abs())
        .fold(0.0, f64::max))
}

/// Gradient of a squared-norm loss through a solve of a seeded net, against
/// finite differences. Returns the largest relative error.
#[pyfunction]
#[pyo3(signature = (method="rk4", steps=4, hidden=16, seed=7, rtol=1e-6, atol=1e-8))]
fn grad_check(method: &str, steps: usize, hidden: usize, seed: u64, rtol: f64, atol: f64) -> PyResult<f64> {
    let cfg = solver(method, rtol, atol, steps)?;
    let net = Mlp::new(&[3, hidden, 2], &mut RngStream::new(seed, 0)).map_err(to_py)?;
    let c = solve_grad_check(&net, &Array::vector(vec![0.5, -0.3]), 0.0, 1.0, &cfg, 1e-6).map_err(to_py)?;
    Ok(c.max_rel_err)
}

/// Trains the 1-D flow on the default two-component mixture.
#[pyfunction]
#[pyo3(signature = (b=0.0, iterations=600, seed=cnf::DEFAULT_SEED, lr=5e-3, path_window=0.375))]
fn train_cnf<'py>(
    py: Python<'py>,
    b: f64,
    iterations: usize,
    seed: u64,
    lr: f64,
    path_window: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = CnfConfig {
        sampler: if b > 0.0 { SamplerKind::Uniform { b } } else { SamplerKind::Fixed },
        iterations,
        seed,
        ..CnfConfig::default()
    };
    cfg.adam.lr = lr;
    let (out, path) = py
        .detach(|| -> steer_core::Result<_> {
            let out = cnf::train_cnf(&cfg)?;
            let path = cnf::path_shortening(
                &out.model,
                cfg.t0,
                cfg.t1,
                path_window,
                2000,
                &cfg.solver,
                &mut RngStream::new(seed, 1),
            )?;
            Ok((out, path))
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("final_nll", out.final_nll())?;
    d.set_item("oracle_nll", out.oracle_nll)?;
    d.set_item("nfe_to_threshold", out.nfe_to_threshold)?;
    d.set_item("path_displacement", path)?;
    d.set_item("status", &out.status)?;
    d.set_item(
        "history",
        out.history.iter().map(|e| (e.epoch, e.nll, e.cumulative_nfe)).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

#[pymodule]
fn steer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", steer_core::VERSION)?;
    m.add_class::<PySampler>()?;
    m.add_class::<PyMixture>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(stiff_solution, m)?)?;
    m.add_function(wrap_pyfunction!(train_stiff, m)?)?;
    m.add_function(wrap_pyfunction!(contraction, m)?)?;
    m.add_function(wrap_pyfunction!(triangular_stats, m)?)?;
    m.add_function(wrap_pyfunction!(picard_taylor_error, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(train_cnf, m)?)?;
    Ok(())
}
