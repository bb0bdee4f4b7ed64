use std::path::PathBuf;

use steer_core::cnf::{
    density_mass, export_trajectories, linspace, log_likelihood_batch, path_shortening, train_cnf,
    CnfConfig, MogSpec,
};
use steer_core::ode::SolverConfig;
use steer_core::report::{ChartOptions, Series};
use steer_core::RngStream;

use crate::config::{key, KeySpec, Settings};
use crate::output::{base_metadata, push, table, write_chart, write_table};
use crate::stiff::sampler_from;
use crate::{CliError, RunConfig};

pub const CNF_KEYS: &[KeySpec] = &[
    key("seed", "20210607", "Random seed"),
    key("sampler", "auto", "End-time rule: auto, fixed, uniform, gaussian, adaptive_grid"),
    key("b", "0", "Uniform end-time half-width"),
    key("std", "0", "Gaussian end-time standard deviation"),
    key("clip_sigmas", "3", "Clip Gaussian end times to this many std; the lower side stops eps above t0"),
    key("eps", "0.001", "Gap kept by the adaptive_grid rule"),
    key("constrained_shift", "true", "Centre end times at t1 - b so they never pass t1"),
    key("hidden", "32,32", "Hidden widths"),
    key("iterations", "600", "Optimizer steps"),
    key("batch_size", "256", "Minibatch size"),
    key("pool_size", "10000", "Training samples drawn once from the mixture"),
    key("lr", "0.005", "Adam learning rate"),
    key("rtol", "1e-5", "Relative tolerance"),
    key("atol", "1e-5", "Absolute tolerance"),
    key("max_steps", "10000", "Step limit per solve"),
    key("eval_every", "20", "Iterations between NLL evaluations"),
    key("eval_points", "401", "Quadrature points for the NLL"),
    key("nll_margin", "0.15", "Nats above the oracle NLL that count as converged"),
    key("mog_means", "-2,2", "Mixture means"),
    key("mog_stds", "0.5,0.5", "Mixture standard deviations"),
    key("mog_weights", "0.5,0.5", "Mixture weights"),
    key("t0", "0", "Base time"),
    key("t1", "1", "Data time"),
    key("n_traj", "50", "Trajectories exported"),
    key("n_checkpoints", "21", "Time points per trajectory"),
    key("path_window", "0.375", "Window before t1 for the displacement statistic"),
    key("path_samples", "2000", "Base samples for the displacement statistic"),
    key("density_points", "401", "Grid size of density.csv"),
    key("record_wall_clock", "false", "Write measured wall time instead of 0"),
];

pub fn cnf_config(s: &Settings, seed: u64) -> Result<CnfConfig, CliError> {
    let mut cfg = CnfConfig {
        mog: MogSpec::new(
            s.get_f64_list("mog_means")?,
            s.get_f64_list("mog_stds")?,
            s.get_f64_list("mog_weights")?,
        )?,
        hidden: s.get_usize_list("hidden")?,
        sampler: sampler_from(
            s,
            s.get_f64("b")?,
            s.get_f64("std")?,
            s.get_f64("t1")? - s.get_f64("t0")?,
        )?,
        constrained_shift: s.get_bool("constrained_shift")?,
        t0: s.get_f64("t0")?,
        t1: s.get_f64("t1")?,
        solver: SolverConfig {
            max_steps: s.get_usize("max_steps")?,
            ..SolverConfig::dopri5(s.get_f64("rtol")?, s.get_f64("atol")?)
        },
        iterations: s.get_usize("iterations")?,
        batch_size: s.get_usize("batch_size")?,
        pool_size: s.get_usize("pool_size")?,
        eval_every: s.get_usize("eval_every")?,
        eval_points: s.get_usize("eval_points")?,
        nll_margin: s.get_f64("nll_margin")?,
        seed,
        record_wall_clock: s.get_bool("record_wall_clock")?,
        ..CnfConfig::default()
    };
    cfg.adam.lr = s.get_f64("lr")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_cnf(s: &Settings, rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let cfg = cnf_config(s, rc.seed)?;
    let window = s.get_f64("path_window")?;
    if !(window > 0.0 && window <= cfg.t1 - cfg.t0) {
        return Err(CliError::Config(format!(
            "key `path_window`: {window} must lie in (0, t1 - t0]"
        )));
    }
    let n_traj = s.get_usize("n_traj")?;
    let n_checkpoints = s.get_usize("n_checkpoints")?;
    let path_samples = s.get_usize("path_samples")?;
    let density_points = s.get_usize("density_points")?;
    if n_traj == 0 || n_checkpoints < 2 || path_samples == 0 || density_points < 2 {
        return Err(CliError::Config(
            "n_traj and path_samples must be positive, n_checkpoints and density_points at least 2"
                .into(),
        ));
    }
    let meta = base_metadata(rc, s.metadata());
    let mut files = Vec::new();

    let out = train_cnf(&cfg)?;
    let root = RngStream::new(rc.seed, 1);
    let path = if out.status == "ok" {
        path_shortening(&out.model, cfg.t0, cfg.t1, window, path_samples, &cfg.solver, &mut root.split(0))?
    } else {
        f64::NAN
    };

    let mut t = table(&meta, &["epoch", "nll", "cumulative_nfe", "t_end_mean"]);
    for e in &out.history {
        push(&mut t, vec![e.epoch.into(), e.nll.into(), e.cumulative_nfe.into(), e.t_end_mean.into()])?;
    }
    files.push(write_table(rc, "nll_history.csv", &t)?);

    let mut t = table(
        &meta,
        &[
            "seed", "sampler", "b", "final_nll", "oracle_nll", "nfe_to_threshold", "total_nfe",
            "path_displacement", "wall_secs", "status",
        ],
    );
    let total_nfe = out.history.last().map_or(0, |e| e.cumulative_nfe);
    push(
        &mut t,
        vec![
            rc.seed.into(),
            cfg.sampler.name().into(),
            cfg.b().into(),
            out.final_nll().into(),
            out.oracle_nll.into(),
            out.nfe_to_threshold.map_or(String::new(), |n| n.to_string()).into(),
            total_nfe.into(),
            path.into(),
            out.wall_secs.into(),
            out.status.clone().into(),
        ],
    )?;
    files.push(write_table(rc, "summary.csv", &t)?);

    if out.status != "ok" {
        return Err(CliError::Runtime(format!(
            "training stopped early ({}); partial results are in {}",
            out.status,
            rc.out_dir.display()
        )));
    }

    let mut rng = root.split(1);
    let starts: Vec<f64> = (0..n_traj).map(|_| rng.standard_normal()).collect();
    let checkpoints = linspace(cfg.t0, cfg.t1, n_checkpoints);
    let rows = export_trajectories(&out.model, &starts, cfg.t0, &checkpoints, &cfg.solver)?;
    let mut t = table(&meta, &["sample_id", "t", "z"]);
    for (id, tt, z) in &rows {
        push(&mut t, vec![(*id).into(), (*tt).into(), (*z).into()])?;
    }
    files.push(write_table(rc, "trajectories.csv", &t)?);

    let (lo, hi) = cfg.mog.support(6.0);
    let xs = linspace(lo, hi, density_points);
    let (logq, _) = log_likelihood_batch(&out.model, &xs, cfg.t0, cfg.t1, &cfg.solver)?;
    let mass = density_mass(&out.model, cfg.t0, cfg.t1, &cfg.solver, (lo, hi), density_points)?;
    let mut m = meta.clone();
    m.push("model_mass", mass);
    let mut t = table(&m, &["x", "model_density", "target_density"]);
    for (x, lq) in xs.iter().zip(&logq) {
        push(&mut t, vec![(*x).into(), lq.exp().into(), cfg.mog.pdf(*x).into()])?;
    }
    files.push(write_table(rc, "density.csv", &t)?);

    let series = [
        Series::new("model", xs.iter().zip(&logq).map(|(x, l)| (*x, l.exp())).collect()),
        Series::new("target", xs.iter().map(|x| (*x, cfg.mog.pdf(*x))).collect()),
    ];
    let opts = ChartOptions {
        title: "Learned density".into(),
        x_label: "x".into(),
        y_label: "density".into(),
        ..ChartOptions::default()
    };
    files.push(write_chart(rc, "density.svg", &series, &opts, &meta)?);

    let series = [
        Series::new("NLL", out.history.iter().map(|e| (e.epoch as f64, e.nll)).collect()),
        Series::new(
            "oracle",
            out.history.iter().map(|e| (e.epoch as f64, out.oracle_nll)).collect(),
        ),
    ];
    let opts = ChartOptions {
        title: "Negative log-likelihood".into(),
        x_label: "iteration".into(),
        y_label: "nats".into(),
        ..ChartOptions::default()
    };
    files.push(write_chart(rc, "nll_history.svg", &series, &opts, &meta)?);

    let series: Vec<Series> = (0..n_traj)
        .map(|i| {
            Series::new(
                &format!("z{i}"),
                rows.iter().filter(|r| r.0 == i).map(|r| (r.1, r.2)).collect(),
            )
        })
        .collect();
    let opts = ChartOptions {
        title: "Trajectories from the base distribution".into(),
        x_label: "t".into(),
        y_label: "z".into(),
        ..ChartOptions::default()
    };
    files.push(write_chart(rc, "trajectories.svg", &series, &opts, &meta)?);

    println!(
        "final NLL {:.4} (oracle {:.4}), displacement over last {window}: {path:.4}, NFE to threshold: {}",
        out.final_nll(),
        out.oracle_nll,
        out.nfe_to_threshold.map_or("not reached".to_string(), |n| n.to_string())
    );
    Ok(files)
}
