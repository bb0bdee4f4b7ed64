use std::collections::BTreeMap;
use std::path::PathBuf;

use steer_core::ode::{Method, SolverConfig};
use steer_core::report::{ChartOptions, Series};
use steer_core::steer::SamplerKind;
use steer_core::stiff::{self, EvalMode, SweepGrid, TargetMode, TrainConfig, Variant};

use crate::config::{key, KeySpec, Settings};
use crate::output::{base_metadata, push, record_row, table, write_chart, write_table, RUN_HEADER};
use crate::{CliError, RunConfig};

macro_rules! with_training_keys {
    ($($extra:expr),* $(,)?) => {
        &[
            $($extra,)*
            key("sampler", "auto", "End-time rule: auto, fixed, uniform, gaussian, adaptive_grid"),
            key("clip_sigmas", "3", "Clip Gaussian end times to this many std; the lower side stops eps above t0"),
            key("eps", "0.001", "Gap kept by the adaptive_grid rule"),
            key("constrained_shift", "false", "Centre end times at t1 - b so they never pass t1"),
            key("target", "nominal", "Loss target: nominal (label at t0 + dt) or sampled (exact y(T))"),
            key("dt", "0.125", "Snippet length"),
            key("train_start", "0", "Start of the range t0 is drawn from"),
            key("train_end", "15", "End of the range t0 is drawn from"),
            key("test_end", "25", "Test trajectory runs over [0, test_end]"),
            key("n_train", "1000", "Number of training snippets"),
            key("lr", "0.001", "Adam learning rate"),
            key("epochs", "400", "Full-batch epochs"),
            key("method", "dopri5", "Solver: dopri5 or rk4"),
            key("rtol", "1e-5", "Relative tolerance"),
            key("atol", "1e-7", "Absolute tolerance"),
            key("max_steps", "10000", "Step limit per solve"),
            key("rk4_steps", "100", "Steps per solve for rk4"),
            key("eval_mode", "closed_loop", "Test chaining: closed_loop or open_loop"),
            key("grid_points", "2001", "Dense test grid size"),
            key("record_wall_clock", "false", "Write measured wall time instead of 0"),
        ]
    };
}

pub const STIFF_KEYS: &[KeySpec] = with_training_keys!(
    key("seed", "20210607", "Random seed"),
    key("variant", "base", "base, periodic, steady7 or multi_exp(k1;k2;...)"),
    key("r", "1000", "Stiffness parameter"),
    key("b", "0", "Uniform end-time half-width"),
    key("std", "0", "Gaussian end-time standard deviation"),
    key("hidden", "500", "Hidden units"),
);

pub const SWEEP_KEYS: &[KeySpec] = with_training_keys!(
    key("seed", "20210607", "Unused by sweeps; seeds come from `seeds`"),
    key("variants", "base", "Comma list of variants"),
    key("rs", "1000", "Comma list of stiffness parameters"),
    key("bs", "0,0.124", "Comma list of uniform half-widths (0 means fixed)"),
    key("stds", "", "Comma list of Gaussian standard deviations"),
    key("hiddens", "500", "Comma list of hidden widths"),
    key("seeds", "1,2,3,4,5", "Comma list of seeds"),
);

/// `span` is the nominal integration length, used to keep Gaussian draws above t0.
pub(crate) fn sampler_from(s: &Settings, b: f64, std: f64, span: f64) -> Result<SamplerKind, CliError> {
    let clip = s.get_f64("clip_sigmas")?;
    let eps = s.get_f64("eps")?;
    let constrained = s.get_bool("constrained_shift")?;
    let gaussian = |std: f64| SamplerKind::gaussian_clipped(std, clip, span, eps, constrained);
    Ok(match s.get_str("sampler") {
        "auto" => match (b > 0.0, std > 0.0) {
            (true, true) => {
                return Err(CliError::Config(
                    "keys `b` and `std` are both set; choose one or set `sampler`".into(),
                ))
            }
            (true, false) => SamplerKind::Uniform { b },
            (false, true) => gaussian(std),
            (false, false) => SamplerKind::Fixed,
        },
        "fixed" => SamplerKind::Fixed,
        "uniform" => SamplerKind::Uniform { b },
        "gaussian" => gaussian(std),
        "adaptive_grid" => SamplerKind::AdaptiveGrid { eps },
        other => {
            return Err(CliError::Config(format!(
                "key `sampler`: unknown rule `{other}`"
            )))
        }
    })
}

fn solver_from(s: &Settings) -> Result<SolverConfig, CliError> {
    let method: Method = s.get_str("method").parse().map_err(|_| {
        CliError::Config(format!("key `method`: expected dopri5 or rk4, got `{}`", s.get_str("method")))
    })?;
    let cfg = SolverConfig {
        method,
        rtol: s.get_f64("rtol")?,
        atol: s.get_f64("atol")?,
        initial_step: None,
        max_steps: s.get_usize("max_steps")?,
        fixed_steps: s.get_usize("rk4_steps")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn base_config(s: &Settings) -> Result<TrainConfig, CliError> {
    let target = match s.get_str("target") {
        "nominal" => TargetMode::Nominal,
        "sampled" => TargetMode::Sampled,
        v => return Err(CliError::Config(format!("key `target`: expected nominal or sampled, got `{v}`"))),
    };
    let eval_mode = match s.get_str("eval_mode") {
        "closed_loop" => EvalMode::ClosedLoop,
        "open_loop" => EvalMode::OpenLoop,
        v => {
            return Err(CliError::Config(format!(
                "key `eval_mode`: expected closed_loop or open_loop, got `{v}`"
            )))
        }
    };
    let mut cfg = TrainConfig {
        dt: s.get_f64("dt")?,
        train_range: (s.get_f64("train_start")?, s.get_f64("train_end")?),
        test_range: (0.0, s.get_f64("test_end")?),
        n_train: s.get_usize("n_train")?,
        epochs: s.get_usize("epochs")?,
        constrained_shift: s.get_bool("constrained_shift")?,
        target,
        solver: solver_from(s)?,
        eval_mode,
        grid_points: s.get_usize("grid_points")?,
        record_wall_clock: s.get_bool("record_wall_clock")?,
        ..TrainConfig::default()
    };
    cfg.adam.lr = s.get_f64("lr")?;
    Ok(cfg)
}

fn parse_variant(v: &str) -> Result<Variant, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("key `variant`: unknown variant `{v}`")))
}

pub fn train_config(s: &Settings) -> Result<TrainConfig, CliError> {
    let mut cfg = base_config(s)?;
    cfg.variant = parse_variant(s.get_str("variant"))?;
    cfg.r = s.get_f64("r")?;
    cfg.hidden = s.get_usize("hidden")?;
    cfg.seed = s.get_u64("seed")?;
    cfg.sampler = sampler_from(s, s.get_f64("b")?, s.get_f64("std")?, cfg.dt)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_stiff(s: &Settings, rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let cfg = train_config(s)?;
    let outcome = stiff::train(&cfg)?;
    let meta = base_metadata(rc, s.metadata());
    let mut files = Vec::new();

    let mut run = table(&meta, &RUN_HEADER);
    push(&mut run, record_row(&outcome.record))?;
    files.push(write_table(rc, "run.csv", &run)?);

    let mut hist = table(
        &meta,
        &["epoch", "train_loss", "test_mse", "train_nfe", "mean_end_time_offset"],
    );
    for h in &outcome.history {
        push(
            &mut hist,
            vec![
                h.epoch.into(),
                h.train_loss.into(),
                h.test_mse.into(),
                h.train_nfe.into(),
                h.mean_end_time_offset.into(),
            ],
        )?;
    }
    files.push(write_table(rc, "history.csv", &hist)?);

    if let Some(ev) = &outcome.best_eval {
        let mut traj = table(&meta, &["t", "y_true", "y_pred"]);
        for &(t, yt, yp) in &ev.trajectory {
            push(&mut traj, vec![t.into(), yt.into(), yp.into()])?;
        }
        files.push(write_table(rc, "trajectory.csv", &traj)?);
        let series = [
            Series::new("true", ev.trajectory.iter().map(|p| (p.0, p.1)).collect()),
            Series::new("predicted", ev.trajectory.iter().map(|p| (p.0, p.2)).collect()),
        ];
        let opts = ChartOptions {
            title: format!("{} r = {}, {}", cfg.variant.name(), cfg.r, cfg.sampler.name()),
            x_label: "t".into(),
            y_label: "y".into(),
            ..ChartOptions::default()
        };
        files.push(write_chart(rc, "trajectory.svg", &series, &opts, &meta)?);
    }
    if !outcome.history.is_empty() {
        let mse = Series::new(
            "test MSE",
            outcome.history.iter().map(|h| (h.epoch as f64, h.test_mse)).collect(),
        );
        let opts = ChartOptions {
            title: "Test MSE per epoch".into(),
            x_label: "epoch".into(),
            y_label: "MSE".into(),
            log_y: true,
            ..ChartOptions::default()
        };
        files.push(write_chart(rc, "history.svg", &[mse], &opts, &meta)?);
        let nfe = Series::new(
            "training NFE",
            outcome.history.iter().map(|h| (h.epoch as f64, h.train_nfe as f64)).collect(),
        );
        let opts = ChartOptions {
            title: "Function evaluations per epoch".into(),
            x_label: "epoch".into(),
            y_label: "NFE".into(),
            ..ChartOptions::default()
        };
        files.push(write_chart(rc, "nfe.svg", &[nfe], &opts, &meta)?);
    }

    if outcome.record.failed() {
        return Err(CliError::Runtime(format!(
            "training stopped early ({}); partial outputs are in {}",
            outcome.record.status,
            rc.out_dir.display()
        )));
    }
    Ok(files)
}

pub fn sweep_grid(s: &Settings) -> Result<SweepGrid, CliError> {
    let variants = s
        .get_str("variants")
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(parse_variant)
        .collect::<Result<Vec<_>, _>>()?;
    let mut samplers = Vec::new();
    for b in s.get_f64_list("bs")? {
        samplers.push(if b == 0.0 {
            SamplerKind::Fixed
        } else {
            sampler_from(s, b, 0.0, s.get_f64("dt")?)?
        });
    }
    for std in s.get_f64_list("stds")? {
        samplers.push(if std == 0.0 {
            SamplerKind::Fixed
        } else {
            sampler_from(s, 0.0, std, s.get_f64("dt")?)?
        });
    }
    let grid = SweepGrid {
        variants,
        rs: s.get_f64_list("rs")?,
        samplers,
        hiddens: s.get_usize_list("hiddens")?,
        seeds: s.get_u64_list("seeds")?,
    };
    if grid.is_empty() {
        return Err(CliError::Config(
            "sweep grid is empty: variants, rs, bs or stds, hiddens and seeds all need values".into(),
        ));
    }
    Ok(grid)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn run_sweep(s: &Settings, rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let grid = sweep_grid(s)?;
    let base = base_config(s)?;
    for cell in grid.cells(&base) {
        cell.validate()?;
    }
    let records = stiff::sweep(&grid, &base, rc.workers)?;
    let meta = base_metadata(rc, s.metadata());
    let mut files = Vec::new();

    let mut all = table(&meta, &RUN_HEADER);
    for r in &records {
        push(&mut all, record_row(r))?;
    }
    files.push(write_table(rc, "sweep.csv", &all)?);

    // medians over seeds, keyed by everything except the seed
    let mut groups: BTreeMap<(String, String, String, String, String, usize), Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in records.iter().filter(|r| !r.failed()) {
        let k = (
            r.variant.clone(),
            output_key(r.r),
            r.sampler_kind.clone(),
            output_key(r.b),
            output_key(r.std),
            r.hidden,
        );
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(r.min_test_mse);
    }
    let mut summary = table(
        &meta,
        &["variant", "r", "sampler_kind", "b", "std", "hidden", "runs", "median_min_test_mse"],
    );
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for k in &order {
        let mut v = groups[k].clone();
        let runs = v.len();
        let med = median(&mut v);
        let (b, std) = (k.3.parse::<f64>().unwrap_or(0.0), k.4.parse::<f64>().unwrap_or(0.0));
        push(
            &mut summary,
            vec![
                k.0.clone().into(),
                k.1.parse::<f64>().unwrap_or(f64::NAN).into(),
                k.2.clone().into(),
                b.into(),
                std.into(),
                k.5.into(),
                runs.into(),
                med.into(),
            ],
        )?;
        let family = if k.2 == "gaussian" { "std" } else { "b" };
        let label = format!("{} r={} h={} {family}", k.0, k.1, k.5);
        series.entry(label).or_default().push((b.max(std), med));
    }
    files.push(write_table(rc, "sweep_summary.csv", &summary)?);
    let series: Vec<Series> = series
        .into_iter()
        .map(|(label, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series::new(&label, pts)
        })
        .collect();
    if series.iter().any(|s| !s.points.is_empty()) {
        let opts = ChartOptions {
            title: "Median minimum test MSE".into(),
            x_label: "b or std".into(),
            y_label: "MSE".into(),
            log_y: true,
            ..ChartOptions::default()
        };
        files.push(write_chart(rc, "sweep.svg", &series, &opts, &meta)?);
    }
    let failed = records.iter().filter(|r| r.failed()).count();
    if failed == records.len() {
        return Err(CliError::Runtime(format!(
            "all {failed} sweep cells failed; see the status column of {}",
            rc.path("sweep.csv").display()
        )));
    }
    if failed > 0 {
        eprintln!("{failed} of {} sweep cells failed; see the status column", records.len());
    }
    Ok(files)
}

fn output_key(v: f64) -> String {
    format!("{v}")
}
