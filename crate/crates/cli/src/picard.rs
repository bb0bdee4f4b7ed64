use std::path::PathBuf;

use steer_core::ode::Dynamics;
use steer_core::picard::{
    self, empirical_contraction, exp_taylor, fixed_point_residuals, picard_sequence,
    successive_deltas, triangular_diff_stats, ContractionConfig,
};
use steer_core::report::{ChartOptions, Series};
use steer_core::{Array, Result as CoreResult, RngStream};

use crate::config::{key, KeySpec, Settings};
use crate::output::{base_metadata, push, table, write_chart, write_table};
use crate::{CliError, RunConfig};

pub const PICARD_KEYS: &[KeySpec] = &[
    key("seed", "20210607", "Random seed"),
    key("dynamics", "decay", "Right-hand side: decay (f = -x), zero, or rotation (2-D)"),
    key("z0", "1", "Initial value; a comma list for vector states"),
    key("t0", "0", "Initial time"),
    key("a", "0.4", "Grid half-width"),
    key("b", "0.2", "Shift half-width, at most a/2"),
    key("c", "1", "Box radius around z0 for random iterates"),
    key("trials", "1000", "Contraction trials"),
    key("resolution", "0.001", "Grid spacing as a fraction of a"),
    key("iterations", "8", "Length of the reported Picard sequence"),
    key("tri_b", "1", "Half-width for the triangular statistic"),
    key("tri_n", "1000000", "Draws for the triangular statistic"),
    key("tri_bins", "40", "Histogram bins"),
    key("residual_iterations", "30", "Iterations before probing the fixed point"),
    key("residual_samples", "200", "Shift draws for the fixed-point residual"),
];

fn decay(_t: f64, z: &Array) -> CoreResult<Array> {
    Ok(z.scale(-1.0))
}

fn zero(_t: f64, z: &Array) -> CoreResult<Array> {
    Ok(Array::zeros_like(z))
}

fn rotation(_t: f64, z: &Array) -> CoreResult<Array> {
    let d = z.data();
    Ok(Array::vector(vec![-d[1], d[0]]))
}

pub fn run_picard(s: &Settings, rc: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let z0 = Array::vector(s.get_f64_list("z0")?);
    if z0.is_empty() {
        return Err(CliError::Config("key `z0`: needs at least one value".into()));
    }
    let name = s.get_str("dynamics");
    let f: &dyn Dynamics = match name {
        "decay" => &decay,
        "zero" => &zero,
        "rotation" if z0.len() == 2 => &rotation,
        "rotation" => {
            return Err(CliError::Config("key `z0`: rotation needs two components".into()))
        }
        other => {
            return Err(CliError::Config(format!(
                "key `dynamics`: unknown right-hand side `{other}`"
            )))
        }
    };
    let cfg = ContractionConfig {
        t0: s.get_f64("t0")?,
        a: s.get_f64("a")?,
        b: s.get_f64("b")?,
        c: s.get_f64("c")?,
        n_trials: s.get_usize("trials")?,
        resolution: s.get_f64("resolution")?,
    };
    if !(cfg.b >= 0.0 && cfg.b <= cfg.a / 2.0) {
        return Err(CliError::Config(format!(
            "key `b`: {} must lie in [0, a/2] with a = {}",
            cfg.b, cfg.a
        )));
    }
    let root = RngStream::new(rc.seed, 0);
    let meta = base_metadata(rc, s.metadata());
    let mut files = Vec::new();

    let report = empirical_contraction(f, &z0, &cfg, &root.split(0))?;
    let mut m = meta.clone();
    m.push("mean_ratio", report.mean_ratio);
    m.push("standard_error", report.standard_error());
    m.push("bound", report.bound);
    m.push("within_bound_3se", report.within_bound(3.0));
    m.push("skipped_trials", report.skipped);
    m.push("estimated_lipschitz", report.constants.lipschitz);
    m.push("estimated_bound_m", report.constants.bound);
    m.push("hypotheses_hold", report.hypotheses_hold());
    if report.beyond_hypotheses {
        m.push("note", "vector state: beyond stated hypotheses");
    }
    let mut t = table(&m, &["trial", "delta_before", "delta_after", "ratio"]);
    for (i, tr) in report.trials.iter().enumerate() {
        push(
            &mut t,
            vec![i.into(), tr.delta_before.into(), tr.delta_after.into(), tr.ratio().into()],
        )?;
    }
    files.push(write_table(rc, "contraction.csv", &t)?);

    let iterations = s.get_usize("iterations")?;
    let seq = picard_sequence(
        f,
        &z0,
        cfg.t0,
        cfg.a,
        cfg.b,
        iterations,
        cfg.resolution,
        &mut root.split(1),
    )?;
    let deltas = successive_deltas(&seq)?;
    let taylor = name == "decay" && z0.len() == 1;
    let mut t = table(&meta, &["k", "delta_to_previous", "max_abs_err_vs_taylor"]);
    for (k, it) in seq.iter().enumerate() {
        let err = if taylor {
            let scale = z0.data()[0];
            it.grid
                .iter()
                .zip(&it.values)
                .map(|(tt, v)| (v - scale * exp_taylor(tt - cfg.t0, k)).abs())
                .fold(0.0, f64::max)
        } else {
            f64::NAN
        };
        let d = if k == 0 { f64::NAN } else { deltas[k - 1] };
        push(&mut t, vec![k.into(), d.into(), err.into()])?;
    }
    files.push(write_table(rc, "sequence.csv", &t)?);
    if !deltas.is_empty() {
        let series = [Series::new(
            "delta(phi_k, phi_k-1)",
            deltas.iter().enumerate().map(|(k, d)| ((k + 1) as f64, *d)).collect(),
        )];
        let opts = ChartOptions {
            title: "Successive iterate distances".into(),
            x_label: "k".into(),
            y_label: "delta".into(),
            log_y: true,
            ..ChartOptions::default()
        };
        files.push(write_chart(rc, "sequence.svg", &series, &opts, &meta)?);
    }

    let tri = triangular_diff_stats(
        s.get_f64("tri_b")?,
        s.get_usize("tri_n")?,
        s.get_usize("tri_bins")?,
        &mut root.split(2),
    )?;
    let mut m = meta.clone();
    m.push("mean", tri.mean);
    m.push("std", tri.std);
    m.push("mean_within_3se", tri.mean_consistent_with_zero(3.0));
    let mut t = table(&m, &["center", "density", "expected"]);
    for bin in &tri.histogram {
        push(&mut t, vec![bin.center.into(), bin.density.into(), bin.expected.into()])?;
    }
    files.push(write_table(rc, "triangular.csv", &t)?);
    if !tri.histogram.is_empty() {
        let series = [
            Series::new("sampled", tri.histogram.iter().map(|h| (h.center, h.density)).collect()),
            Series::new("(b - |y|)/b^2", tri.histogram.iter().map(|h| (h.center, h.expected)).collect()),
        ];
        let opts = ChartOptions {
            title: "Difference of two U(0, b) draws".into(),
            x_label: "y".into(),
            y_label: "density".into(),
            ..ChartOptions::default()
        };
        files.push(write_chart(rc, "triangular.svg", &series, &opts, &meta)?);
    }

    let residuals = fixed_point_residuals(
        f,
        &z0,
        &cfg,
        s.get_usize("residual_iterations")?,
        s.get_usize("residual_samples")?,
        &root.split(3),
    )?;
    let mut m = meta.clone();
    let (mean, std) = picard::mean_std(residuals.iter().copied());
    m.push("mean_residual", mean);
    m.push("std_residual", std);
    m.push("m_times_b", report.constants.bound * cfg.b);
    let mut t = table(&m, &["sample", "residual"]);
    for (i, r) in residuals.iter().enumerate() {
        push(&mut t, vec![i.into(), (*r).into()])?;
    }
    files.push(write_table(rc, "residuals.csv", &t)?);

    println!(
        "contraction: mean ratio {:.4} (SE {:.4}, bound {}), L = {:.3}, M = {:.3}{}",
        report.mean_ratio,
        report.standard_error(),
        report.bound,
        report.constants.lipschitz,
        report.constants.bound,
        if report.beyond_hypotheses { ", beyond stated hypotheses" } else { "" }
    );
    println!("triangular: mean {:.3e}, std {:.6}", tri.mean, tri.std);
    Ok(files)
}
