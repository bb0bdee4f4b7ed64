use std::path::PathBuf;

use steer_core::report::{self, Cell, ChartOptions, CsvTable, Metadata, Series};
use steer_core::stiff::RunRecord;

use crate::{CliError, RunConfig};

pub const RUN_HEADER: [&str; 17] = RunRecord::HEADER;

pub fn record_row(r: &RunRecord) -> Vec<Cell> {
    vec![
        r.seed.into(),
        r.variant.clone().into(),
        r.r.into(),
        r.sampler_kind.clone().into(),
        r.b.into(),
        r.std.into(),
        r.hidden.into(),
        r.lr.into(),
        r.epochs.into(),
        r.rtol.into(),
        r.atol.into(),
        r.min_test_mse.into(),
        r.final_test_mse.into(),
        r.min_epoch.into(),
        r.total_nfe.into(),
        r.wall_secs.into(),
        r.status.clone().into(),
    ]
}

/// Metadata block shared by every file of one invocation.
pub fn base_metadata(rc: &RunConfig, settings_meta: Metadata) -> Metadata {
    let mut m = Metadata::new().with("subcommand", &rc.subcommand);
    m.extend(&settings_meta);
    m
}

pub fn write_table(rc: &RunConfig, name: &str, table: &CsvTable) -> Result<PathBuf, CliError> {
    let path = rc.path(name);
    table
        .write(&path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn write_chart(
    rc: &RunConfig,
    name: &str,
    series: &[Series],
    opts: &ChartOptions,
    meta: &Metadata,
) -> Result<PathBuf, CliError> {
    let path = rc.path(name);
    report::write_svg(&path, series, opts, meta.digest())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn table(meta: &Metadata, header: &[&str]) -> CsvTable {
    CsvTable::new(meta.clone(), header)
}

pub fn push(t: &mut CsvTable, row: Vec<Cell>) -> Result<(), CliError> {
    t.push(row).map_err(CliError::from)
}
