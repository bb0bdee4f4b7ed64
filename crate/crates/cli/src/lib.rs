//! Command-line driver for the experiments in `steer-core`.
//!
//! Every subcommand reads a flat `key = value` file (`--config`), applies
//! per-key flags on top and writes CSV/SVG files into the output directory.
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

pub mod config;
mod cnf;
mod gradcheck;
mod output;
mod picard;
mod stiff;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{KeySpec, Settings};

pub use output::{record_row, RUN_HEADER};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "STEER_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "steer-out";
/// Seed used when neither the config file nor `--seed` sets one.
pub const DEFAULT_SEED: u64 = steer_core::stiff::DEFAULT_SEED;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<steer_core::Error> for CliError {
    fn from(e: steer_core::Error) -> Self {
        match e {
            steer_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl RunConfig {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

type Runner = fn(&Settings, &RunConfig) -> Result<Vec<PathBuf>, CliError>;

struct Subcommand {
    name: &'static str,
    about: &'static str,
    keys: &'static [KeySpec],
    run: Runner,
}

const SUBCOMMANDS: &[Subcommand] = &[
    Subcommand {
        name: "stiff",
        about: "Train one model on the stiff benchmark",
        keys: stiff::STIFF_KEYS,
        run: stiff::run_stiff,
    },
    Subcommand {
        name: "sweep",
        about: "Run a grid of stiff-benchmark trainings",
        keys: stiff::SWEEP_KEYS,
        run: stiff::run_sweep,
    },
    Subcommand {
        name: "picard",
        about: "Randomized Picard iteration experiments",
        keys: picard::PICARD_KEYS,
        run: picard::run_picard,
    },
    Subcommand {
        name: "cnf1d",
        about: "Train a one-dimensional continuous normalizing flow",
        keys: cnf::CNF_KEYS,
        run: cnf::run_cnf,
    },
    Subcommand {
        name: "gradcheck",
        about: "Compare solver gradients with finite differences",
        keys: gradcheck::GRADCHECK_KEYS,
        run: gradcheck::run_gradcheck,
    },
];

fn flag_name(key: &str) -> &'static str {
    Box::leak(key.replace('_', "-").into_boxed_str())
}

fn build_cli() -> Command {
    let mut cmd = Command::new("steer")
        .version(steer_core::VERSION)
        .about("Neural ODE experiments with stochastic end-time regularization")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in SUBCOMMANDS {
        let mut c = Command::new(sub.name)
            .about(sub.about)
            .arg(
                Arg::new("config")
                    .long("config")
                    .short('c')
                    .value_name("PATH")
                    .help("key = value file applied before flags"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .short('o')
                    .value_name("DIR")
                    .help(format!("Output directory [default: ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR}]")),
            )
            .arg(
                Arg::new("workers")
                    .long("workers")
                    .value_name("N")
                    .value_parser(clap::value_parser!(usize))
                    .default_value("1")
                    .help("Worker threads for independent runs"),
            );
        for k in sub.keys {
            let flag = flag_name(k.name);
            let mut a = Arg::new(k.name)
                .long(flag)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .allow_hyphen_values(true)
                .help(format!("{} [default: {}]", k.help, k.default));
            if flag != k.name {
                a = a.alias(k.name);
            }
            c = c.arg(a);
        }
        cmd = cmd.subcommand(c);
    }
    cmd
}

fn effective_settings(sub: &Subcommand, m: &ArgMatches) -> Result<(Settings, RunConfig), CliError> {
    let config = m.get_one::<String>("config").map(PathBuf::from);
    let mut settings = match &config {
        Some(p) => config::load_config(p, sub.keys)?,
        None => Settings::new(sub.keys),
    };
    for k in sub.keys {
        if let Some(v) = m.get_one::<String>(k.name) {
            settings.set(k.name, v)?;
        }
    }
    let out_dir = m
        .get_one::<String>("out")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let workers = *m.get_one::<usize>("workers").unwrap_or(&1);
    if workers == 0 {
        return Err(CliError::Config("key `workers`: must be at least 1".into()));
    }
    let seed = settings.get_u64("seed")?;
    Ok((
        settings,
        RunConfig {
            subcommand: sub.name.to_string(),
            config,
            seed,
            out_dir,
            workers,
        },
    ))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Runtime(format!("cannot create output directory {}: {e}", dir.display()))
    })
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the files written.
pub fn try_run<I, T>(args: I) -> Result<Vec<PathBuf>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = build_cli()
        .try_get_matches_from(args)
        .map_err(|e| {
            let msg = e.to_string();
            CliError::Config(msg.trim_start_matches("error: ").trim_end().to_string())
        })?;
    let (name, sub_m) = matches
        .subcommand()
        .ok_or_else(|| CliError::Config("no subcommand given".into()))?;
    let sub = SUBCOMMANDS
        .iter()
        .find(|s| s.name == name)
        .expect("clap only accepts declared subcommands");
    let (settings, rc) = effective_settings(sub, sub_m)?;
    ensure_dir(&rc.out_dir)?;
    (sub.run)(&settings, &rc)
}

/// Entry point for the binary; prints errors and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    // help and version requests print through clap and succeed
    if let Err(e) = build_cli().try_get_matches_from(args.clone()) {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            let _ = e.print();
            return 0;
        }
        if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
            let _ = e.print();
            return 1;
        }
    }
    match try_run(args) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
