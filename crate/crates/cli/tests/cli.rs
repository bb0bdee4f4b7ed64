use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("steer-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn steer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steer"))
        .args(args)
        .env_remove("STEER_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_STIFF: &[&str] = &["--epochs", "3", "--n-train", "40", "--hidden", "12", "--grid-points", "201"];
const TINY_SWEEP: &[&str] = &["--epochs", "3", "--n-train", "40", "--hiddens", "12", "--grid-points", "201"];
const TINY_CNF: &[&str] = &[
    "--iterations", "10", "--pool-size", "300", "--batch-size", "32", "--eval-every", "5",
    "--eval-points", "61", "--path-samples", "50", "--n-traj", "4", "--density-points", "61",
];
const TINY_PICARD: &[&str] = &["--trials", "100", "--tri-n", "10000", "--residual-samples", "10"];

fn run_in(dir: &Path, sub: &str, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    steer(&args)
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "svg"))
        .collect();
    v.sort();
    v
}

#[test]
fn stiff_happy_path_writes_record_and_trajectory() {
    let dir = scratch("stiff");
    let mut extra = TINY_STIFF.to_vec();
    extra.extend(["--b", "0.124"]);
    let o = run_in(&dir, "stiff", &extra);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = std::fs::read_to_string(dir.join("run.csv")).unwrap();
    assert!(run.starts_with("# steer "));
    let header = run.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with(
        "seed,variant,r,sampler_kind,b,std,hidden,lr,epochs,rtol,atol,min_test_mse,final_test_mse,min_epoch,total_nfe,wall_secs"
    ));
    assert!(run.contains("\n20210607,base,"));
    let traj = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(traj.lines().any(|l| l == "t,y_true,y_pred"));
    assert_eq!(traj.lines().filter(|l| !l.starts_with('#')).count(), 202);
    assert!(!run.contains('\r'));
}

#[test]
fn end_time_bound_violation_exits_with_one() {
    let dir = scratch("bound");
    let o = run_in(&dir, "stiff", &["--b", "0.2"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("b = 0.2 violates the end-time bound"), "{msg}");
    assert!(msg.contains("0.125"), "{msg}");
}

#[test]
fn unknown_flag_and_unknown_config_key_are_config_errors() {
    assert_eq!(steer(&["stiff", "--hiden", "3"]).status.code(), Some(1));
    assert_eq!(steer(&["nosuch"]).status.code(), Some(1));
    let dir = scratch("badkey");
    let cfg = dir.join("run.conf");
    std::fs::write(&cfg, "b = 0.1\nhiden = 20\n").unwrap();
    let o = run_in(&dir, "stiff", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("run.conf:2"), "{msg}");
    assert!(msg.contains("did you mean `hidden`"), "{msg}");
}

#[test]
fn help_and_version_succeed() {
    let o = steer(&["--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("cnf1d"));
    assert!(steer(&["--version"]).status.success());
    assert!(steer(&["picard", "--help"]).status.success());
}

#[test]
fn flags_override_config_file() {
    let dir = scratch("layers");
    let cfg = dir.join("c.conf");
    std::fs::write(&cfg, "# tiny run\nepochs = 2\nn_train = 30\nhidden = 9\ngrid_points = 101\nlr = 0.01\n").unwrap();
    let o = run_in(&dir, "stiff", &["-c", cfg.to_str().unwrap(), "--hidden", "7", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = std::fs::read_to_string(dir.join("run.csv")).unwrap();
    assert!(run.contains("# hidden = 7\n"));
    assert!(run.contains("# lr = 0.01\n"));
    assert!(run.contains("# seed = 3\n"));
    assert!(run.contains("\n3,base,"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = scratch("env");
    let o = Command::new(env!("CARGO_BIN_EXE_steer"))
        .args(["gradcheck", "--method", "rk4"])
        .env("STEER_OUT_DIR", &dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("gradcheck.csv").exists());
}

#[test]
fn gradient_mismatch_beyond_tolerance_is_a_runtime_failure() {
    let dir = scratch("gradfail");
    let o = run_in(&dir, "gradcheck", &["--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn every_subcommand_is_byte_deterministic() {
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("stiff", TINY_STIFF.to_vec()),
        ("picard", TINY_PICARD.to_vec()),
        ("cnf1d", [TINY_CNF, &["--b", "0.375"]].concat()),
        ("gradcheck", vec![]),
        (
            "sweep",
            [TINY_SWEEP, &["--bs", "0,0.05", "--seeds", "1,2", "--workers", "2"]].concat(),
        ),
    ];
    for (sub, extra) in cases {
        let a = scratch(&format!("det-a-{sub}"));
        let b = scratch(&format!("det-b-{sub}"));
        let oa = run_in(&a, sub, &extra);
        assert!(oa.status.success(), "{sub}: {}", stderr(&oa));
        assert!(run_in(&b, sub, &extra).status.success());
        let fa = csv_files(&a);
        assert!(!fa.is_empty(), "{sub}");
        for f in fa {
            let g = b.join(f.file_name().unwrap());
            assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(&g).unwrap(), "{}", f.display());
        }
    }
}

#[test]
fn different_seeds_give_different_results() {
    let a = scratch("seed-a");
    let b = scratch("seed-b");
    assert!(run_in(&a, "picard", &[TINY_PICARD, &["--seed", "1"]].concat()).status.success());
    assert!(run_in(&b, "picard", &[TINY_PICARD, &["--seed", "2"]].concat()).status.success());
    assert_ne!(
        std::fs::read(a.join("contraction.csv")).unwrap(),
        std::fs::read(b.join("contraction.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_one_row_per_cell_and_survives_failures() {
    let dir = scratch("sweep");
    let starved = ["--max-steps", "2", "--rtol", "1e-12", "--atol", "1e-12"];
    let extra = [TINY_SWEEP, &["--bs", "0", "--seeds", "1,2,3"], &starved].concat();
    let o = run_in(&dir, "sweep", &extra);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.contains("step limit")));

    let ok = scratch("sweep-ok");
    let o = run_in(&ok, "sweep", &[TINY_SWEEP, &["--bs", "0", "--seeds", "1,2,3"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(ok.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn cnf_summary_and_density_files() {
    let dir = scratch("cnf");
    let o = run_in(&dir, "cnf1d", TINY_CNF);
    assert!(o.status.success(), "{}", stderr(&o));
    let hist = std::fs::read_to_string(dir.join("nll_history.csv")).unwrap();
    assert!(hist.lines().any(|l| l == "epoch,nll,cumulative_nfe,t_end_mean"));
    assert_eq!(hist.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let traj = std::fs::read_to_string(dir.join("trajectories.csv")).unwrap();
    assert!(traj.lines().any(|l| l == "sample_id,t,z"));
    assert_eq!(traj.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4 * 21);
    let svg = std::fs::read_to_string(dir.join("density.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("config "));
}

#[test]
fn picard_rejects_shift_beyond_half_width() {
    let dir = scratch("picard-b");
    let o = run_in(&dir, "picard", &["--b", "0.3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("a/2"));
}
