//! End-to-end checks of the command-line interface: exit codes, file
//! schemas, and byte-level reproducibility.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_aoiq");

const SINGLE_CLASS: &str = r#"
n_classes = 1
period = 10.0

[[class]]
arrival = { kind = "constant", rate = 1.0 }
service = { kind = "constant", rate = 2.0 }

[solver]
epsilon = 1e-9
steps_per_period = 200

[mc]
n_paths = 40
warmup_periods = 2
sample_periods = 5
bins_per_period = 20
root_seed = 3

[validate]
path_counts = [20, 40]
mae_threshold = 0.5
"#;

const ALL_ZERO: &str = r#"
n_classes = 1
period = 10.0

[[class]]
arrival = { kind = "constant", rate = 0.0 }
service = { kind = "constant", rate = 0.0 }

[solver]
steps_per_period = 100
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

#[test]
fn solve_writes_outputs_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SINGLE_CLASS);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        let r = run(&[
            "solve",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            r.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&r.stderr)
        );
    }

    let traj = lines(&out_a.join("pss_trajectory.csv"));
    assert_eq!(
        traj[0],
        "t,class,mean_aoi,peak_aoi,service_prob,unserved_age,gap_lhs,gap_rhs"
    );
    // header + (steps + 1) * classes rows
    assert_eq!(traj.len(), 1 + 201);

    let residuals = lines(&out_a.join("residuals.csv"));
    assert_eq!(residuals[0], "iteration,residual");
    assert!(residuals.len() >= 2);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["outcome"]["converged"], true);
    assert!(manifest["outcome"]["iterations"].as_u64().unwrap() >= 1);
    assert_eq!(manifest["config"]["n_classes"], 1);

    // byte-identical reruns
    for file in ["pss_trajectory.csv", "residuals.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(out_a.join(file)).unwrap(),
            std::fs::read(out_b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn solve_reports_non_convergence_with_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &SINGLE_CLASS.replace("epsilon = 1e-9", "epsilon = 1e-14\nmax_iters = 1"),
    );
    let out = tmp.path().join("out");
    let r = run(&[
        "solve",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(3));
    // outputs still written, residual history has exactly the one iteration
    let residuals = lines(&out.join("residuals.csv"));
    assert_eq!(residuals.len(), 2);
    assert!(out.join("pss_trajectory.csv").exists());
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "n_classes = 0\nperiod = -1.0\n");
    let r = run(&["solve", config.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let r = run(&["solve", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn floquet_stable_and_unstable_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SINGLE_CLASS);
    let r = run(&["floquet", config.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("spectral radius"));
    // (2N + 1) |Q| + |Q| - 1 = 3 * 3 + 2 = 11 multipliers for one class
    let count = stdout.lines().filter(|l| l.contains("|.|")).count();
    assert_eq!(count, 11);

    let zero = tmp.path().join("zero.toml");
    std::fs::write(&zero, ALL_ZERO).unwrap();
    let r = run(&["floquet", zero.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(4));
}

#[test]
fn simulate_writes_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SINGLE_CLASS);
    let out = tmp.path().join("out");
    let r = run(&[
        "simulate",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "16",
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&r.stderr)
    );
    let est = lines(&out.join("mc_estimate.csv"));
    assert_eq!(
        est[0],
        "t,class,mean_aoi,mean_aoi_se,peak_aoi,peak_aoi_se,peak_count"
    );
    assert_eq!(est.len(), 1 + 20); // header + bins * classes
                                   // event logs are off by default
    assert!(!out.join("path_events.csv").exists());

    let out2 = tmp.path().join("out_events");
    let r = run(&[
        "simulate",
        config.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--paths",
        "2",
        "--events",
    ]);
    assert_eq!(r.status.code(), Some(0));
    let events = lines(&out2.join("path_events.csv"));
    assert_eq!(
        events[0],
        "path,event,t,class,replaced,started_service,pre_age,served_gen_time,entering"
    );
    assert!(events.len() > 1);
}

#[test]
fn overlay_marks_outage_bins() {
    let windowed = r#"
n_classes = 1
period = 10.0
t_pass = 5.0

[[class]]
arrival = { kind = "windowed_sinusoid", base = 0.2, peak = 0.5 }
service = { kind = "windowed_sinusoid", peak = 2.0 }

[solver]
epsilon = 1e-8
steps_per_period = 200

[mc]
n_paths = 20
warmup_periods = 2
sample_periods = 5
bins_per_period = 20
root_seed = 3

[validate]
path_counts = [10, 20]
mae_threshold = 10.0
"#;
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), windowed);
    let out = tmp.path().join("out");
    let r = run(&[
        "validate",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&r.stderr)
    );
    let overlay = lines(&out.join("overlay.csv"));
    let outage_flags: Vec<bool> = overlay[1..].iter().map(|l| l.ends_with("true")).collect();
    // bins with centers inside the availability window are live, the rest
    // are flagged as outage
    assert!(outage_flags.iter().any(|&b| b));
    assert!(outage_flags.iter().any(|&b| !b));
    for (row, flag) in overlay[1..].iter().zip(&outage_flags) {
        let t: f64 = row.split(',').next().unwrap().parse().unwrap();
        assert_eq!(*flag, t + 0.25 > 5.0, "bin at {t}");
    }
}

#[test]
fn validate_writes_sweep_and_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SINGLE_CLASS);
    let out = tmp.path().join("out");
    let r = run(&[
        "validate",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&r.stderr)
    );

    let mae = lines(&out.join("mae_vs_paths.csv"));
    assert_eq!(
        mae[0],
        "n_paths,mean_aoi_mae,peak_aoi_mae,relative_mean_aoi_mae,undefined_peak_bins"
    );
    assert_eq!(mae.len(), 3);
    let first: usize = mae[1].split(',').next().unwrap().parse().unwrap();
    let second: usize = mae[2].split(',').next().unwrap().parse().unwrap();
    assert!(first < second, "rows must be ordered by path count");

    let overlay = lines(&out.join("overlay.csv"));
    assert_eq!(
        overlay[0],
        "t,class,ode_mean_aoi,mc_mean_aoi,mc_mean_aoi_se,ode_peak_aoi,mc_peak_aoi,mc_peak_aoi_se,outage"
    );
    assert_eq!(overlay.len(), 1 + 20);
    // constant service never goes into outage
    assert!(overlay[1..].iter().all(|l| l.ends_with("false")));
}

#[test]
fn env_var_overrides_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SINGLE_CLASS);
    let out = tmp.path().join("from_env");
    let r = Command::new(BIN)
        .env("AOIQ_OUT", &out)
        .args(["solve", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0));
    assert!(out.join("pss_trajectory.csv").exists());
}

#[test]
fn validate_exit_5_when_threshold_unreachable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        &SINGLE_CLASS.replace("mae_threshold = 0.5", "mae_threshold = 1e-9"),
    );
    let out = tmp.path().join("out");
    let r = run(&[
        "validate",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "20",
    ]);
    assert_eq!(r.status.code(), Some(5));
    assert!(out.join("mae_vs_paths.csv").exists());
}
