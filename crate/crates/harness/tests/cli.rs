use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gk_core::Scheme;
use gk_harness::config::{parse_config, parse_config_as, ExperimentKind, ResponseSpec};
use gk_harness::run::{run_experiment, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PASS};
use tempfile::TempDir;

const MINIMAL: &str = r#"
experiment = "simulate"

[response]
kind = "linear"

[ensemble]
N = 3
kappa = 1.0
theta0 = [0.0, 0.1, 0.2]
nu = [-0.1, 0.0, 0.1]

[run]
t_end = 1.0
"#;

fn gk(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gk"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("gk runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn data_lines(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn minimal_config_gets_defaults() {
    let c = parse_config(MINIMAL).unwrap();
    assert_eq!(c.kind, ExperimentKind::Simulate);
    assert_eq!(c.response, ResponseSpec::Linear);
    let run = c.run.unwrap();
    assert_eq!(run.dt, 1e-3);
    assert_eq!(run.scheme, Scheme::Rk4);
    assert_eq!(run.stride, 1);
    assert_eq!(c.ensemble.unwrap().n, 3);
    assert_eq!(c.hash.len(), 64);
}

#[test]
fn relativistic_without_c_names_response_c() {
    let text = MINIMAL.replace("kind = \"linear\"", "kind = \"relativistic\"");
    let e = parse_config(&text).unwrap_err();
    assert_eq!(e.0.len(), 1, "{e}");
    assert_eq!(e.0[0].path, "response.c");
    assert!(e.to_string().contains("response.c"));
}

#[test]
fn duplicate_key_reports_both_lines() {
    let text = MINIMAL.replace("N = 3\n", "N = 3\nN = 3\n");
    let e = parse_config(&text).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("duplicate"), "{msg}");
    assert!(msg.contains("line 8") && msg.contains("line 9"), "{msg}");
    assert!(msg.contains("ensemble.N"), "{msg}");
}

#[test]
fn all_violations_are_collected_with_lines() {
    let text = MINIMAL
        .replace("kappa = 1.0", "kappa = \"strong\"")
        .replace("t_end = 1.0", "t_end = 1.0\ncolour = 3")
        .replace("nu = [-0.1, 0.0, 0.1]", "nu = [-0.1, 0.0]");
    let e = parse_config(&text).unwrap_err();
    let paths: Vec<&str> = e.0.iter().map(|v| v.path.as_str()).collect();
    assert_eq!(paths, vec!["ensemble.kappa", "ensemble.nu", "run.colour"], "{e}");
    assert_eq!(e.0.iter().map(|v| v.line).collect::<Vec<_>>(), vec![9, 11, 15]);
    assert!(e.0[0].message.contains("expected number, found string"));
    assert!(e.0[2].message.contains("unknown key"));
}

#[test]
fn kind_must_match_the_subcommand() {
    assert!(parse_config_as(MINIMAL, Some(ExperimentKind::Simulate)).is_ok());
    let e = parse_config_as(MINIMAL, Some(ExperimentKind::Stability)).unwrap_err();
    assert!(e.0.iter().any(|v| v.path == "experiment"), "{e}");
    let without = MINIMAL.replace("experiment = \"simulate\"", "");
    assert!(parse_config(&without).is_err());
    assert_eq!(parse_config_as(&without, Some(ExperimentKind::Simulate)).unwrap().kind, ExperimentKind::Simulate);
}

#[test]
fn per_kind_requirements() {
    let text = MINIMAL.replace("\"simulate\"", "\"stability\"");
    let e = parse_config(&text).unwrap_err().to_string();
    for key in ["ensemble_tilde", "framework.theta_star", "framework.a_G", "framework.b_G"] {
        assert!(e.contains(key), "{key} missing from:\n{e}");
    }
}

#[test]
fn simulate_csv_has_two_n_plus_four_columns() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("traj.csv");
    let report = run_experiment(&parse_config(MINIMAL).unwrap(), Some(&out));
    assert_eq!(report.exit_code(), EXIT_PASS, "{report}");
    let csv = fs::read_to_string(&out).unwrap();
    let lines = data_lines(&csv);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header.len(), 2 * 3 + 4);
    assert_eq!(header[0], "time");
    assert_eq!(&header[7..], &["D_theta", "D_omega", "nu_c"]);
    assert_eq!(lines.len(), 1 + 1001);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 10));
    assert!(csv.starts_with("# gk "));
    assert!(csv.contains(&format!("# config-sha256 {}", report.config_hash)));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let text = MINIMAL
        .replace("theta0 = [0.0, 0.1, 0.2]", "theta0 = { generator = \"uniform\", lo = 0.0, hi = 0.5, seed = 9 }")
        .replace("N = 3", "N = 6")
        .replace("nu = [-0.1, 0.0, 0.1]", "nu = { generator = \"uniform\", lo = -0.2, hi = 0.2, seed = 10 }\nphi = { generator = \"uniform\", lo = 0.5, hi = 1.0, seed = 11 }");
    let cfg = write(dir.path(), "sim.toml", &text);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2", "1"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}.csv"));
        let o = gk(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()], &[("GK_THREADS", threads)]);
        assert_eq!(o.status.code(), Some(EXIT_PASS), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn failing_stability_certificate_exits_two_and_names_the_inequality() {
    let dir = TempDir::new().unwrap();
    let text = r#"
[response]
kind = "linear"

[ensemble]
N = 4
kappa = 0.5
theta0 = [0.0, 0.1, 0.2, 0.3]
nu = [-0.1, 0.0, 0.05, 0.05]

[ensemble_tilde]
theta0 = [0.0, 0.1, 0.2, 0.31]

[run]
t_end = 5.0

[framework]
theta_star = 0.7853981633974483
a_G = -10.0
b_G = 10.0
"#;
    let cfg = write(dir.path(), "stab.toml", text);
    let o = gk(&["stability", "--config", &cfg, "--p", "2"], &[]);
    assert_eq!(o.status.code(), Some(EXIT_CHECK));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("[FAIL] kappa"), "{stdout}");
    assert!(stdout.contains("required >"), "{stdout}");

    let ok = write(dir.path(), "stab_ok.toml", &text.replace("kappa = 0.5", "kappa = 5.0"));
    let out = dir.path().join("stab.csv");
    let o = gk(&["stability", "--config", &ok, "--p", "inf", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(EXIT_PASS), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out).unwrap();
    assert_eq!(data_lines(&csv)[0], "time,dist_theta,dist_omega");
}

#[test]
fn exit_codes_for_config_and_numeric_errors() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.toml", &MINIMAL.replace("t_end = 1.0", "t_end = \"long\""));
    let o = gk(&["simulate", "--config", &bad], &[]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.t_end"));

    assert_eq!(gk(&["no-such-command"], &[]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(gk(&["check", "--only", "nope"], &[]).status.code(), Some(EXIT_CONFIG));

    let picard = r#"
experiment = "picard"
[response]
kind = "linear"
[continuum]
kappa = 1.0
theta0 = { kind = "linear", slope = 0.3 }
nu = 0.0
level = 3
picard_max_iter = 2
"#;
    let p = write(dir.path(), "picard.toml", picard);
    let o = gk(&["picard", "--config", &p], &[]);
    assert_eq!(o.status.code(), Some(EXIT_NUMERIC), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn picard_prints_zeta_and_ratios() {
    let dir = TempDir::new().unwrap();
    let text = r#"
experiment = "picard"
[response]
kind = "linear"
[continuum]
kappa = 1.0
theta0 = { kind = "linear", slope = 0.3 }
nu = 0.0
level = 3
"#;
    let p = write(dir.path(), "picard.toml", text);
    let o = gk(&["picard", "--config", &p], &[]);
    assert_eq!(o.status.code(), Some(EXIT_PASS));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("zeta = 0.25"), "{stdout}");
    assert!(stdout.contains("iterations = ") && stdout.contains("final_residual = "), "{stdout}");
    assert!(stdout.contains("iteration, sup_distance, ratio"), "{stdout}");
}

#[test]
fn plot_series_from_a_simulate_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sim.toml", MINIMAL);
    let traj = dir.path().join("traj.csv");
    assert_eq!(gk(&["simulate", "--config", &cfg, "--out", traj.to_str().unwrap()], &[]).status.code(), Some(0));
    let series = dir.path().join("d.csv");
    let o = gk(&["plot", "--input", traj.to_str().unwrap(), "--selector", "D_omega", "--out", series.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(EXIT_PASS));
    let csv = fs::read_to_string(&series).unwrap();
    assert_eq!(data_lines(&csv)[0], "t,D_omega");
    assert_eq!(data_lines(&csv).len(), 1002);

    let o = gk(&["plot", "--input", traj.to_str().unwrap(), "--selector", "wq_vs_N"], &[]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("available: log_D_omega"));
}

#[test]
fn wasserstein_between_point_files() {
    let dir = TempDir::new().unwrap();
    let a = write(dir.path(), "a.txt", "0.0 0.0 1 2\n1.0 0.0 1 2\n");
    let b = write(dir.path(), "b.txt", "# shifted\n0.5 0.0 1 1\n");
    let o = gk(&["wasserstein", "--a", &a, "--b", &b, "--q", "1"], &[]);
    assert_eq!(o.status.code(), Some(EXIT_PASS));
    assert!(String::from_utf8_lossy(&o.stdout).contains("W_1 = 0.5"), "{}", String::from_utf8_lossy(&o.stdout));

    let bad = write(dir.path(), "bad.txt", "0.1 0.2 1\n");
    assert_eq!(gk(&["wasserstein", "--a", &a, "--b", &bad], &[]).status.code(), Some(EXIT_CONFIG));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let text = fs::read_to_string(&p).unwrap();
            if let Err(e) = parse_config(&text) {
                panic!("{}:\n{e}", p.display());
            }
            n += 1;
        }
    }
    assert_eq!(n, ExperimentKind::ALL.len());
}
