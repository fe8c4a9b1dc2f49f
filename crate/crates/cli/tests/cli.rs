use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gfbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfbm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn brownian_covariance_is_the_minimum() {
    let o = gfbm(&[
        "cov", "--alpha", "0", "--gamma", "0", "--s", "1", "--t", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "1.0");
}

#[test]
fn manifest_goes_to_stderr_without_output_file() {
    let o = gfbm(&[
        "cov", "--alpha", "0.25", "--gamma", "0.5", "--s", "1", "--t", "2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let m: Value = serde_json::from_str(&stderr(&o)).unwrap();
    assert_eq!(m["command"], "cov");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["params"]["hurst"], 0.5);
    assert!(m["elapsed_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn simulate_is_bit_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}.csv"));
        let o = gfbm(&[
            "simulate",
            "--alpha",
            "0.25",
            "--gamma",
            "0.5",
            "--grid",
            "0.25:2:256",
            "--paths",
            "100",
            "--seed",
            "7",
            "--threads",
            threads,
            "-o",
            path_str(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push(fs::read(&out).unwrap());
        let manifest = dir.path().join(format!("run{k}.csv.manifest.json"));
        assert!(manifest.exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101);
    assert_eq!(lines[0].split(',').count(), 256);
    // 17 significant digits, no locale.
    let first = lines[1].split(',').next().unwrap();
    let mantissa = first.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.replace('.', "").len(), 17);
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("sb.json");
    let o = gfbm(&[
        "smallball",
        "--alpha",
        "0",
        "--gamma",
        "0",
        "--eps",
        "1,0.7,0.5",
        "--paths",
        "2000",
        "--seed",
        "3",
        "--format",
        "json",
        "-o",
        path_str(&first),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = dir.path().join("sb.json.manifest.json");
    let second = dir.path().join("again.json");
    let o = gfbm(&["replay", path_str(&manifest), "-o", path_str(&second)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    let m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["options"]["eps"][2], 0.5);
}

#[test]
fn domain_errors_exit_two_and_name_the_constraint() {
    let o = gfbm(&[
        "cov", "--alpha", "0.9", "--gamma", "0.5", "--s", "1", "--t", "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("alpha < gamma/2 + 1/2"),
        "{}",
        stderr(&o)
    );

    let o = gfbm(&[
        "cov", "--alpha", "0.1", "--gamma", "-0.2", "--s", "1", "--t", "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma >= 0"));

    let o = gfbm(&[
        "simulate", "--alpha", "0.1", "--gamma", "0.2", "--grid", "1:2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("a:b:n"));

    let o = gfbm(&["tangent", "--alpha", "0.6", "--gamma", "0.5", "--t", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha < 1/2"));
}

#[test]
fn numerical_failures_exit_one_and_name_the_module() {
    // Next to the upper boundary the smooth kernel integrals stop converging.
    let o = gfbm(&[
        "simulate",
        "--alpha",
        "0.749999",
        "--gamma",
        "0.5",
        "--grid",
        "1:1.0001:500",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("covariance"));
}

#[test]
fn gram_json_uses_decimal_strings() {
    let o = gfbm(&[
        "cov",
        "--alpha",
        "-0.1",
        "--gamma",
        "0.3",
        "--grid",
        "geometric:0.5:2:3",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let g = v["gram"].as_array().unwrap();
    assert_eq!(g.len(), 3);
    let s = g[0][1].as_str().unwrap();
    let parsed: f64 = s.parse().unwrap();
    assert_eq!(format!("{parsed:.16e}"), s);
    assert_eq!(g[0][1], g[1][0]);
}

#[test]
fn statistics_commands_run() {
    let o = gfbm(&[
        "lil",
        "--alpha",
        "0.25",
        "--gamma",
        "0.5",
        "--t-centers",
        "1,2",
        "--paths",
        "40",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);
    assert_eq!(v["location_fit"]["target"], -0.25);

    let o = gfbm(&[
        "chung", "--alpha", "0.25", "--gamma", "0.5", "--paths", "40",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("t,r,mean,median,max,raw_mean\n"));
    assert_eq!(stdout(&o).lines().count(), 8);

    let o = gfbm(&["chung", "--alpha", "0.25", "--gamma", "0.5", "--origin"]);
    assert_eq!(o.status.code(), Some(2));

    let o = gfbm(&[
        "tangent",
        "--alpha",
        "0.25",
        "--gamma",
        "0.5",
        "--t",
        "1",
        "--process",
        "z",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 8);

    let o = gfbm(&[
        "slnd",
        "--alpha",
        "0.25",
        "--gamma",
        "0.5",
        "--s",
        "0.5",
        "--t",
        "1",
        "--random-conditioning",
        "10",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["cond_var"].as_f64().unwrap() >= v["bound"].as_f64().unwrap());

    let o = gfbm(&[
        "spectrum",
        "--alpha",
        "0.25",
        "--gamma",
        "0.5",
        "--lambda-max",
        "64",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("lambda,f_U\n"));
}

#[test]
fn verify_all_fast_emits_a_summary() {
    let o = gfbm(&[
        "verify-all",
        "--alpha",
        "0.25",
        "--gamma",
        "0.5",
        "--budget",
        "fast",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 13);
    let passed = results.iter().filter(|r| r["passed"] == true).count();
    assert_eq!(v["passed"], passed);
    assert_eq!(v["budget"], "fast");
    for id in [1, 2, 4, 5, 10] {
        assert_eq!(
            results[id - 1]["passed"],
            true,
            "{}",
            results[id - 1]["summary"]
        );
    }
}

#[test]
fn exact_samplers_check_their_preconditions() {
    let o = gfbm(&[
        "simulate",
        "--alpha",
        "0.25",
        "--gamma",
        "0.5",
        "--grid",
        "geometric:1:2:64",
        "--sampler",
        "levinson",
        "--paths",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);

    let o = gfbm(&[
        "simulate",
        "--alpha",
        "0.25",
        "--gamma",
        "0.5",
        "--grid",
        "1:2:64",
        "--sampler",
        "levinson",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("geometric grid"), "{}", stderr(&o));

    let o = gfbm(&[
        "simulate",
        "--alpha",
        "0",
        "--gamma",
        "0.3",
        "--grid",
        "0:1:64",
        "--sampler",
        "increments",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = gfbm(&[
        "simulate",
        "--alpha",
        "0.1",
        "--gamma",
        "0.3",
        "--grid",
        "0:1:64",
        "--sampler",
        "increments",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha = 0"), "{}", stderr(&o));
}
