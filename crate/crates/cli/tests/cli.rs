use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn blapn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blapn")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
seed = 7
realizations = 4
periods = 2

[excitation]
samples_per_period = 256

[noise]
process_variance = 0.01
output_variance = 0.0009

[decomposition]
process_realizations = 100
"#;

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", path_str(config), "--out", path_str(out)];
    args.extend_from_slice(extra);
    blapn(&args)
}

fn digests(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let hash = Sha256::digest(fs::read(&path).unwrap());
                let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), hex);
            }
        }
    }
    out
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(output: &Output) -> Value {
    serde_json::from_slice(&output.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&output.stderr)))
}

#[test]
fn outputs_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "c.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&config, &a, &["--workers", "1"]).status.success());
    assert!(run(&config, &b, &["--workers", "4"]).status.success());
    let (da, db) = (digests(&a), digests(&b));
    for name in ["bla.csv", "analytic.csv", "summary.json", "decomposition.json", "decomposition.csv", "bundle/manifest.json"] {
        assert!(da.contains_key(Path::new(name)), "missing {name}");
    }
    assert_eq!(da, db);

    let c = tmp.path().join("c");
    assert!(run(&config, &c, &["--seed", "8"]).status.success());
    assert_ne!(da[Path::new("bla.csv")], digests(&c)[Path::new("bla.csv")]);
}

#[test]
fn summary_echoes_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("o");
    assert!(run(&config, &out, &[]).status.success());
    let s = json_file(&out.join("summary.json"));
    assert_eq!(s["config"]["warmup"]["min_periods"], 4);
    assert_eq!(s["config"]["oracle"]["band_sigma"], 3.0);
    assert_eq!(s["config"]["excitation"]["sampling_frequency_hz"], 1.0);
    assert_eq!(s["config"]["system"]["f"]["coefficients"], serde_json::json!([1.0, 0.0, 0.1]));
    assert_eq!(s["excited_bins"], 127);
    assert!(s["pass"].as_bool().unwrap());
}

#[test]
fn noiseless_linear_system_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"
realizations = 3
periods = 2
[excitation]
samples_per_period = 128
[system.S]
numerator = [0.3, 0.2]
denominator = [1.0, -0.5]
[system.f]
coefficients = [1.0]
[decomposition]
enabled = false
"#;
    let config = write_config(tmp.path(), "c.toml", body);
    let out = tmp.path().join("o");
    let status = run(&config, &out, &[]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let s = json_file(&out.join("summary.json"));
    assert!(s["max_var_total"].as_f64().unwrap() < 1e-24);
    assert!(s["max_var_noise"].as_f64().unwrap() < 1e-24);
    assert!(s["oracle"]["max_abs_error"].as_f64().unwrap() < 1e-10);
    assert!(s["decomposition"].is_null());
}

#[test]
fn estimate_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("o");
    assert!(run(&config, &out, &[]).status.success());
    let re = tmp.path().join("re");
    let bundle = out.join("bundle");
    let o = blapn(&["estimate", "--bundle", path_str(&bundle), "--out", path_str(&re)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("bla.csv")).unwrap(), fs::read(re.join("bla.csv")).unwrap());
}

#[test]
fn staged_commands_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("o");
    for cmd in ["generate", "simulate", "estimate", "decompose"] {
        let o = blapn(&[cmd, "--config", path_str(&config), "--out", path_str(&out)]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(out.join("excitation/u_m003.csv").exists());
    assert!(out.join("bundle/Y_m003_p001.csv").exists());
    assert!(out.join("bla.csv").exists());
    let d = json_file(&out.join("decomposition.json"));
    assert_eq!(d["process_realizations"], 100);
    assert!(d["symbolic"]["y_bla"].is_array());
}

#[test]
fn closed_loop_run_with_linear_plant() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"
mode = "closed"
realizations = 8
periods = 4
[excitation]
samples_per_period = 128
[system]
f = { coefficients = [1.0] }
M = { numerator = [0.0, 0.5], denominator = [1.0] }
[noise]
input_variance = 0.01
process_variance = 0.01
output_variance = 0.01
"#;
    let config = write_config(tmp.path(), "c.toml", body);
    let out = tmp.path().join("o");
    let o = run(&config, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = json_file(&out.join("bundle/manifest.json"));
    assert_eq!(manifest["closed_loop"], true);
    assert!(out.join("analytic.csv").exists());
    assert!(!out.join("decomposition.json").exists());
}

#[test]
fn invalid_config_exits_2_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "c.toml", &format!("{SMALL}\nbogus_key = 1\n"));
    let o = run(&config, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "config");
    assert_eq!(e["exit_code"], 2);

    let one_period = write_config(tmp.path(), "p.toml", &SMALL.replace("periods = 2", "periods = 1"));
    assert_eq!(run(&one_period, &tmp.path().join("o"), &[]).status.code(), Some(2));
    assert_eq!(blapn(&["run"]).status.code(), Some(2));
}

#[test]
fn unstable_system_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}\n[system.S]\nnumerator = [1.0]\ndenominator = [1.0, -1.5]\n");
    let config = write_config(tmp.path(), "c.toml", &body);
    let o = run(&config, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "instability");
}

#[test]
fn system_file_is_loaded_relative_to_config() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "sys.toml", "[f]\ncoefficients = [1.0, 0.0, 0.2]\n");
    let config = write_config(tmp.path(), "c.toml", &SMALL.replace("seed = 7", "seed = 7\nsystem = \"sys.toml\""));
    let out = tmp.path().join("o");
    let o = run(&config, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json_file(&out.join("summary.json"));
    assert_eq!(s["config"]["system"]["f"]["coefficients"], serde_json::json!([1.0, 0.0, 0.2]));
}

#[test]
fn compare_identical_reports_is_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "c.toml", SMALL);
    let a = tmp.path().join("a");
    assert!(run(&config, &a, &[]).status.success());
    let o = blapn(&["compare", path_str(&a), path_str(&a)]);
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["differences"].as_array().unwrap().len(), 0);
    assert_eq!(report["max_abs_diff"], 0.0);
    assert_eq!(report["within_tolerance"], true);
}

#[test]
fn compare_flags_grid_mismatch_and_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert!(run(&write_config(tmp.path(), "a.toml", SMALL), &a, &[]).status.success());
    assert!(run(&write_config(tmp.path(), "a.toml", SMALL), &b, &["--seed", "9"]).status.success());
    let small_grid = SMALL.replace("samples_per_period = 256", "samples_per_period = 128");
    assert!(run(&write_config(tmp.path(), "c.toml", &small_grid), &c, &[]).status.success());
    assert_eq!(blapn(&["compare", path_str(&a), path_str(&b)]).status.code(), Some(4));
    assert!(blapn(&["compare", path_str(&a), path_str(&b), "--tolerance", "10"]).status.success());
    let o = blapn(&["compare", path_str(&a), path_str(&c)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("grid"));
}

#[test]
fn process_noise_level_scales_analytic_bla_uniformly() {
    let tmp = tempfile::tempdir().unwrap();
    let low = tmp.path().join("low");
    let high = tmp.path().join("high");
    let loud = SMALL.replace("process_variance = 0.01", "process_variance = 1.0");
    assert!(run(&write_config(tmp.path(), "l.toml", SMALL), &low, &["--seed", "1"]).status.success());
    assert!(run(&write_config(tmp.path(), "h.toml", &loud), &high, &["--seed", "1"]).status.success());
    let o = blapn(&["compare", path_str(&low), path_str(&high), "--tolerance", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let ratio = &report["analytic"]["ratio"];
    assert!((ratio["ratio_real"].as_f64().unwrap() - 1.6 / 1.303).abs() < 1e-12);
    assert!((ratio["ratio_real"].as_f64().unwrap() - 1.2280).abs() < 1e-4);
    assert_eq!(ratio["uniform"], true);
    // the estimates carry the same gain ratio up to noise
    let est = report["ratio"]["ratio_real"].as_f64().unwrap();
    assert!((est - 1.2280).abs() < 0.05, "estimated ratio {est}");
}

#[test]
fn demo_hammerstein_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("demo");
    let o = blapn(&["demo-hammerstein", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(line["pass"], true);
    let s = json_file(&out.join("summary.json"));
    assert_eq!(s["config"]["excitation"]["samples_per_period"], 4096);
    assert!(s["oracle"]["fraction_inside"].as_f64().unwrap() >= 0.95);
}
