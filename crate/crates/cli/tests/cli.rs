use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hazediff(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hazediff"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hazediff(dir, args);
    assert!(
        out.status.success(),
        "hazediff {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn scene(dir: &Path, size: &str, name: &str) {
    ok(dir, &["synth", "--generate", "--size", size, "--seed", "2", "--output", name]);
}

#[test]
fn schedule_dump_has_one_row_per_step() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["schedule", "dump", "--T", "4"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], "t,beta,alpha,gamma,W_tau=0.1,W_tau=0.5,W_tau=1");
    assert!(lines[1].starts_with("1,0.0001,"));
    assert!(lines[4].starts_with("4,0.02,"));
    assert!(lines[4].ends_with(",0,0,0") || lines[4].ends_with(",0.0,0.0,0.0"));
}

#[test]
fn patch_plan_reports_grid() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["patches", "plan", "--height", "96", "--width", "96"]);
    let plan: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan["count"], 9);
    assert!(plan.get("weights").is_none());
}

#[test]
fn mismatched_tmap_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    scene(tmp.path(), "48", "big");
    scene(tmp.path(), "32", "small");
    let out = hazediff(
        tmp.path(),
        &[
            "dehaze", "--input", "big/hazy.png", "--tmap", "small/tmap.pgm", "--clear",
            "big/clear.png", "--T", "10", "--patch", "32", "--output", "run",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dimension mismatch"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let out = hazediff(tmp.path(), &["schedule", "dump", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = hazediff(tmp.path(), &["dehaze", "--input", "x.png", "--output", "run", "--backend", "tiny"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let out = hazediff(tmp.path(), &["eval", "--ref", "missing.png", "--test", "missing.png"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn help_lists_defaults() {
    let tmp = TempDir::new().unwrap();
    for sub in [&["dehaze"][..], &["train-toy"], &["tmap"], &["schedule", "dump"], &["patches", "plan"]] {
        let mut args = sub.to_vec();
        args.push("--help");
        let out = ok(tmp.path(), &args);
        let text = String::from_utf8(out.stdout).unwrap();
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            if line.contains("--help") || line.contains("--version") {
                continue;
            }
            let flag = line.trim_start();
            let start = text.find(flag).unwrap();
            let rest = &text[start..];
            let block_end = rest[2..].find("\n  -").map(|i| i + 2).unwrap_or(rest.len());
            assert!(
                rest[..block_end].contains("[default"),
                "{sub:?}: no default documented for {flag}"
            );
        }
    }
}

#[test]
fn oracle_pipeline_recovers_clear_image() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    scene(dir, "48", "s");
    ok(dir, &["tmap", "--input", "s/hazy.png", "--output", "est.pgm"]);
    let sidecar = read_json(dir.join("est.json"));
    assert!(sidecar["airlight"].as_f64().unwrap() > 0.0);
    ok(
        dir,
        &[
            "dehaze", "--input", "s/hazy.png", "--tmap", "s/tmap.pgm", "--clear", "s/clear.png",
            "--T", "100", "--patch", "32", "--stride", "16", "--deterministic", "--output", "run",
        ],
    );
    for f in ["result.png", "tmap.pgm", "config.json", "report.json", "trace/steps.csv"] {
        assert!(dir.join("run").join(f).exists(), "missing {f}");
    }
    ok(dir, &["eval", "--ref", "s/clear.png", "--test", "run/result.png", "--output", "eval.json"]);
    let report = read_json(dir.join("eval.json"));
    let db = &report["psnr"];
    assert!(db == "inf" || db.as_f64().unwrap() >= 30.0, "psnr {db}");
}

#[test]
fn external_backend_uses_the_child_protocol() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    scene(dir, "32", "s");
    ok(
        dir,
        &[
            "dehaze", "--input", "s/hazy.png", "--tmap", "s/tmap.pgm", "--backend", "external",
            "--denoiser-cmd", env!("CARGO_BIN_EXE_hazediff-zero-denoiser"), "--T", "5",
            "--patch", "16", "--stride", "8", "--output", "run",
        ],
    );
    assert!(dir.join("run/result.png").exists());
    let cfg = read_json(dir.join("run/config.json"));
    assert_eq!(cfg["backend"], "external");
}

#[test]
fn tiny_backend_round_trips_a_trained_model() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "train-toy", "--scenes", "2", "--size", "32", "--steps", "2", "--batch", "2",
            "--patch", "16", "--out-model", "m/tiny.bin",
        ],
    );
    let trace = std::fs::read_to_string(dir.join("m/tiny.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
    assert!(dir.join("m/tiny.json").exists());
    scene(dir, "32", "s");
    ok(
        dir,
        &[
            "dehaze", "--input", "s/hazy.png", "--backend", "tiny", "--model", "m/tiny.bin",
            "--steps", "4", "--patch", "16", "--stride", "8", "--output", "run",
        ],
    );
    let out = hazediff(
        dir,
        &[
            "dehaze", "--input", "s/hazy.png", "--backend", "tiny", "--model", "m/tiny.bin",
            "--pist-a", "0.01", "--steps", "4", "--patch", "16", "--stride", "8", "--output", "run2",
        ],
    );
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn config_file_overrides_and_rejects_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    scene(dir, "32", "s");
    std::fs::write(
        dir.join("run.toml"),
        "seed = 4\n[schedule]\nsteps = 20\n[sampler]\npatch = 16\nstride = 8\ndeterministic = true\n",
    )
    .unwrap();
    ok(
        dir,
        &[
            "dehaze", "--input", "s/hazy.png", "--tmap", "s/tmap.pgm", "--clear", "s/clear.png",
            "--config", "run.toml", "--stride", "4", "--output", "run",
        ],
    );
    let cfg = read_json(dir.join("run/config.json"));
    assert_eq!(cfg["config"]["schedule"]["steps"], 20);
    assert_eq!(cfg["config"]["sampler"]["patch"], 16);
    assert_eq!(cfg["config"]["sampler"]["stride"], 4);
    assert_eq!(cfg["config"]["seed"], 4);

    std::fs::write(dir.join("bad.toml"), "[sampler]\npatchsize = 3\n").unwrap();
    let out = hazediff(
        dir,
        &["dehaze", "--input", "s/hazy.png", "--config", "bad.toml", "--output", "run3"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("patchsize"), "{}", stderr(&out));
}

#[test]
fn eval_directory_mode_pairs_by_name() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--generate", "--count", "2", "--size", "24", "--output", "g"]);
    std::fs::create_dir_all(dir.join("ref")).unwrap();
    std::fs::create_dir_all(dir.join("test")).unwrap();
    for i in 0..2 {
        let src = dir.join(format!("g/scene_00{i}"));
        std::fs::copy(src.join("clear.png"), dir.join(format!("ref/{i}.png"))).unwrap();
        std::fs::copy(src.join("hazy.png"), dir.join(format!("test/{i}.png"))).unwrap();
    }
    let out = ok(dir, &["eval", "--ref", "ref", "--test", "test"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["images"].as_array().unwrap().len(), 2);
    assert!(report["mean_ssim"].as_f64().unwrap() < 1.0);
}
