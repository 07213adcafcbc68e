use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tdde::io::{self, ModelFile, Sidecar};
use tdde_core::{Activation, Anchor, ClassifierModel, DensityModel, LatentDensity, TimeEmbedding, TimeGrid};

fn tdde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdde")).args(args).output().expect("binary runs")
}

fn run_ok(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = tdde(&args);
    assert!(
        out.status.success(),
        "{cmd} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("experiment.toml");
    fs::write(&p, body).unwrap();
    p
}

fn small_circles(out: &Path) -> String {
    small_circles_with(out, "")
}

/// `eval_extra` is appended to the `[eval]` section.
fn small_circles_with(out: &Path, eval_extra: &str) -> String {
    format!(
        r#"
seed = 11

[data]
kind = "circles"
n = 400

[grid]
kind = "logarithmic"
n = 4

[model]
hidden = [16, 16]

[train]
epochs = 4
batch = 64
log_every = 2

[sample]
n_chains = 300
steps = 20
step = 1e-3

[eval]
metrics = ["ot", "ks"]
ot = {{ epsilon = 0.05, max_points = 300 }}
grid = {{ lower = [-1.5, -1.5], upper = [1.5, 1.5], points = 5 }}
times = [0.0, 1.0]
{}

[output]
dir = "{}"
"#,
        eval_extra,
        out.display()
    )
}

fn check_sidecar(file: &Path) {
    let meta: Sidecar = serde_json::from_slice(&fs::read(io::sidecar_path(file)).unwrap()).unwrap();
    assert_eq!(meta.content_hash, io::content_hash(&fs::read(file).unwrap()));
    assert_eq!(meta.config["seed"], 11);
}

#[test]
fn full_pipeline_writes_outputs_with_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &small_circles(&out));

    run_ok("simulate", &cfg, &[]);
    check_sidecar(&out.join("data.csv"));
    assert_eq!(io::load_csv(&out.join("data.csv")).unwrap().rows(), 400);

    let train = run_ok("train", &cfg, &[]);
    let progress = String::from_utf8_lossy(&train.stdout);
    assert_eq!(progress.lines().filter(|l| l.starts_with("epoch")).count(), 2, "{progress}");
    check_sidecar(&out.join("model.json"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["epoch_losses"].as_array().unwrap().len(), 4);

    run_ok("density-grid", &cfg, &[]);
    let grid = io::load_csv(&out.join("density_grid.csv")).unwrap();
    assert_eq!((grid.rows(), grid.cols()), (50, 4));
    check_sidecar(&out.join("density_grid.csv"));

    run_ok("sample", &cfg, &[]);
    let samples = io::load_samples(&out.join("samples.csv")).unwrap();
    assert_eq!((samples.rows(), samples.cols()), (300, 2));

    run_ok("eval", &cfg, &[]);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let names: Vec<&str> = metrics["metrics"].as_array().unwrap().iter().map(|m| m["metric"].as_str().unwrap()).collect();
    assert_eq!(names, ["ot", "ks"]);
    assert!(out.join("ecdf_samples_x_2.csv").exists());

    // Rare-event scoring on a small labeled file.
    let labeled = tmp.path().join("labeled.csv");
    let mut body = String::from("a,b,label\n");
    for i in 0..40 {
        let r = if i % 10 == 0 { 5.0 } else { 0.5 };
        let ang = i as f64;
        body.push_str(&format!("{},{},{}\n", r * ang.cos(), r * ang.sin(), u8::from(i % 10 == 0)));
    }
    fs::write(&labeled, body).unwrap();
    let cfg2 = write_config(tmp.path(), &small_circles_with(&out, &format!("labeled = \"{}\"", labeled.display())));
    run_ok("rare-score", &cfg2, &[]);
    let ranked = io::load_csv(&out.join("rare_scores.csv")).unwrap();
    assert_eq!(ranked.rows(), 40);
    assert!(ranked.column(2).windows(2).all(|w| w[0] >= w[1]));
    let rare: serde_json::Value = serde_json::from_slice(&fs::read(out.join("rare_metrics.json")).unwrap()).unwrap();
    assert_eq!(rare["n_positive"], 4);
    assert!(out.join("roc.csv").exists());
}

#[test]
fn outputs_are_reproducible_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<u8>> = ["1", "1", "3"]
        .iter()
        .enumerate()
        .map(|(k, threads)| {
            let out = tmp.path().join(format!("run{k}"));
            let cfg = write_config(tmp.path(), &small_circles(&out));
            run_ok("train", &cfg, &["--threads", threads]);
            run_ok("sample", &cfg, &["--threads", threads]);
            fs::read(out.join("samples.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);

    let out = tmp.path().join("other_seed");
    let cfg = write_config(tmp.path(), &small_circles(&out));
    run_ok("train", &cfg, &["--seed", "12"]);
    run_ok("sample", &cfg, &["--seed", "12"]);
    assert_ne!(fs::read(out.join("samples.csv")).unwrap(), runs[0]);
}

#[test]
fn zero_network_grid_is_the_base_gaussian() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("zero");
    let cfg = write_config(tmp.path(), &small_circles(&out));
    let model = ClassifierModel::zeros(2, &[8], Activation::Silu, TimeEmbedding::raw()).unwrap();
    let dm = DensityModel::new(model, TimeGrid::linear(4).unwrap(), LatentDensity::std_normal(2).unwrap(), Anchor::Start)
        .unwrap();
    io::write_bytes(&out.join("model.json"), &serde_json::to_vec(&ModelFile::new(dm)).unwrap()).unwrap();
    run_ok("density-grid", &cfg, &[]);
    let grid = io::load_csv(&out.join("density_grid.csv")).unwrap();
    for r in grid.iter_rows() {
        let expected = -0.5 * (r[0] * r[0] + r[1] * r[1]) - (2.0 * std::f64::consts::PI).ln();
        assert!((r[3] - expected).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn identical_sample_files_give_identity_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let pts = tmp.path().join("pts.csv");
    let mut body = String::from("x_1,x_2\n");
    for i in 0..150 {
        let t = i as f64 * 0.37;
        body.push_str(&format!("{},{}\n", t.sin(), (2.0 * t).cos()));
    }
    fs::write(&pts, body).unwrap();
    let out = tmp.path().join("ev");
    let cfg = write_config(
        tmp.path(),
        &format!(
            "[data]\nkind = \"circles\"\nn = 10\n[eval]\nmetrics = [\"ot\", \"ks\"]\nsamples = \"{0}\"\nreference = \"{0}\"\not = {{ epsilon = 0.01, tol = 1e-9, max_iter = 100000 }}\n[output]\ndir = \"{1}\"\n",
            pts.display(),
            out.display()
        ),
    );
    run_ok("eval", &cfg, &[]);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let ot = metrics["metrics"][0]["value"].as_f64().unwrap();
    // The entropic plan's transport cost is at most eps * ln(n) above zero.
    assert!((0.0..=0.01 * 150f64.ln()).contains(&ot), "{ot}");
    assert_eq!(metrics["metrics"][1]["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[data]\nkind = \"circles\"\nn = 10\n[train]\nlearning_rate = 1\n");
    let out = tdde(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.learning_rate"));

    let cfg = write_config(tmp.path(), "[data]\nkind = \"circles\"\nn = 10\n");
    let out = tdde(&["train", "--config", cfg.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = tmp.path().join("nope.csv");
    let cfg = write_config(
        tmp.path(),
        &format!("[data]\nkind = \"csv\"\npath = \"{}\"\n[output]\ndir = \"{}\"\n", missing.display(), tmp.path().display()),
    );
    let out = tdde(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let out = tdde(&["train", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // Sampling before training: the model file is missing.
    let cfg = write_config(tmp.path(), &format!("[data]\nkind = \"circles\"\nn = 10\n[output]\ndir = \"{}\"\n", tmp.path().join("empty").display()));
    assert_eq!(tdde(&["sample", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn simulate_writes_path_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ou");
    let cfg = write_config(
        tmp.path(),
        &format!(
            "seed = 11\n[data]\nkind = \"ou\"\nn_paths = 1500\n[grid]\nn = 4\nt_end = 0.8\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    );
    run_ok("simulate", &cfg, &["--threads", "2"]);
    let ds = io::load_path_dataset(&out.join("paths")).unwrap();
    assert_eq!(ds.times().len(), 5);
    assert!((ds.times()[4] - 0.8).abs() < 1e-15);
    assert_eq!(ds.samples_at(2).rows(), 1500);
    check_sidecar(&out.join("paths/manifest.json"));

    // Training from the written directory instead of re-simulating.
    let cfg = write_config(
        tmp.path(),
        &format!(
            "seed = 11\n[data]\nkind = \"paths\"\ndir = \"{}\"\n[grid]\nn = 4\nt_end = 0.8\n[model]\nhidden = [8]\nbase = {{ mean = [1.0], covariance = [[0.25]] }}\n[train]\nepochs = 2\nbatch = 32\n[output]\ndir = \"{}\"\n",
            out.join("paths").display(),
            out.display()
        ),
    );
    run_ok("train", &cfg, &[]);
    assert!(out.join("model.json").exists());
}
