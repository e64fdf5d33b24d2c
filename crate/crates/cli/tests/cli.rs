use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use specverify::network::{Layer, Matrix, Network};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_specverify"));
    c.env_remove("SPECVERIFY_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Next state = (w, h + dh, s/2). With dh < 0 the energy always drops; with
/// dh = 2 it always rises.
fn shift_model(dir: &Path, dh: f64) -> PathBuf {
    let mut w = Matrix::identity(3);
    w[(2, 2)] = 0.5;
    let net = Network::new("shift", 3, vec![Layer::affine(w, vec![0.0, dh, 0.0])]).unwrap();
    let path = dir.join(format!("shift{dh}.json"));
    net.save(&path).unwrap();
    path
}

fn pendulum_csv(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("pendulum.csv");
    let o = run(&["simulate", "--n", &n.to_string(), "--out", p(&path), "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

fn key(out: &str, k: &str) -> Option<String> {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{k}=")).map(str::to_string))
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_seeded() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    assert!(run(&["simulate", "--n", "20", "--out", p(&a), "--seed", "9"]).status.success());
    let o = bin()
        .args(["simulate", "--n", "20", "--out", p(&b)])
        .env("SPECVERIFY_SEED", "9")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(key(&stdout(&o), "pairs").as_deref(), Some("20"));
    assert!(run(&["simulate", "--n", "20", "--out", p(&c), "--seed", "10"]).status.success());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_ne!(text, fs::read_to_string(&c).unwrap());
    assert!(text.starts_with("w,h,somega,w_next,h_next,somega_next\n"));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn bad_seed_and_bad_values() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let o = bin()
        .args(["simulate", "--n", "3", "--out", p(&out)])
        .env("SPECVERIFY_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SPECVERIFY_SEED"));
    assert_eq!(run(&["simulate", "--n", "3", "--out", p(&out), "--dt", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--n", "0", "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn verify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = pendulum_csv(dir.path(), 40);
    let good = shift_model(dir.path(), -0.1);
    let o = run(&[
        "verify", "--model", p(&good), "--spec", "energy", "--dataset", p(&data), "--input-index", "0", "--delta", "0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let first = text.lines().next().unwrap();
    let v: f64 = first.strip_prefix("VERIFIED, lp_max=").unwrap().parse().unwrap();
    assert!(v < 0.0);
    assert_eq!(key(&text, "status").as_deref(), Some("verified"));

    let bad = shift_model(dir.path(), 2.0);
    let o = run(&[
        "verify", "--model", p(&bad), "--spec", "energy", "--dataset", p(&data), "--input-index", "3", "--delta", "0.01",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("FALSIFIED, lp_max="));
    assert!(key(&stdout(&o), "witness_value").unwrap().parse::<f64>().unwrap() > 0.0);
}

#[test]
fn verify_dumps_lp_and_reports_errors() {
    let dir = TempDir::new().unwrap();
    let data = pendulum_csv(dir.path(), 40);
    let good = shift_model(dir.path(), -0.1);
    let lp = dir.path().join("relax.lp");
    let o = run(&[
        "verify", "--model", p(&good), "--spec", "energy", "--dataset", p(&data), "--input-index", "1", "--delta",
        "0.02", "--dump-lp", p(&lp), "--tighten-bounds",
    ]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{}", stderr(&o));
    let text = fs::read_to_string(&lp).unwrap();
    assert!(text.starts_with("\\Maximize") && text.contains("Subject To"));

    let missing = dir.path().join("none.json");
    let o = run(&[
        "verify", "--model", p(&missing), "--spec", "energy", "--dataset", p(&data), "--input-index", "0", "--delta", "0",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("none.json"));
    let o = run(&[
        "verify", "--model", p(&good), "--spec", "energy", "--dataset", p(&data), "--input-index", "500", "--delta", "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "verify", "--model", p(&good), "--spec", "energy", "--dataset", p(&data), "--input-index", "0", "--delta", "-1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn falsify_reports_witness() {
    let dir = TempDir::new().unwrap();
    let data = pendulum_csv(dir.path(), 40);
    let bad = shift_model(dir.path(), 2.0);
    let w = dir.path().join("w.csv");
    let o = run(&[
        "falsify", "--model", p(&bad), "--spec", "energy", "--dataset", p(&data), "--input-index", "0", "--delta",
        "0.05", "--pgd-steps", "20", "--pgd-restarts", "3", "--out", p(&w),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(key(&stdout(&o), "falsified").as_deref(), Some("true"));
    let row: Vec<f64> = fs::read_to_string(&w)
        .unwrap()
        .trim()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(row.len(), 3);

    let good = shift_model(dir.path(), -0.1);
    let o = run(&[
        "falsify", "--model", p(&good), "--spec", "energy", "--dataset", p(&data), "--input-index", "0", "--delta", "0.05",
    ]);
    assert_eq!(key(&stdout(&o), "falsified").as_deref(), Some("false"));
    let o = run(&[
        "falsify", "--model", p(&good), "--spec", "energy", "--dataset", p(&data), "--input-index", "0", "--delta",
        "0.05", "--pgd-restarts", "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn parse_report(text: &str) -> Vec<Vec<f64>> {
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("delta,verification_bound,adversarial_bound,n_examples,mean_lp_value,wall_ms")
    );
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn sweep_report_is_sound_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = pendulum_csv(dir.path(), 60);
    let model = dir.path().join("model.json");
    let o = run(&[
        "train", "--data", p(&data), "--loss", "l1", "--out", p(&model), "--epochs", "3", "--seed", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for (out, jobs) in [(&a, "1"), (&b, "2")] {
        let o = run(&[
            "sweep", "--model", p(&model), "--spec", "energy", "--dataset", p(&data), "--deltas", "0,0.02,0.06",
            "--out", p(out), "--jobs", jobs, "--omit-timing", "--seed", "4",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let rows = parse_report(&text);
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r[1] <= r[2]);
        assert_eq!(r[3], 18.0);
        assert_eq!(r[5], 0.0);
    }
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]));

    let o = run(&[
        "sweep", "--model", p(&model), "--spec", "energy", "--dataset", p(&data), "--deltas", "0,x", "--out", p(&a),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_checks_loss_against_data() {
    let dir = TempDir::new().unwrap();
    let data = pendulum_csv(dir.path(), 30);
    let model = dir.path().join("m.json");
    let log = dir.path().join("log.csv");
    let o = run(&["train", "--data", p(&data), "--loss", "ce", "--out", p(&model)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["train", "--data", p(&data), "--loss", "hinge", "--out", p(&model)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "train", "--data", p(&data), "--loss", "l1+energy", "--out", p(&model), "--epochs", "2", "--log", p(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let net = Network::load(&model).unwrap();
    assert_eq!((net.input_dim(), net.output_dim(), net.param_count()), (3, 3, 115));
    let text = fs::read_to_string(&log).unwrap();
    assert!(text.starts_with("epoch,train_loss,test_metric\n"));
    assert_eq!(text.lines().count(), 3);
}

fn write_idx(dir: &Path, prefix: &str, images: &[[u8; 4]], labels: &[u8]) {
    let mut b = Vec::new();
    for v in [2051u32, images.len() as u32, 2, 2] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    images.iter().for_each(|img| b.extend_from_slice(img));
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), b).unwrap();
    let mut b = Vec::new();
    for v in [2049u32, labels.len() as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(labels);
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), b).unwrap();
}

#[test]
fn surface_over_tiny_images() {
    let dir = TempDir::new().unwrap();
    let mnist = dir.path().join("mnist");
    fs::create_dir(&mnist).unwrap();
    let imgs = [[255, 0, 0, 0], [0, 255, 0, 0], [0, 0, 255, 0]];
    write_idx(&mnist, "t10k", &imgs, &[0, 1, 2]);
    let mut w = Matrix::zeros(3, 4);
    for i in 0..3 {
        w[(i, i)] = 1.0;
    }
    let net = Network::new("tiny", 4, vec![Layer::affine(w, vec![0.0; 3])]).unwrap();
    let model = dir.path().join("tiny.json");
    net.save(&model).unwrap();
    let out = dir.path().join("surface.csv");
    let o = run(&[
        "surface", "--model", p(&model), "--dataset", p(&mnist), "--images", "0,1,2", "--grid", "8", "--range", "0,1",
        "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,t,label"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 64);
    assert!(rows.contains(&"0,0,0") && rows.contains(&"1,0,1") && rows.contains(&"0,1,2"));

    let o = run(&[
        "surface", "--model", p(&model), "--dataset", p(&mnist), "--images", "0,1", "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "surface", "--model", p(&model), "--dataset", p(&mnist), "--images", "0,1,7", "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
