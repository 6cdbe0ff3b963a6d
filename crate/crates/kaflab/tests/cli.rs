use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kaflab::io::{read_curve, read_moment_model};
use kaflab::manifest::{RunManifest, MANIFEST_NAME};
use kaflab_core::sim::CurveKind;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn kaflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kaflab"))
        .args(args)
        .env("KAFLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Copies a shipped config into `dir`, applying textual replacements.
fn config_variant(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(configs().join(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from} not in {name}");
        text = text.replace(from, to);
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn kv(path: &Path, key: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from {}", path.display()))
}

#[test]
fn null_system_simulates_to_zero() {
    let out = tempfile::tempdir().unwrap();
    let o = kaflab(&["simulate", "--config", p(&configs().join("null.cfg")), "--out", p(out.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = read_curve(&out.path().join("simulated.csv"), CurveKind::Simulated).unwrap();
    assert_eq!(c.len(), 500);
    assert!(c.mse.iter().all(|&v| v == 0.0));
    let m = RunManifest::read(&out.path().join(MANIFEST_NAME)).unwrap();
    let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(names, ["simulated.csv", "dictionary.csv"]);
    assert_eq!(m.seed, Some(1));
    assert_eq!(m.config_sha1.as_deref().map(str::len), Some(40));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config_variant(a.path(), "toy_r1.cfg", &[]);
    let o = kaflab(&["simulate", "--config", p(&cfg), "--out", p(&a.path().join("run"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_kaflab"))
        .args(["simulate", "--config", p(&cfg), "--out", p(b.path())])
        .env("KAFLAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let first = fs::read(a.path().join("run/simulated.csv")).unwrap();
    assert_eq!(first, fs::read(b.path().join("simulated.csv")).unwrap());
    // the manifest alone reproduces the run
    let m = RunManifest::read(&b.path().join(MANIFEST_NAME)).unwrap();
    let replay = a.path().join("replay.cfg");
    fs::write(&replay, m.resolved_config.unwrap()).unwrap();
    let o = kaflab(&["simulate", "--config", p(&replay), "--out", p(&a.path().join("replay"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(first, fs::read(a.path().join("replay/simulated.csv")).unwrap());
    // a different seed gives a different curve
    let o = kaflab(&["simulate", "--config", p(&cfg), "--out", p(&a.path().join("s9")), "--seed", "9"]);
    assert_eq!(code(&o), 0);
    assert_ne!(first, fs::read(a.path().join("s9/simulated.csv")).unwrap());
    let m = RunManifest::read(&a.path().join("s9").join(MANIFEST_NAME)).unwrap();
    assert!(m.resolved_config.unwrap().contains("seed = 9"));
}

#[test]
fn config_errors_exit_2_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_variant(dir.path(), "toy_r1.cfg", &[("eta = 0.5", "eta = 0.5\nwidth = 3")]);
    let o = kaflab(&["simulate", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 9: unknown key `width`"), "{}", stderr(&o));
    let cfg = config_variant(dir.path(), "null.cfg", &[("points = 3", "points = three")]);
    let o = kaflab(&["analyze", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 22"), "{}", stderr(&o));
}

#[test]
fn missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = kaflab(&["simulate", "--config", p(&dir.path().join("nope.cfg")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 4);
    let o = kaflab(&["compare", "--sim", "nope.csv", "--theory", "nope.csv", "--out", p(dir.path())]);
    assert_eq!(code(&o), 4);
}

fn det2(a: f64, b: f64, d: f64) -> f64 {
    a * d - b * b
}

#[test]
fn single_atom_analysis_matches_scalar_formulas() {
    let out = tempfile::tempdir().unwrap();
    let o = kaflab(&["analyze", "--config", p(&configs().join("toy_r1.cfg")), "--out", p(out.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_moment_model(&out.path().join("moments.txt")).unwrap();
    // one atom at the origin, R_u = 0.25 [[1, .5], [.5, 1]], sigma = 0.7
    let s2 = 0.49;
    let (a, b) = (0.25, 0.125);
    let r = det2(1.0 + 2.0 * a / s2, 2.0 * b / s2, 1.0 + 2.0 * a / s2).powf(-0.5);
    let s = det2(1.0 + 4.0 * a / s2, 4.0 * b / s2, 1.0 + 4.0 * a / s2).powf(-0.5);
    assert!((m.r_kappa[(0, 0)] - r).abs() < 1e-14);
    assert!((m.s_tensor.get(0, 0, 0, 0) - s).abs() < 1e-14);
    let (pp, d2, eta) = (m.p[0], m.d2, 0.5);
    let j = d2 - pp * pp / r;
    assert!((m.j_min - j).abs() < 1e-15);
    let kk = 1.0 - 2.0 * eta * r + eta * eta * s;
    let steady = j + r * eta * eta * j * r / (1.0 - kk);
    let got: f64 = kv(&out.path().join("steady_state.txt"), "steady_state_mse").parse().unwrap();
    assert!((got - steady).abs() < 1e-14 * steady, "{got} vs {steady}");
    let k_radius: f64 = kv(&out.path().join("stability.txt"), "k_spectral_radius").parse().unwrap();
    assert!((k_radius - kk.abs()).abs() < 1e-14);
    let bound: f64 = kv(&out.path().join("stability.txt"), "mean_bound").parse().unwrap();
    assert!((bound - 2.0 / r).abs() < 1e-14);
    let theory = read_curve(&out.path().join("theory.csv"), CurveKind::Theoretical).unwrap();
    assert_eq!(theory.len(), 400);
    let mut c = (pp / r) * (pp / r);
    for v in &theory.mse {
        assert!((v - (j + r * c)).abs() < 1e-15, "{v}");
        c = kk * c + eta * eta * j * r;
    }
}

#[test]
fn oversized_step_is_flagged_and_exits_3() {
    let out = tempfile::tempdir().unwrap();
    // mean bound of the single-atom model is 2 / E[kappa^2] ~ 3.91
    let cfg = config_variant(out.path(), "toy_r1.cfg", &[("eta = 0.5", "eta = 19.5"), ("transient_steps = 400", "transient_steps = 50")]);
    let o = kaflab(&["analyze", "--config", p(&cfg), "--out", p(&out.path().join("a"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let st = out.path().join("a/stability.txt");
    assert_eq!(kv(&st, "mean_stability"), "FAIL");
    assert_eq!(kv(&st, "mean_square_stability"), "FAIL");
    assert_eq!(kv(&out.path().join("a/steady_state.txt"), "steady_state_mse"), "unavailable");
    let m = RunManifest::read(&out.path().join("a").join(MANIFEST_NAME)).unwrap();
    assert_eq!(m.files.len(), 4);
}

#[test]
fn compare_identical_and_constant_curves() {
    let out = tempfile::tempdir().unwrap();
    let o = kaflab(&["analyze", "--config", p(&configs().join("toy_r1.cfg")), "--out", p(out.path())]);
    assert_eq!(code(&o), 0);
    let theory = out.path().join("theory.csv");
    let o = kaflab(&["compare", "--sim", p(&theory), "--theory", p(&theory), "--out", p(&out.path().join("same"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = out.path().join("same/metrics.txt");
    for key in ["steady_rel_error", "max_log10_gap", "max_log10_gap_after_50"] {
        assert_eq!(kv(&metrics, key).parse::<f64>().unwrap(), 0.0, "{key}");
    }
    // theory against its own fixed point
    let steady = kv(&out.path().join("steady_state.txt"), "steady_state_mse");
    let mut flat = String::from("n,mse\n");
    for n in 0..400 {
        flat.push_str(&format!("{n},{steady}\n"));
    }
    let flat_path = out.path().join("flat.csv");
    fs::write(&flat_path, flat).unwrap();
    let o = kaflab(&["compare", "--sim", p(&theory), "--theory", p(&flat_path), "--out", p(&out.path().join("flat"))]);
    assert_eq!(code(&o), 0);
    let err: f64 = kv(&out.path().join("flat/metrics.txt"), "steady_rel_error").parse().unwrap();
    assert!(err < 1e-6, "{err}");
    // unequal lengths are truncated with a warning
    let short = out.path().join("short.csv");
    fs::write(&short, "n,mse\n0,1.0\n1,0.5\n2,0.25\n").unwrap();
    let o = kaflab(&["compare", "--sim", p(&theory), "--theory", p(&short), "--out", p(&out.path().join("short"))]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("397 trailing points dropped"), "{}", stderr(&o));
    let overlay = fs::read_to_string(out.path().join("short/overlay.csv")).unwrap();
    assert_eq!(overlay.lines().count(), 4);
    assert!(overlay.starts_with("n,mse_sim,mse_theory\n"));
}

#[test]
fn complexity_table() {
    let out = tempfile::tempdir().unwrap();
    let o = kaflab(&["complexity", "--L", "2", "--r-max", "40", "--s-n", "1", "--out", p(out.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.path().join("complexity.csv")).unwrap();
    let rows: Vec<Vec<i64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 40);
    assert_eq!(rows[24], vec![25, 725, 101]);
    // second differences: full is quadratic, selective with s_n = 1 is linear
    for w in rows.windows(3) {
        assert_eq!(w[2][1] - 2 * w[1][1] + w[0][1], 2);
        assert_eq!(w[2][2] - 2 * w[1][2] + w[0][2], 0);
    }
    let o = kaflab(&["complexity", "--L", "2", "--r-max", "1", "--s-n", "3"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout), "r,full,selective\n1,5,5\n");
}

#[test]
fn moments_check_detects_a_wrong_width() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("experiment1.cfg");
    let o = kaflab(&["moments-check", "--config", p(&cfg), "--samples", "200000", "--entries", "5", "--out", p(out.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let table = fs::read_to_string(out.path().join("moments_check.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 325 + 5);
    let o = kaflab(&["moments-check", "--config", p(&cfg), "--samples", "200000", "--entries", "5", "--sigma-scale", "1.1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains(",FAIL\n"));
}
