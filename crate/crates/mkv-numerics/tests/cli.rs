use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const GAUSSIAN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/gaussian.json");

fn mkv(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mkv")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn run_in(sub: &str, config: &Path, dir: &Path) -> i32 {
    mkv(&[sub, "-c", config.to_str().unwrap(), "-o", dir.to_str().unwrap()]).0
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const MINIMAL: &str = r#"{
  "problem": "holder-drift",
  "seed": 3,
  "initial": { "kind": "normal", "mean": 0.5, "sd": 0.5 },
  "simulation": { "t": 0.0, "T": 0.25, "n_steps": 10, "n_particles": 20 },
  "constants": { "c": 1.0, "gamma": 1.0, "k_max": 5 }
}"#;

#[test]
fn constants_table_starts_with_the_closed_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    assert_eq!(run_in("constants", &cfg, dir.path()), 0);
    let mut rdr = csv::Reader::from_path(dir.path().join("constants.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["k", "c_k", "log_c_k", "asymptotic"]);
    let rows: Vec<(usize, f64)> =
        rdr.records().map(|r| r.unwrap()).map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    assert_eq!(rows.len(), 5);
    let pi = std::f64::consts::PI;
    for (row, (k, v)) in rows.iter().take(3).zip([(1, 1.0), (2, pi), (3, 2.0 * pi)]) {
        assert_eq!(row.0, k);
        assert!((row.1 - v).abs() <= 1e-12 * v, "{row:?}");
    }
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_in("simulate", &cfg, &a), 0);
    assert_eq!(run_in("simulate", &cfg, &b), 0);
    for f in ["paths.csv", "flow.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn picard_writes_its_increments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    assert_eq!(run_in("picard", &cfg, dir.path()), 0);
    assert_eq!(header(&dir.path().join("picard.csv")), "m,delta_m,w2_gap");
}

#[test]
fn every_subcommand_runs_on_the_gaussian_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(GAUSSIAN);
    for sub in ["simulate", "picard", "density", "constants", "derivative-scan", "u-check"] {
        assert_eq!(run_in(sub, cfg, dir.path()), 0, "{sub}");
    }
    assert_eq!(header(&dir.path().join("density.csv")), "y,density,order_0,order_1,order_2,order_3,tail_bound");
    assert_eq!(header(&dir.path().join("scan.csv")), "s,s_minus_t,magnitude,log_s_minus_t,log_magnitude");
    assert_eq!(header(&dir.path().join("u.csv")), "T,feynman_kac,stderr,parametrix,abs_diff,tolerance");
    assert!(dir.path().join("scan_fit.json").exists());
}

#[test]
fn verify_passes_on_the_gaussian_config() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout) = mkv(&["verify", "-c", GAUSSIAN, "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    let entries = json.as_object().unwrap();
    assert!(!entries.is_empty());
    assert!(entries.values().all(|e| e["pass"] == true));
}

#[test]
fn bad_invocations_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mkv(&["teleport", "-c", GAUSSIAN]).0, 2);
    assert_eq!(mkv(&["simulate"]).0, 2);
    let unknown = write_config(dir.path(), &MINIMAL.replace("holder-drift", "heat"));
    assert_eq!(run_in("simulate", &unknown, dir.path()), 2);
    let garbled = write_config(dir.path(), "{ \"problem\": ");
    assert_eq!(run_in("simulate", &garbled, dir.path()), 2);
    // no scan section
    let bare = write_config(dir.path(), MINIMAL);
    assert_eq!(run_in("derivative-scan", &bare, dir.path()), 2);
}
