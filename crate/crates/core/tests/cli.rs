use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hamstat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamstat")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    let out = dir.to_str().unwrap();
    all.extend(["--out", out]);
    hamstat(&all)
}

fn read_rows(dir: &Path) -> Vec<(String, f64, String, f64)> {
    let mut r = csv::Reader::from_path(dir.join("report.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["example", "domain", "h", "check", "value"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[2].parse().unwrap(), rec[3].to_string(), rec[4].parse().unwrap())
        })
        .collect()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn dump_mesh_small() {
    let t = tempfile::tempdir().unwrap();
    let o = run_in(t.path(), &["--command", "dump-mesh", "--mesh", "2,8,1.0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mesh: Value = serde_json::from_str(&fs::read_to_string(t.path().join("mesh.json")).unwrap()).unwrap();
    assert_eq!(mesh["nodes"].as_array().unwrap().len(), 17);
    assert_eq!(mesh["triangles"].as_array().unwrap().len(), 8 + 2 * 8);
    assert_eq!(mesh["boundary_edges"].as_array().unwrap().len(), 8);
}

#[test]
fn verify_cone_three_levels() {
    let t = tempfile::tempdir().unwrap();
    let o = run_in(t.path(), &["--command", "verify-example", "--example", "sw:1,2", "--domain", "ball", "--mesh", "8,32", "--refinements", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(t.path());
    let checks = ["lagrangian", "conformality", "structural", "angle_div", "angle_perp_div", "legendrian", "conormal", "neumann_trace", "stationarity"];
    assert_eq!(rows.len(), 3 * checks.len());
    for c in checks {
        let mut per: Vec<(f64, f64)> = rows.iter().filter(|r| r.2 == c).map(|r| (r.1, r.3)).collect();
        assert_eq!(per.len(), 3, "{c}");
        per.sort_by(|a, b| b.0.total_cmp(&a.0));
        for w in per.windows(2) {
            assert!(w[1].1 < w[0].1 || w[1].1 <= 1e-12, "{c}: {per:?}");
        }
    }
    assert!(rows.iter().all(|r| r.0 == "sw:1,2"));
    let s = summary(t.path());
    assert_eq!(s["pass"], Value::Bool(true));
    assert_eq!(s["config"]["example"], "sw:1,2");
}

#[test]
fn nonminimal_needs_curve_domain() {
    let t = tempfile::tempdir().unwrap();
    let o = run_in(t.path(), &["--command", "verify-example", "--example", "nonminimal", "--domain", "ball"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`domain`"));
    assert!(!t.path().join("summary.json").exists());
    let o = run_in(t.path(), &["--command", "masses", "--example", "flat", "--domain", "curve"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn nonminimal_boundary_conditions_fail_as_expected() {
    let t = tempfile::tempdir().unwrap();
    let o = run_in(t.path(), &["--command", "boundary-report", "--example", "nonminimal", "--mesh", "8,32", "--refinements", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(t.path());
    let leg = rows.iter().filter(|r| r.2 == "legendrian").map(|r| r.3).fold(0.0, f64::max);
    assert!((leg - 0.5_f64.sqrt()).abs() < 1e-10, "{leg}");
    assert_eq!(summary(t.path())["config"]["domain"], "curve");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(hamstat(&["--command", "fly"]).status.code(), Some(1));
    assert_eq!(hamstat(&["--mesh", "2,8"]).status.code(), Some(1));
    assert_eq!(hamstat(&["--command", "dump-mesh", "--mesh", "2,x"]).status.code(), Some(1));
    assert_eq!(hamstat(&["--help"]).status.code(), Some(0));
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "command = \"dump-mesh\"\nmesh = { n_rings = 2, n_sectors = 8 }\nwobble = 3\n").unwrap();
    let o = hamstat(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`wobble`"));
    assert_eq!(hamstat(&["--config", t.path().join("missing.toml").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn config_file_and_flag_override() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.toml");
    let out = t.path().join("o");
    fs::write(&cfg, format!("command = \"dump-mesh\"\nmesh = \"4,16\"\noutput_dir = \"{}\"\n", out.display())).unwrap();
    assert_eq!(hamstat(&["--config", cfg.to_str().unwrap(), "--mesh", "2,8"]).status.code(), Some(0));
    let mesh: Value = serde_json::from_str(&fs::read_to_string(out.join("mesh.json")).unwrap()).unwrap();
    assert_eq!(mesh["nodes"].as_array().unwrap().len(), 17);
}

#[test]
fn failed_assertions_exit_two() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "command = \"rigidity\"\nmesh = \"8,32\"\nseeds = [4]\n[solver]\nmax_iters = 1\ncontinuation = []\n").unwrap();
    let o = run_in(t.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(t.path());
    assert_eq!(s["pass"], Value::Bool(false));
    assert!(t.path().join("history_seed4.csv").exists());
}

#[test]
fn rigidity_small_mesh_passes() {
    let t = tempfile::tempdir().unwrap();
    let o = run_in(t.path(), &["--command", "rigidity", "--mesh", "12,48", "--seed", "1", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rows(t.path());
    let fd: Vec<f64> = rows.iter().filter(|r| r.2.ends_with(":final_distance")).map(|r| r.3).collect();
    assert_eq!(fd.len(), 2);
    assert!(fd.iter().all(|&d| d <= 1e-3), "{fd:?}");
    let mut h = csv::Reader::from_path(t.path().join("history_seed1.csv")).unwrap();
    assert_eq!(h.headers().unwrap().iter().collect::<Vec<_>>(), ["iter", "E", "grad_norm", "lagrangian", "boundary_violation"]);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for cmd in [&["--command", "masses", "--example", "sw:2,3"][..], &["--command", "stationarity", "--example", "nonminimal", "--mesh", "6,24", "--refinements", "2"][..]] {
        for d in [&a, &b] {
            assert_eq!(run_in(d.path(), cmd).status.code(), Some(0));
        }
        for f in ["report.csv", "summary.json", "mesh.json"] {
            let (x, y) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
            let strip = |v: Vec<u8>, p: &Path| String::from_utf8(v).unwrap().replace(p.to_str().unwrap(), "OUT");
            assert_eq!(strip(x, a.path()), strip(y, b.path()), "{f}");
        }
    }
}
