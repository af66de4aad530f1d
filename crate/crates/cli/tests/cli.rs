use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mspde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mspde")).args(args).output().expect("binary runs")
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let c = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[c]).collect()
}

#[test]
fn linear_wave_run_conserves_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mspde(&["run", "--problem", "linear-wave", "--q", "1", "--p", "1", "--i", "4", "--T", "1", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = table(&dir.path().join("invariants.csv"));
    assert_eq!(
        header.join(","),
        "t,mass_u,mass_v,mass_w,momentum,energy,dev_mass_u,dev_mass_v,dev_mass_w,dev_momentum,dev_energy"
    );
    assert_eq!(rows.len(), 17);
    assert_eq!(rows[0][0], 0.0);
    assert!((rows[16][0] - 1.0).abs() < 1e-14);
    let dev = column(&header, &rows, "dev_energy");
    assert!(dev.iter().all(|&d| d <= 1e-10), "{dev:?}");
    // initial energy of the harmonic wave
    let e0 = column(&header, &rows, "energy")[0];
    assert!((e0 + std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-2, "{e0}");
}

#[test]
fn csv_numbers_carry_seventeen_digits() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspde(&["run", "--T", "0.125", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("invariants.csv")).unwrap();
    let field = text.lines().nth(1).unwrap().split(',').nth(4).unwrap();
    let mantissa = field.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.replace('.', "").len(), 17, "{field}");
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = mspde(&["run", "--problem", "nonlinear-wave", "--T", "1", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let o = mspde(&["converge", "--imin", "2", "--imax", "4", "--q", "0", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    for name in ["invariants.csv", "convergence.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspde(&["converge", "--q", "0", "--p", "1", "--imin", "2", "--imax", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = table(&dir.path().join("convergence.csv"));
    assert_eq!(header.join(","), "i,h,e_u,e_v,e_w,eoc_u,eoc_v,eoc_w");
    assert_eq!(column(&header, &rows, "i"), vec![2.0, 3.0, 4.0]);
    assert_eq!(column(&header, &rows, "h"), vec![0.25, 0.125, 0.0625]);
    let e = column(&header, &rows, "e_u");
    assert!(e[0] > e[1] && e[1] > e[2]);
    let r = column(&header, &rows, "eoc_u");
    assert!(r[0].is_nan());
    for k in 1..3 {
        let expect = (e[k] / e[k - 1]).ln() / 0.5f64.ln();
        assert!((r[k] - expect).abs() < 1e-12);
    }
    assert!((r[2] - 1.920827).abs() < 0.05, "{r:?}");
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    fs::write(&cfg, "# short nls run\nproblem = nls\nvariant = dg\nq = 0\nT = 0.3\ndt = 0.5 # overridden below\n").unwrap();
    let out = dir.path().join("out");
    let o = mspde(&["run", "--config", cfg.to_str().unwrap(), "--dt", "0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = table(&out.join("invariants.csv"));
    assert_eq!(&header[1..5], ["mass_u", "mass_v", "mass_p", "mass_q"]);
    assert_eq!(rows.len(), 4);
    assert!((rows[1][0] - 0.1).abs() < 1e-15);
}

#[test]
fn invalid_configurations_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad_file = dir.path().join("bad.cfg");
    fs::write(&bad_file, "q 2\n").unwrap();
    let missing = dir.path().join("missing.cfg");
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--variant", "fem", "--out", out],
        vec!["run", "--problem", "heat", "--out", out],
        vec!["run", "--dt", "-0.1", "--out", out],
        vec!["run", "--colour", "red"],
        vec!["converge", "--problem", "nonlinear-wave", "--out", out],
        vec!["converge", "--imin", "4", "--imax", "2", "--out", out],
        vec!["run", "--config", bad_file.to_str().unwrap(), "--out", out],
        vec!["run", "--config", missing.to_str().unwrap(), "--out", out],
    ];
    for args in cases {
        let o = mspde(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!dir.path().join("invariants.csv").exists());
}

#[test]
fn solver_failure_flushes_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = mspde(&[
        "run",
        "--problem",
        "nonlinear-wave",
        "--T",
        "1",
        "--max-newton-iterations",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = table(&dir.path().join("invariants.csv"));
    let last = rows.last().unwrap();
    assert!(last[0].is_finite() && last[0] > 0.0);
    assert!(last[1..].iter().all(|v| v.is_nan()));
    assert_eq!(last.len(), header.len());
    assert!(rows[..rows.len() - 1].iter().all(|r| r.iter().all(|v| v.is_finite())));
}

#[test]
fn verify_reports_and_detects_fault() {
    let o = mspde(&["verify", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("ok")).count() >= 12, "{text}");

    let o = mspde(&["verify", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("FAIL") && l.contains("g-skew-symmetry")), "{text}");
}
