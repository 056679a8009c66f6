use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use worldline_core::analytic::{kernel_free, ln_kernel_ho};

const BIN: &str = env!("CARGO_BIN_EXE_worldline");

const HO: &str = r#"
[potential]
kind = "harmonic"
omega = 1.0

[ensemble]
algorithm = "yloop"
n_loops = 500
n_points = 64
seed = 5

[scan]
t_values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]

[histogram]
n_bins = 20
t = 3.0

[classical]
t = 2.0
n_simulations = 3
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rows of a CSV file, after the metadata block and header.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn kernel_scan_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ho.toml", HO);
    let out = dir.path().join("scan.csv");
    let o = run(&["kernel-scan", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# tool = worldline"));
    let meta_blocks = text.lines().collect::<Vec<_>>().windows(2).filter(|w| !w[0].starts_with('#') && w[1].starts_with('#')).count();
    assert_eq!(meta_blocks, 0, "metadata must be one leading block");
    let (header, rows) = table(&out);
    assert_eq!(header, ["t", "ln_K_mc", "sem_ln", "mean_W", "ln_K_analytic", "n_singular_events"]);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let t: f64 = r[0].parse().unwrap();
        let exact = ln_kernel_ho(&[0.0], &[0.0], t, 1.0, 1.0).unwrap();
        assert_eq!(r[4].parse::<f64>().unwrap(), exact);
        // 17 significant digits
        assert_eq!(r[1].split('e').next().unwrap().trim_start_matches('-').len(), 18);
    }
    let manifest = std::fs::read_to_string(dir.path().join("scan.csv.manifest.toml")).unwrap();
    let m: toml::Value = toml::from_str(&manifest).unwrap();
    assert_eq!(m["command"].as_str(), Some("kernel-scan"));
    let seeds = m["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 6);
    assert!(seeds.iter().all(|e| e["seed"].as_str().unwrap().parse::<u64>().is_ok()));
    assert_eq!(m["timings"].as_array().unwrap().len(), 6);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ho.toml", HO);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    assert!(run(&["kernel-scan", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(run(&["kernel-scan", "--config", s(&cfg), "--out", s(&b), "--seed", "6"]).status.success());
    assert!(run(&["kernel-scan", "--config", s(&cfg), "--out", s(&c), "--seed", "5"]).status.success());
    assert_ne!(table(&a).1, table(&b).1);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let o = run(&["kernel-scan", "--config", s(&cfg), "--seed", "18446744073709551615"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn outputs_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ho.toml", HO);
    for cmd in ["generate-loops", "kernel-scan", "pv-hist", "classical"] {
        let mut seen: Option<Vec<u8>> = None;
        for threads in ["1", "2", "4"] {
            let out = dir.path().join(format!("{cmd}-{threads}.csv"));
            let o = run(&[cmd, "--config", s(&cfg), "--out", s(&out), "--threads", threads]);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            let bytes = std::fs::read(&out).unwrap();
            if let Some(prev) = &seen {
                assert_eq!(prev, &bytes, "{cmd} differs at {threads} threads");
            }
            seen = Some(bytes);
        }
    }
}

#[test]
fn stdout_when_no_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ho.toml", HO);
    let o = run(&["pv-hist", "--config", s(&cfg)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("# chi2_p_value = "));
    assert!(text.lines().any(|l| l.starts_with("v_center,density_mc,density_analytic")));
}

#[test]
fn free_scan_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "free.toml",
        r#"
[potential]
kind = "free"

[endpoints]
y = [0.2, -0.1]
x = [1.0, 0.5]

[ensemble]
algorithm = "lsol"
n_loops = 50
n_points = 16
dim = 2

[scan]
t_values = [0.5, 1.5]
"#,
    );
    let out = dir.path().join("free.csv");
    assert!(run(&["kernel-scan", "--config", s(&cfg), "--out", s(&out)]).status.success());
    for r in table(&out).1 {
        let t: f64 = r[0].parse().unwrap();
        let exact = kernel_free(&[0.2, -0.1], &[1.0, 0.5], t, 1.0).unwrap().ln();
        let mc: f64 = r[1].parse().unwrap();
        assert!((mc - exact).abs() < 1e-13, "{mc} vs {exact}");
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn energy_fit_from_saved_scan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ho.toml", HO);
    let scan = dir.path().join("scan.csv");
    assert!(run(&["kernel-scan", "--config", s(&cfg), "--out", s(&scan)]).status.success());
    let fit_cfg = write(
        dir.path(),
        "fit.toml",
        &format!("{HO}\n[fit]\nscan = {:?}\nwindow = [2.0, 6.0]\n", s(&scan)),
    );
    let out = dir.path().join("fit.csv");
    let o = run(&["energy-fit", "--config", s(&fit_cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = table(&out);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert_eq!(rows[0][col("window_source")], "explicit");
    let e: f64 = rows[0][col("energy")].parse().unwrap();
    assert!((e - 0.5).abs() < 0.1, "E0 = {e}");
    assert_eq!(rows[0][col("exact_energy")].parse::<f64>().unwrap(), 0.5);
}

#[test]
fn missing_window_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ho.toml", &format!("{HO}\n[fit]\nmin_points = 50\n"));
    let o = run(&["energy-fit", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &HO.replace("seed = 5", "seed = 5\nn_lops = 3"));
    let o = run(&["kernel-scan", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_lops"));
}

#[test]
fn classical_rejects_non_harmonic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "free.toml", &HO.replace("kind = \"harmonic\"\nomega = 1.0", "kind = \"free\""));
    let o = run(&["classical", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("harmonic"));
}

#[test]
fn failed_run_leaves_existing_output_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("keep.csv");
    std::fs::write(&out, "previous").unwrap();
    let cfg = write(dir.path(), "bad.toml", &HO.replace("t_values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]", "t_values = [2.0, 1.0]"));
    let o = run(&["kernel-scan", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!o.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "previous");
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "stray files: {names:?}");
}

#[test]
fn config_is_required() {
    let o = run(&["kernel-scan"]);
    assert!(!o.status.success());
    let o = run(&["kernel-scan", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_passes() {
    let o = run(&["validate", "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
