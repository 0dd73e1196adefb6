use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heis-mfg"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn run_config(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args, out)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    rd.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn load_config(name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(config(name)).unwrap()).unwrap()
}

fn mul(x: [f64; 3], y: [f64; 3]) -> [f64; 3] {
    [
        x[0] + y[0],
        x[1] + y[1],
        x[2] + y[2] - x[1] * y[0] + x[0] * y[1],
    ]
}

fn dir_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn geom_sample_points_match_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("geom");
    let o = run(&["geom"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = read_csv(&out.join("pavage.csv"));
    let golden = read_csv(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/pavage_golden.csv"));
    assert_eq!(got.len(), golden.len());
    for (g, e) in got.iter().zip(&golden) {
        let g: Vec<f64> = g.iter().map(|s| s.parse().unwrap()).collect();
        let e: Vec<f64> = e.iter().map(|s| s.parse().unwrap()).collect();
        for c in 0..9 {
            assert!((g[c] - e[c]).abs() <= 1e-12, "{g:?} vs {e:?}");
        }
        // n ⊕ q reconstructs x, with n integral and q in the unit cube
        let x = mul([g[3], g[4], g[5]], [g[6], g[7], g[8]]);
        for c in 0..3 {
            assert_eq!(g[3 + c], g[3 + c].round());
            assert!((0.0..1.0).contains(&g[6 + c]));
            assert!((x[c] - g[c]).abs() <= 1e-12);
        }
    }
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["n_points"], 24);
    assert_eq!(read_csv(&out.join("torus_dist.csv")).len(), 24 * 23 / 2);
}

#[test]
fn geom_group_table_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("geom");
    assert_eq!(code(&run(&["geom"], &out)), 0);
    let pts: Vec<[f64; 3]> = read_csv(&out.join("pavage.csv"))
        .iter()
        .map(|r| [r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap()])
        .collect();
    for r in read_csv(&out.join("group_table.csv")) {
        let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
        let (i, j) = (v[0] as usize, v[1] as usize);
        let p = mul(pts[i], pts[j]);
        let inv = mul(pts[i], [v[5], v[6], v[7]]);
        for c in 0..3 {
            assert!((p[c] - v[2 + c]).abs() <= 1e-12);
            assert!(inv[c].abs() <= 1e-12);
        }
    }
}

#[test]
fn geom_empty_list_writes_empty_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let pts = tmp.path().join("empty.csv");
    fs::write(&pts, "x1,x2,x3\n").unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &serde_json::json!({ "geom": { "points": pts } }),
    );
    let out = tmp.path().join("out");
    let o = run_config("geom", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(read_csv(&out.join("pavage.csv")).is_empty());
    assert!(read_csv(&out.join("group_table.csv")).is_empty());
    assert!(read_csv(&out.join("torus_dist.csv")).is_empty());
}

#[test]
fn geom_malformed_row_reports_row_number() {
    let tmp = tempfile::tempdir().unwrap();
    let pts = tmp.path().join("bad.csv");
    fs::write(&pts, "x1,x2,x3\n0.1,0.2,0.3\n0.4,oops,0.6\n").unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfg.json",
        &serde_json::json!({ "geom": { "points": pts } }),
    );
    let out = tmp.path().join("out");
    let o = run_config("geom", &cfg, &out, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
    assert!(!out.exists(), "no output on invalid input");
}

#[test]
fn continuity_missing_drift_fails_before_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = load_config("rotating.json");
    v["continuity"].as_object_mut().unwrap().remove("drift");
    let cfg = write_config(tmp.path(), "cfg.json", &v);
    let out = tmp.path().join("out");
    let o = run_config("continuity", &cfg, &out, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("drift"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn invalid_counts_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = load_config("rotating.json");
    v["continuity"]["steps"] = serde_json::json!(0);
    let cfg = write_config(tmp.path(), "cfg.json", &v);
    let out = tmp.path().join("out");
    assert_eq!(code(&run_config("continuity", &cfg, &out, &[])), 1);
    assert!(!out.exists());

    let mut v = load_config("quick_mfg.json");
    v["mfg"]["solver"]["tol"] = serde_json::json!(-1.0);
    let cfg = write_config(tmp.path(), "cfg2.json", &v);
    assert_eq!(code(&run_config("mfg", &cfg, &out, &[])), 1);
    assert!(!out.exists());
}

#[test]
fn unknown_config_fields_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = load_config("zero_hjb.json");
    v["hjb"]["horizn"] = serde_json::json!(1.0);
    let cfg = write_config(tmp.path(), "cfg.json", &v);
    let o = run_config("hjb", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("horizn"), "{}", stderr(&o));
}

#[test]
fn zero_drift_residuals_vanish() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run_config("continuity", &config("zero_drift.json"), &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&out.join("residuals.csv"));
    assert!(!rows.is_empty());
    for r in rows {
        let res: f64 = r[4].parse().unwrap();
        assert!(res.abs() <= 1e-14, "{r:?}");
    }
}

fn max_residual(cfg: &Path, out: &Path) -> (i32, f64) {
    let o = run_config("continuity", cfg, out, &[]);
    let m = read_json(&out.join("manifest.json"));
    (code(&o), m["max_residual"].as_f64().unwrap())
}

#[test]
fn rotating_config_passes_threshold_and_refines() {
    let tmp = tempfile::tempdir().unwrap();
    let (status, fine) = max_residual(&config("rotating.json"), &tmp.path().join("fine"));
    assert_eq!(status, 0);
    assert!(fine <= 5e-3);

    // 4x coarser in both dt and atom count
    let mut v = load_config("rotating.json");
    v["continuity"]["dt"] = serde_json::json!(0.04);
    v["continuity"]["m0"]["n"] = serde_json::json!(5000);
    v["continuity"]["steps"] = serde_json::json!(5);
    v["continuity"]["horizon"] = serde_json::json!(1.0);
    v["continuity"]["threshold"] = serde_json::json!(1e-9);
    let cfg = write_config(tmp.path(), "coarse.json", &v);
    let (status, coarse) = max_residual(&cfg, &tmp.path().join("coarse"));
    assert_eq!(status, 2, "threshold exceeded is flagged");
    assert!(coarse >= 3.0 * fine, "coarse {coarse} fine {fine}");
}

#[test]
fn zero_data_hjb_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run_config("hjb", &config("zero_hjb.json"), &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&out.join("manifest.json"));
    let files = m["files"].as_array().unwrap();
    assert_eq!(files.len(), 5);
    for f in files {
        let text = fs::read_to_string(out.join(f.as_str().unwrap())).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("8,8,8"));
        let vals: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
        assert_eq!(vals.len(), 512);
        assert!(vals.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn mfg_exit_code_reflects_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("quick");
    let o = run_config("mfg", &config("quick_mfg.json"), &out, &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["converged"], false);
    let res = m["residuals"].as_array().unwrap();
    assert_eq!(res.len(), m["iterations"].as_u64().unwrap() as usize);
    assert!(m["holder"]["exponent"].as_f64().unwrap().is_finite());
    assert!(m["certificate_max_gap"].as_f64().unwrap() >= 0.0);
    assert_eq!(read_csv(&out.join("residuals.csv")).len(), res.len());
    assert!(out.join("value/manifest.json").exists());

    // without coupling the static flow is already the equilibrium
    let mut v = load_config("quick_mfg.json");
    v["mfg"]["coupling"]["weight_f"] = serde_json::json!(0.0);
    v["mfg"]["coupling"]["weight_g"] = serde_json::json!(0.0);
    let cfg = write_config(tmp.path(), "zero.json", &v);
    let out = tmp.path().join("zero");
    let o = run_config("mfg", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["converged"], true);
    assert_eq!(m["certificate_max_gap"].as_f64().unwrap(), 0.0);
    assert!(m["holder"]["exponent"].is_null());
    assert_eq!(m["holder"]["c1"].as_f64().unwrap(), 0.0);
}

#[test]
fn mfg_flow_dump_keeps_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = load_config("quick_mfg.json");
    v["mfg"]["solver"]["max_iter"] = serde_json::json!(2);
    v["mfg"]["dump_flow"] = serde_json::json!(true);
    let cfg = write_config(tmp.path(), "cfg.json", &v);
    let out = tmp.path().join("out");
    run_config("mfg", &cfg, &out, &[]);
    let flows: Vec<_> = fs::read_dir(out.join("flow")).unwrap().collect();
    assert_eq!(flows.len(), 9);
    // static start plus one response per iteration
    let rows = read_csv(&out.join("flow/m_0008.csv"));
    assert_eq!(rows.len(), 3 * 2048);
    let mass: f64 = rows.iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert!((mass - 1.0).abs() < 1e-9);
}

#[test]
fn zero_sigma_law_distances_vanish() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run_config("viscous", &config("viscous_zero.json"), &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&out.join("distances.csv"));
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
    }
    assert!(out.join("manifest.json").exists());
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("continuity", config("rotating.json")),
        ("viscous", config("viscous.json")),
        ("mfg", config("quick_mfg.json")),
    ];
    for (sub, cfg) in cases {
        let a = tmp.path().join(format!("{sub}_a"));
        let b = tmp.path().join(format!("{sub}_b"));
        let ca = code(&run_config(sub, &cfg, &a, &[]));
        let cb = code(&run_config(sub, &cfg, &b, &[]));
        assert_eq!(ca, cb);
        let (fa, fb) = (dir_files(&a), dir_files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{sub} outputs differ");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("viscous.json");
    let outputs: Vec<Vec<u8>> = [&[][..], &["--seed", "3"], &["--seed", "4"]]
        .iter()
        .enumerate()
        .map(|(k, extra)| {
            let out = tmp.path().join(k.to_string());
            assert_eq!(code(&run_config("viscous", &cfg, &out, extra)), 0);
            fs::read(out.join("distances.csv")).unwrap()
        })
        .collect();
    // the config's own seed is 3
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[1], outputs[2]);
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["geom"], &out)), 0);
    let before = fs::read(out.join("pavage.csv")).unwrap();
    let o = run(&["geom"], &out);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"));
    assert_eq!(fs::read(out.join("pavage.csv")).unwrap(), before);
    assert_eq!(code(&run(&["geom", "--force"], &out)), 0);
}

#[test]
fn verify_all_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["verify-all"], &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(!text.contains("FAIL"));
    let checks = read_json(&out.join("verify.json"));
    assert!(checks.as_array().unwrap().iter().all(|c| c["passed"] == true));
}
