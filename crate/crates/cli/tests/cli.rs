use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctrecon"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two positive quarterly bottom series with a total, 40 years.
fn write_inputs(dir: &Path, rows: usize) -> (PathBuf, PathBuf) {
    let hierarchy = dir.join("hierarchy.json");
    fs::write(
        &hierarchy,
        r#"{"agg_matrix": [[1, 1]], "m": 4, "series_names": ["T", "X", "Y"]}"#,
    )
    .unwrap();
    let mut state: u64 = 42;
    let mut noise = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut csv = String::from("T,X,Y\n");
    let (mut x, mut y) = (0.0_f64, 0.0_f64);
    for t in 0..rows {
        x = 0.6 * x + noise();
        y = 0.3 * y + noise();
        let season = [0.4, -0.2, 0.1, -0.3][t % 4];
        let (xv, yv) = (2.0 + x + season, 1.0 + y);
        csv.push_str(&format!("{:?},{xv:?},{yv:?}\n", xv + yv));
    }
    let data = dir.join("data.csv");
    fs::write(&data, csv).unwrap();
    (hierarchy, data)
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

/// Checks `T = X + Y` at every temporal position and that orders aggregate.
fn assert_coherent(header: &[String], row: &[f64]) {
    let col = |name: &str| header.iter().position(|h| h == name).unwrap_or_else(|| panic!("{name}"));
    for label in ["k:4|h:1", "k:2|h:1", "k:2|h:2", "k:1|h:1", "k:1|h:4"] {
        let t = row[col(&format!("series:T|{label}"))];
        let s = row[col(&format!("series:X|{label}"))] + row[col(&format!("series:Y|{label}"))];
        assert!((t - s).abs() < 1e-8 * (1.0 + t.abs()), "{label}: {t} vs {s}");
    }
    for s in ["T", "X", "Y"] {
        let year = row[col(&format!("series:{s}|k:4|h:1"))];
        let q: f64 = (1..=4).map(|j| row[col(&format!("series:{s}|k:1|h:{j}"))]).sum();
        assert!((year - q).abs() < 1e-8 * (1.0 + year.abs()));
    }
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "simulate", "--replicates", "2", "--years", "40", "--L", "60", "--seed", "9", "--output-dir", p(out),
        ]);
    }
    for name in ["frobenius.csv", "crps.csv", "es.csv"] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name}");
        assert!(!x.is_empty());
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["config"]["replicates"], 2);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    let crps = fs::read_to_string(a.join("crps.csv")).unwrap();
    assert!(crps.starts_with("k,method,ctjb,G,B,H,HB\nall,base,1.0,"));
}

#[test]
fn simulate_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"samplers": ["ctjb"], "methods": ["base", "ct(bu)"]}"#).unwrap();
    ok(&[
        "simulate", "--replicates", "1", "--years", "30", "--L", "40", "--grid", p(&grid), "--output-dir",
        p(dir.path()),
    ]);
    let frob = fs::read_to_string(dir.path().join("frobenius.csv")).unwrap();
    assert_eq!(frob.lines().count(), 3);
    assert!(frob.starts_with("method,ctjb\n"));
}

#[test]
fn sample_reconcile_score_chain() {
    let dir = tempfile::tempdir().unwrap();
    let (h, data) = write_inputs(dir.path(), 160);
    let s_dir = dir.path().join("s");
    ok(&[
        "sample", "--hierarchy", p(&h), "--data", p(&data), "--method", "ctjb", "--L", "200", "--output-dir",
        p(&s_dir),
    ]);
    let samples = s_dir.join("samples.csv");
    let (header, rows) = read_rows(&samples);
    assert_eq!(header.len(), 21);
    assert_eq!(rows.len(), 200);

    for (method, omega) in [("oct", "wlsv"), ("oct", "shr"), ("oct", "hb"), ("ct-bu", "ols"), ("ct-cs-bu-te", "ols")] {
        let out = dir.path().join(format!("r_{method}_{omega}"));
        ok(&[
            "reconcile", "--hierarchy", p(&h), "--input", p(&samples), "--data", p(&data), "--method", method,
            "--omega", omega, "--output-dir", p(&out),
        ]);
        let (hdr, rec) = read_rows(&out.join("reconciled.csv"));
        assert_eq!(hdr, header);
        assert_eq!(rec.len(), 200);
        for r in &rec {
            assert_coherent(&hdr, r);
        }
    }

    // observation = first row of a reconciled sample, so it is coherent
    let (hdr, rec) = read_rows(&dir.path().join("r_oct_wlsv/reconciled.csv"));
    let obs = dir.path().join("obs.csv");
    let line: Vec<String> = rec[0].iter().map(|v| format!("{v:?}")).collect();
    fs::write(&obs, format!("{}\n{}\n", hdr.join(","), line.join(","))).unwrap();
    let sc = dir.path().join("sc");
    ok(&[
        "score", "--hierarchy", p(&h), "--observed", p(&obs), "--sample", &format!("base={}", p(&samples)),
        "--sample", &format!("oct={}", p(&dir.path().join("r_oct_wlsv/reconciled.csv"))), "--output-dir", p(&sc),
    ]);
    let scores = fs::read_to_string(sc.join("scores.csv")).unwrap();
    assert!(scores.starts_with("label,benchmark,k,avg_rel_crps,rel_es\nbase,base,all,1.0,1.0\n"));
    assert_eq!(scores.lines().count(), 1 + 2 * 4);

    ok(&[
        "score", "--hierarchy", p(&h), "--observed", p(&obs), "--sample", &format!("base={}", p(&samples)),
        "--format", "json", "--output-dir", p(&sc),
    ]);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(sc.join("scores.json")).unwrap()).unwrap();
    assert_eq!(json[0]["avg_rel_crps_overall"], 1.0);
}

#[test]
fn omega_cache_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (h, data) = write_inputs(dir.path(), 120);
    let s_dir = dir.path().join("s");
    ok(&["sample", "--hierarchy", p(&h), "--data", p(&data), "--L", "20", "--output-dir", p(&s_dir)]);
    let samples = s_dir.join("samples.csv");
    let first = dir.path().join("first");
    ok(&[
        "reconcile", "--hierarchy", p(&h), "--input", p(&samples), "--data", p(&data), "--omega", "bdshr",
        "--output-dir", p(&first),
    ]);
    let second = dir.path().join("second");
    ok(&[
        "reconcile", "--hierarchy", p(&h), "--input", p(&samples), "--omega-cache", p(&first.join("omega.json")),
        "--output-dir", p(&second),
    ]);
    let (_, a) = read_rows(&first.join("reconciled.csv"));
    let (_, b) = read_rows(&second.join("reconciled.csv"));
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
    }
}

#[test]
fn nonneg_reconcile_and_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (h, data) = write_inputs(dir.path(), 120);
    let s_dir = dir.path().join("s");
    ok(&[
        "sample", "--hierarchy", p(&h), "--data", p(&data), "--method", "gaussian", "--cov", "sam", "--L", "300",
        "--output-dir", p(&s_dir),
    ]);
    // shift the draws down so that many are negative
    let (header, rows) = read_rows(&s_dir.join("samples.csv"));
    let shifted = dir.path().join("shifted.csv");
    let mut text = header.join(",") + "\n";
    for r in &rows {
        let line: Vec<String> = r.iter().map(|v| format!("{:?}", v - 2.0)).collect();
        text += &(line.join(",") + "\n");
    }
    fs::write(&shifted, text).unwrap();
    let out = dir.path().join("nn");
    ok(&[
        "reconcile", "--hierarchy", p(&h), "--input", p(&shifted), "--data", p(&data), "--omega", "wlsv",
        "--nonneg", "--output-dir", p(&out),
    ]);
    let (hdr, rec) = read_rows(&out.join("reconciled.csv"));
    assert!(rec.iter().flatten().all(|v| *v >= 0.0));
    for r in &rec {
        assert_coherent(&hdr, r);
    }

    let pipe = dir.path().join("pipe");
    ok(&[
        "pipeline", "--hierarchy", p(&h), "--data", p(&data), "--first-window", "27", "--step", "period", "--L",
        "50", "--method", "base", "--method", "ct(bu)", "--method", "oct(wlsv)", "--nonneg", "--write-samples",
        "--output-dir", p(&pipe),
    ]);
    let origins = fs::read_to_string(pipe.join("origins.csv")).unwrap();
    assert_eq!(origins.lines().count(), 1 + 3 * 3);
    assert!(pipe.join("mcb.csv").exists());
    let files: Vec<PathBuf> = fs::read_dir(pipe.join("samples")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 9);
    for f in files {
        let (hdr, rows) = read_rows(&f);
        assert!(rows.iter().flatten().all(|v| *v >= 0.0), "{}", f.display());
        if !f.to_string_lossy().contains("base") {
            for r in &rows {
                assert_coherent(&hdr, r);
            }
        }
    }
}

#[test]
fn pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (h, data) = write_inputs(dir.path(), 120);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        ok(&[
            "pipeline", "--hierarchy", p(&h), "--data", p(&data), "--first-window", "28", "--L", "40", "--jobs",
            jobs, "--output-dir", p(out),
        ]);
    }
    for name in ["scores.csv", "origins.csv", "mcb.csv", "coherence.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    // hf step: (30 - 28 - 1) * 4 + 1 origins
    let origins = fs::read_to_string(a.join("origins.csv")).unwrap();
    assert_eq!(origins.lines().count(), 1 + 5 * 4);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (h, _) = write_inputs(dir.path(), 16);
    let (_, bad) = write_inputs(&dir.path().join(""), 15);
    let out = run(&["sample", "--hierarchy", p(&h), "--data", p(&bad), "--output-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["kind"], "validation");
    assert!(err["message"].as_str().unwrap().contains("not divisible by m"));

    let garbled = dir.path().join("garbled.csv");
    fs::write(&garbled, "T,X,Y\n1,2,3\n1,oops,3\n").unwrap();
    let out = run(&["sample", "--hierarchy", p(&h), "--data", p(&garbled)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = run(&["simulate", "--years", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn numerical_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.json");
    fs::write(&h, r#"{"agg_matrix": [[1, 1]], "m": 2, "series_names": ["T", "X", "Y"]}"#).unwrap();
    // Y is constant, so its residual variances are zero
    let mut csv = String::from("T,X,Y\n");
    for t in 0..80 {
        let x = ((t * 7919) % 13) as f64;
        csv.push_str(&format!("{:?},{x:?},5.0\n", x + 5.0));
    }
    let data = dir.path().join("d.csv");
    fs::write(&data, csv).unwrap();
    let input = dir.path().join("in.csv");
    fs::write(
        &input,
        "series:T|k:2|h:1,series:T|k:1|h:1,series:T|k:1|h:2,series:X|k:2|h:1,series:X|k:1|h:1,series:X|k:1|h:2,series:Y|k:2|h:1,series:Y|k:1|h:1,series:Y|k:1|h:2\n2,1,1,1,1,1,1,1,1\n",
    )
    .unwrap();
    let out = run(&[
        "reconcile", "--hierarchy", p(&h), "--input", p(&input), "--data", p(&data), "--omega", "wlsv",
        "--output-dir", p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["kind"], "numerical");
}
