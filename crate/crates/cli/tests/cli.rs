use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn facar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facar"))
        .args(args)
        .env_remove("FACAR_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 6 x 4 design with `y = 3 x1 + 4 x3` exactly.
fn write_toy(dir: &Path) -> (String, String) {
    let x = [
        [1.0, 0.2, -0.5, 0.3],
        [-0.4, 1.1, 0.7, -0.2],
        [0.9, -0.8, 0.1, 0.6],
        [-1.2, 0.3, -0.9, -0.7],
        [0.5, 0.4, 1.3, 0.1],
        [-0.3, -1.0, -0.6, 0.9],
    ];
    let mut design = String::from("x1,x2,x3,x4\n");
    let mut response = String::from("y\n");
    for row in &x {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        design.push_str(&cells.join(","));
        design.push('\n');
        response.push_str(&format!("{}\n", 3.0 * row[0] + 4.0 * row[2]));
    }
    let d = dir.join("X.csv");
    let r = dir.join("y.csv");
    fs::write(&d, design).unwrap();
    fs::write(&r, response).unwrap();
    (d.display().to_string(), r.display().to_string())
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn rank_puts_signals_first() {
    let dir = tempfile::tempdir().unwrap();
    let (d, r) = write_toy(dir.path());
    for method in ["facar", "mr"] {
        let o = facar(&["rank", "--design", &d, "--response", &r, "--method", method, "--k-rule", "fixed:0"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let ranks = column(&stdout(&o), "rank");
        assert_eq!(ranks.len(), 4);
        let mut top: Vec<&str> = vec![&ranks[0], &ranks[2]];
        top.sort();
        assert_eq!(top, ["1", "2"], "{method}: {ranks:?}");
    }
}

#[test]
fn rank_writes_requested_columns_only() {
    let dir = tempfile::tempdir().unwrap();
    let (d, r) = write_toy(dir.path());
    let out = dir.path().join("out");
    let o = facar(&[
        "rank", "--design", &d, "--response", &r, "--method", "mr,rrcs",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "variable,score_mr,rank_mr,score_rrcs,rank_rrcs");
    assert_eq!(scores.lines().count(), 5);
    let resolved = fs::read_to_string(out.join("config_resolved.toml")).unwrap();
    assert!(resolved.contains("methods = [\"mr\", \"rrcs\"]"), "{resolved}");
}

#[test]
fn rank_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (d, r) = write_toy(dir.path());
    let missing = dir.path().join("nope.csv");
    let o = facar(&["rank", "--design", &d, "--response", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"));

    let o = facar(&["rank", "--design", &d, "--response", &r, "--method", "mr1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("glm-rank"));

    let o = facar(&["rank", "--design", &d, "--response", &r, "--method", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn glm_rank_runs_on_binary_response() {
    let dir = tempfile::tempdir().unwrap();
    let mut design = String::new();
    let mut response = String::new();
    for i in 0..40 {
        let a = ((i * 37) % 17) as f64 / 8.0 - 1.0;
        let b = ((i * 11) % 13) as f64 / 6.0 - 1.0;
        let c = ((i * 7) % 19) as f64 / 9.0 - 1.0;
        design.push_str(&format!("{a},{b},{c}\n"));
        // overlapping classes so no separation
        let y = if a + 0.3 * ((i % 5) as f64 - 2.0) > 0.0 { 1 } else { 0 };
        response.push_str(&format!("{y}\n"));
    }
    let d = dir.path().join("X.csv");
    let r = dir.path().join("y.csv");
    fs::write(&d, design).unwrap();
    fs::write(&r, response).unwrap();
    let o = facar(&[
        "glm-rank", "--design", d.to_str().unwrap(), "--response", r.to_str().unwrap(),
        "--method", "glm-facar,mr2", "--k-rule", "fixed:0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(column(&stdout(&o), "rank_mr2")[0], "1");
}

const SMALL: &str = r#"
reps = 2
seed = 7
methods = ["facar", "mr", "holp"]

[design]
kind = "autoregressive"
params = { rho = 0.5 }

[dims]
n = 40
p = 80

[signal]
mode = "fixed"
params = { s = 3, eta = 3.0 }
"#;

fn simulate(dir: &Path, config: &str, name: &str, threads: &str) -> (Output, std::path::PathBuf) {
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(name);
    let o = facar(&[
        "--threads", threads, "simulate", "--config", cfg.to_str().unwrap(), "--out",
        out.to_str().unwrap(),
    ]);
    (o, out)
}

#[test]
fn simulate_is_reproducible_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let (a, out_a) = simulate(dir.path(), SMALL, "a", "1");
    let (b, out_b) = simulate(dir.path(), SMALL, "b", "8");
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success(), "{}", stderr(&b));
    for file in ["roc.csv", "metrics.csv", "per_rep.csv", "config_resolved.toml"] {
        let x = fs::read(out_a.join(file)).unwrap();
        let y = fs::read(out_b.join(file)).unwrap();
        assert!(x == y, "{file} differs between thread counts");
    }
    let metrics = fs::read_to_string(out_a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let roc = fs::read_to_string(out_a.join("roc.csv")).unwrap();
    assert_eq!(roc.lines().next().unwrap(), "fpr,tpr,method");
}

#[test]
fn simulate_schema_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("autoregressive", "banana");
    let (o, _) = simulate(dir.path(), &bad, "bad", "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("design.kind"), "{}", stderr(&o));

    let bad = SMALL.replace("reps = 2", "reps = 2\nrepz = 3");
    let (o, _) = simulate(dir.path(), &bad, "typo", "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("repz"), "{}", stderr(&o));
}

#[test]
fn simulate_lists_presets_and_rejects_zero_threads() {
    let o = facar(&["simulate", "--list-presets"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l == "tridiag_200_1000_3_5"));
    let o = facar(&["--threads", "0", "simulate", "--list-presets"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_reproduces_known_exponents() {
    let o = facar(&["oracle-exponents", "--table1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    assert_eq!(csv.lines().next().unwrap(), "theta,r,h,method,q_star,eta_star");
    assert!(csv.contains("0.5,2,0.8,CAR,"));
    let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("0.5,2,0.8,")).collect();
    let eta: Vec<f64> = rows.iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    for (got, want) in eta.iter().zip([0.5, 0.92, 0.98]) {
        assert!((got - want).abs() < 5e-4, "{rows:?}");
    }

    // without correlation the methods coincide
    let o = facar(&["oracle-exponents", "--triple", "0.6,2,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eta: Vec<String> = stdout(&o).lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect();
    assert_eq!(eta.len(), 3);
    assert!(eta.iter().all(|e| *e == eta[0]), "{eta:?}");

    let o = facar(&["oracle-exponents", "--triple", "1,1,0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = facar(&["oracle-exponents"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_bounds_lemma_and_theorem() {
    let o = facar(&["check-bounds", "--which", "lemma2", "--seeds", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 11);
    assert!(column(&csv, "condition_met").iter().all(|c| c == "true"));

    // outside the hypothesis: reported, not a failure
    let o = facar(&[
        "check-bounds", "--which", "theorem2", "--seeds", "2", "--p-list", "100", "--g0-frac", "0.6",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(column(&stdout(&o), "condition_met").iter().any(|c| c == "false"));

    let o = facar(&["check-bounds", "--which", "lemma3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = facar(&["check-bounds", "--shape", "zigzag"]);
    assert_eq!(o.status.code(), Some(2));
}
