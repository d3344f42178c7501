use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_paleocorr"));
    c.env_clear().env("PATH", std::env::var("PATH").unwrap_or_default());
    c
}

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = bin();
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str], env: &[(&str, &str)]) -> Output {
    let out = run(args, env);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn summary(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(dir.join("summary.txt"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn value_column(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == "value").unwrap();
    lines.map(|l| l.split(',').nth(j).unwrap().to_string()).collect()
}

fn write_record(path: &Path, ages: &[f64], values: &[f64]) {
    let mut text = String::from("age,value\n");
    for (a, v) in ages.iter().zip(values) {
        writeln!(text, "{a},{v}").unwrap();
    }
    std::fs::write(path, text).unwrap();
}

fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn simulated(dir: &Path, seed: &str, env: &[(&str, &str)]) -> PathBuf {
    let out = dir.join(format!("sim{seed}"));
    ok(&["--out", s(&out), "--seed", seed, "simulate"], env);
    out
}

#[test]
fn simulate_writes_records_dates_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulated(dir.path(), "3", &[]);
    for f in [
        "x_record.csv",
        "y_record.csv",
        "x_dates.csv",
        "y_dates.csv",
        "x_ages.csv",
        "y_ages.csv",
        "x_true.csv",
        "y_true.csv",
        "config.toml",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let cfg = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(cfg.contains("seed = 3"));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "11", &[]);
    let again = dir.path().join("again");
    ok(&["--out", s(&again), "--seed", "11", "simulate"], &[]);
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&again));
    let other = simulated(dir.path(), "12", &[]);
    assert_ne!(read_dir_bytes(&a)["x_true.csv"], read_dir_bytes(&other)["x_true.csv"]);
}

#[test]
fn full_coupling_gives_identical_latent_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulated(dir.path(), "4", &[("PALEOCORR__SIMULATE__COUPLING", "1.0")]);
    assert_eq!(value_column(&out.join("x_true.csv")), value_column(&out.join("y_true.csv")));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = simulated(dir.path(), "21", &[("PALEOCORR__SIMULATE__N_OBS", "80")]);
    let replay = dir.path().join("replay");
    ok(&["--config", s(&first.join("config.toml")), "--out", s(&replay), "simulate"], &[]);
    assert_eq!(read_dir_bytes(&first), read_dir_bytes(&replay));
}

#[test]
fn self_correlation_is_strongly_positive() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("a.csv");
    let ages: Vec<f64> = (0..200).map(|i| 100.0 * i as f64).collect();
    write_record(&rec, &ages, &white_noise(200, 1));
    let out = dir.path().join("c");
    ok(&["--out", s(&out), "correlate", s(&rec), s(&rec)], &[]);
    let sm = summary(&out);
    assert!(sm["mode"].parse::<f64>().unwrap() > 0.95, "{sm:?}");
    assert_eq!(sm["sign"], "positive");
    let draws = std::fs::read_to_string(out.join("draws.txt")).unwrap();
    assert_eq!(draws.lines().count(), sm["n_draws"].parse::<usize>().unwrap());
}

#[test]
fn independent_noise_is_mostly_indifferent() {
    let dir = tempfile::tempdir().unwrap();
    let runs = 40;
    let mut indifferent = 0;
    for k in 0..runs {
        let a = dir.path().join(format!("a{k}.csv"));
        let b = dir.path().join(format!("b{k}.csv"));
        let ta: Vec<f64> = (0..150).map(|i| 100.0 * i as f64).collect();
        let tb: Vec<f64> = (0..150).map(|i| 100.0 * i as f64 + 37.0).collect();
        write_record(&a, &ta, &white_noise(150, 1000 + 2 * k));
        write_record(&b, &tb, &white_noise(150, 1001 + 2 * k));
        let out = dir.path().join(format!("c{k}"));
        let seed = k.to_string();
        ok(&["--out", s(&out), "--seed", &seed, "correlate", s(&a), s(&b)], &[]);
        indifferent += (summary(&out)["sign"] == "indifferent") as usize;
    }
    assert!(indifferent as f64 >= 0.9 * runs as f64, "{indifferent}/{runs}");
}

#[test]
fn ensemble_pools_draws() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), "8", &[]);
    let base = [
        s(&sim.join("x_record.csv")).to_string(),
        s(&sim.join("y_record.csv")).to_string(),
        "--dates-a".into(),
        s(&sim.join("x_dates.csv")).to_string(),
        "--dates-b".into(),
        s(&sim.join("y_dates.csv")).to_string(),
    ];
    let count = |extra: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["--out", s(&out), "correlate"];
        args.extend(base.iter().map(String::as_str));
        args.extend(extra);
        ok(&args, &[]);
        std::fs::read_to_string(out.join("draws.txt")).unwrap().lines().count()
    };
    let single = count(&[], "single");
    assert_eq!(count(&["--ensemble", "10"], "ens"), 10 * single);
}

#[test]
fn ensemble_without_dates_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), "8", &[]);
    let out = dir.path().join("c");
    let r = run(
        &["--out", s(&out), "correlate", s(&sim.join("x_record.csv")), s(&sim.join("y_record.csv")), "--ensemble", "3"],
        &[],
    );
    assert_eq!(r.status.code(), Some(2));
}

fn window_rows(dir: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(dir.join("windows.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    assert_eq!(header.join(","), "start,end,mode,q5,q95,sign,n_a,n_b,flag");
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

#[test]
fn twenty_thousand_years_give_seven_windows() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let ages: Vec<f64> = (0..=200).map(|i| 100.0 * i as f64).collect();
    write_record(&a, &ages, &white_noise(201, 5));
    write_record(&b, &ages, &white_noise(201, 6));
    let out = dir.path().join("w");
    ok(&["--out", s(&out), "windows", s(&a), s(&b)], &[]);
    let rows = window_rows(&out);
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0]["start"], "0");
    assert_eq!(rows[6]["end"], "20000");
}

#[test]
fn coupled_pair_windows_are_positive_and_sparse_windows_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let n = 300;
    let shared = white_noise(n, 40);
    let noise = white_noise(n, 41);
    let y: Vec<f64> = shared.iter().zip(&noise).map(|(s, e)| s + 0.3 * e).collect();
    // Dense sampling except for a gap between 16 and 24 ka.
    let mut ages: Vec<f64> = (0..n).map(|i| 100.0 * i as f64).collect();
    let keep: Vec<usize> = (0..n).filter(|&i| !(160..240).contains(&i) || i % 40 == 0).collect();
    ages = keep.iter().map(|&i| ages[i]).collect();
    let xv: Vec<f64> = keep.iter().map(|&i| shared[i]).collect();
    let yv: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_record(&a, &ages, &xv);
    write_record(&b, &ages, &yv);
    let out = dir.path().join("w");
    ok(&["--out", s(&out), "windows", s(&a), s(&b)], &[("PALEOCORR__WINDOWS__WIDTH", "4000.0"), ("PALEOCORR__WINDOWS__STEP", "4000.0")]);
    let rows = window_rows(&out);
    let flagged: Vec<_> = rows.iter().filter(|r| !r["flag"].is_empty()).collect();
    assert!(!flagged.is_empty());
    for r in &flagged {
        assert_eq!(r["flag"], "insufficient");
        assert!(r["n_a"].parse::<usize>().unwrap() < 5);
    }
    for r in rows.iter().filter(|r| r["flag"].is_empty()) {
        assert_eq!(r["sign"], "positive", "{r:?}");
    }
}

#[test]
fn windows_with_lag_scan_write_the_scan() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), "2", &[]);
    let out = dir.path().join("w");
    ok(
        &["--out", s(&out), "windows", "--lag-scan", s(&sim.join("x_record.csv")), s(&sim.join("y_record.csv"))],
        &[("PALEOCORR__WINDOWS__LAG_MIN", "-400.0"), ("PALEOCORR__WINDOWS__LAG_MAX", "400.0"), ("PALEOCORR__WINDOWS__LAG_STEP", "200.0")],
    );
    let scan = std::fs::read_to_string(out.join("lag_scan.csv")).unwrap();
    assert_eq!(scan.lines().count(), 6);
    assert!(!window_rows(&out).is_empty());
}

#[test]
fn calibrate_writes_age_model() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), "6", &[]);
    let out = dir.path().join("cal");
    ok(
        &[
            "--out",
            s(&out),
            "calibrate",
            "--dates",
            s(&sim.join("x_dates.csv")),
            "--record",
            s(&sim.join("x_record.csv")),
        ],
        &[("PALEOCORR__CHRONOLOGY__REALIZATIONS", "20")],
    );
    let dates = std::fs::read_to_string(sim.join("x_dates.csv")).unwrap();
    let cal = std::fs::read_to_string(out.join("calibrated_dates.csv")).unwrap();
    assert_eq!(cal.lines().count(), dates.lines().count());
    let ages = std::fs::read_to_string(out.join("ages.csv")).unwrap();
    assert!(ages.lines().next().unwrap().ends_with(",r20"));
    for line in ages.lines().skip(1).take(3) {
        assert_eq!(line.split(',').count(), 22);
    }
    assert_eq!(
        value_column(&out.join("record_median.csv")),
        value_column(&sim.join("x_record.csv"))
    );
}

const SMALL_SWEEP: [(&str, &str); 3] = [
    ("PALEOCORR__EXPERIMENT__METHODS", "[\"G(0.5)\"]"),
    ("PALEOCORR__EXPERIMENT__SCENARIOS", "[\"unequal\"]"),
    ("PALEOCORR__INFERENCE__N_STEPS", "4000"),
];

#[test]
fn small_experiment_store() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    ok(&["--out", s(&out), "experiment", "--pairs", "2"], &SMALL_SWEEP);
    let store = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = store.lines().collect();
    assert_eq!(lines.len(), 3);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));
    for f in ["null_results.csv", "scores.csv", "metrics.csv", "roc.csv", "auc.csv", "agreement.csv", "summary.txt", "config.toml"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let again = dir.path().join("again");
    ok(&["--config", s(&out.join("config.toml")), "--out", s(&again), "experiment"], &[]);
    assert_eq!(read_dir_bytes(&out), read_dir_bytes(&again));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[inference]\nsteps = 3\n").unwrap();
    assert_eq!(run(&["--config", s(&bad_cfg), "--out", s(&out), "simulate"], &[]).status.code(), Some(2));
    assert_eq!(run(&["--out", s(&out), "simulate"], &[("PALEOCORR__SIMULATE__COUPLING", "2.0")]).status.code(), Some(2));

    let garbage = dir.path().join("g.csv");
    std::fs::write(&garbage, "age,value\n1,abc\n").unwrap();
    assert_eq!(run(&["--out", s(&out), "correlate", s(&garbage), s(&garbage)], &[]).status.code(), Some(3));
    let missing = dir.path().join("missing.csv");
    assert_eq!(run(&["--out", s(&out), "correlate", s(&missing), s(&missing)], &[]).status.code(), Some(3));

    let flat = dir.path().join("flat.csv");
    let ages: Vec<f64> = (0..50).map(|i| i as f64 * 10.0).collect();
    write_record(&flat, &ages, &vec![1.0; 50]);
    assert_eq!(run(&["--out", s(&out), "correlate", s(&flat), s(&flat)], &[]).status.code(), Some(4));
}
