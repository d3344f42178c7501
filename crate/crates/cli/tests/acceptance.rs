//! Acceptance suite. Runs without the libtest harness so every check prints
//! one PASS/FAIL line; the process fails if any check fails.
//!
//! `ACCEPTANCE_PAIRS` overrides the number of benchmark pairs (default 200).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use paleocorr::alignment::{lag_scan, AlignedPairs, AlignmentSpec, Method};
use paleocorr::bayes::{metropolis, InferenceConfig, Sign};
use paleocorr::chronology::{
    build_age_ensemble, calibrate_date, forward_date, CalibrationCurve, EnsembleSettings,
};
use paleocorr::experiments::{
    agreement_matrix, group_metrics, roc_table, run_suite, simulate_pair, ForwardModel, RealizationResult,
    ScenarioKind, SuiteConfig, SuiteResults,
};
use paleocorr::pseudoproxy::{deposit, gamma_shape_scale, generate_ou, latent_pair, PseudoproxyParams};
use paleocorr::rng::stream;
use paleocorr::series::{mean, pearson, variance};
use paleocorr::TimeSeries;
use rand_distr::{Distribution, StandardNormal};

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

fn sampler_matches_sample_correlation() -> Check {
    let cfg = InferenceConfig::default();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (j, &rho) in [0.0, 0.3, 0.7].iter().enumerate() {
        let mut total = 0.0;
        for k in 0..100u64 {
            let mut rng = stream(0xACCE, &[1, j as u64, k]);
            let s = (1.0f64 - rho * rho).sqrt();
            let (mut x, mut y) = (Vec::with_capacity(500), Vec::with_capacity(500));
            for _ in 0..500 {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                x.push(a);
                y.push(rho * a + s * b);
            }
            let r = pearson(&x, &y);
            let post = metropolis(&AlignedPairs::new(x, y).unwrap(), &cfg.with_stream(&[j as u64, k])).unwrap();
            total += (post.mode() - r).abs();
        }
        let m = total / 100.0;
        worst = worst.max(m);
        parts.push(format!("rho={rho}: {m:.4}"));
    }
    check(
        "posterior mode tracks the sample correlation (mean |mode - r| < 0.05)",
        worst < 0.05,
        parts.join(", "),
    )
}

/// Asymptotic Kolmogorov tail with the small-sample correction of Stephens.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

fn prior_is_uniform() -> Check {
    let cfg = InferenceConfig {
        n_steps: 300_000,
        n_keep: 10_000,
        fixed_eta: Some(1.0),
        prior_only: true,
        seed: 0xACCE,
        ..InferenceConfig::default()
    };
    let dummy = AlignedPairs::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 2.0]).unwrap();
    let mut draws = metropolis(&dummy, &cfg).unwrap().rho_draws;
    draws.sort_by(f64::total_cmp);
    let n = draws.len();
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let f = (r + 1.0) / 2.0;
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    let p = ks_p_value(d, n);
    check(
        "prior-only chain gives uniform correlations (KS p > 0.01)",
        p > 0.01,
        format!("n = {n}, D = {d:.4}, p = {p:.3}"),
    )
}

fn cells(
    r: &[RealizationResult],
    method: AlignmentSpec,
    kind: ScenarioKind,
    keep: impl Fn(&RealizationResult) -> bool,
) -> Vec<&RealizationResult> {
    r.iter().filter(|x| x.method == method && x.scenario.kind == kind && keep(x)).collect()
}

fn median_bias(r: &[RealizationResult], m: AlignmentSpec, k: ScenarioKind, keep: impl Fn(&RealizationResult) -> bool) -> f64 {
    group_metrics("", m, k, &cells(r, m, k, keep)).map(|g| g.median_scaled_bias).unwrap_or(f64::NAN)
}

fn equal_sampling_is_unbiased(s: &SuiteResults) -> Check {
    let li = median_bias(&s.coupled, AlignmentSpec::linear(), ScenarioKind::Equal, |_| true);
    let g = median_bias(&s.coupled, AlignmentSpec::gaussian(0.5), ScenarioKind::Equal, |_| true);
    let ok = |b: f64| (-0.15..=0.15).contains(&b);
    check(
        "equal sampling: median scaled bias within [-0.15, 0.15] for LI and G(0.5)",
        ok(li) && ok(g),
        format!("LI {li:+.3}, G(0.5) {g:+.3}"),
    )
}

fn persistence_collapses_under_unequal_sampling(s: &SuiteResults) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in AlignmentSpec::defaults() {
        let hi = median_bias(&s.coupled, m, ScenarioKind::Unequal, |r| (0.7..=0.9).contains(&r.params.drag));
        let lo = median_bias(&s.coupled, m, ScenarioKind::Unequal, |r| (0.01..=0.1).contains(&r.params.drag));
        pass &= (-1.2..=-0.6).contains(&hi) && (-0.4..=0.1).contains(&lo);
        parts.push(format!("{m} hi {hi:+.3} lo {lo:+.3}"));
    }
    check(
        "unequal sampling: bias in [-1.2, -0.6] for theta in [0.7, 0.9], in [-0.4, 0.1] for theta in [0.01, 0.1]",
        pass,
        parts.join("; "),
    )
}

fn nearest_and_slotting_are_wider(s: &SuiteResults) -> Check {
    let idr = |m: AlignmentSpec, k: ScenarioKind| {
        group_metrics("", m, k, &cells(&s.coupled, m, k, |_| true)).map(|g| g.median_scaled_idr).unwrap_or(f64::NAN)
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for k in ScenarioKind::ALL {
        let wide = [idr(AlignmentSpec::nearest(), k), idr(AlignmentSpec::slotting(2.0), k)];
        let narrow = [idr(AlignmentSpec::linear(), k), idr(AlignmentSpec::gaussian(0.5), k)];
        let lowest_wide = wide[0].min(wide[1]);
        let highest_narrow = narrow[0].max(narrow[1]);
        pass &= lowest_wide > highest_narrow;
        parts.push(format!(
            "{k}: NV {:.3} S(2) {:.3} LI {:.3} G(0.5) {:.3}",
            wide[0], wide[1], narrow[0], narrow[1]
        ));
    }
    check("scaled IDR of NV and S(2) exceeds LI and G(0.5) in every scenario", pass, parts.join("; "))
}

fn fraction(results: &[&RealizationResult], want: Sign) -> f64 {
    let est: Vec<Sign> = results.iter().filter_map(|r| r.estimate()).map(|e| e.sign).collect();
    est.iter().filter(|&&s| s == want).count() as f64 / est.len().max(1) as f64
}

fn sign_detection(s: &SuiteResults) -> Check {
    let weak: Vec<&RealizationResult> = s.coupled.iter().filter(|r| r.params.coupling < 0.2).collect();
    let strong: Vec<&RealizationResult> = s
        .coupled
        .iter()
        .filter(|r| r.params.coupling > 0.4 && r.scenario.kind == ScenarioKind::AgemodelEnsemble)
        .collect();
    let indiff = fraction(&weak, Sign::Indifferent);
    let correct = fraction(&strong, Sign::Positive);
    check(
        "sign detection: c < 0.2 indifferent in [0.35, 0.65]; c > 0.4 with age ensembles correct >= 0.7",
        (0.35..=0.65).contains(&indiff) && correct >= 0.7,
        format!("indifferent {indiff:.3} (n={}), correct {correct:.3} (n={})", weak.len(), strong.len()),
    )
}

fn roc_ordering(s: &SuiteResults) -> Check {
    let auc: BTreeMap<(String, ScenarioKind), f64> = roc_table(&s.coupled, &s.uncoupled)
        .into_iter()
        .map(|(m, k, roc)| ((m.to_string(), k), roc.auc))
        .collect();
    let get = |m: &AlignmentSpec, k| auc.get(&(m.to_string(), k)).copied().unwrap_or(f64::NAN);
    let methods = AlignmentSpec::defaults();
    let mut pass = true;
    let mut parts = Vec::new();
    for m in &methods {
        let (u, md) = (get(m, ScenarioKind::Unequal), get(m, ScenarioKind::AgemodelMedian));
        pass &= u > md;
        parts.push(format!("{m} unequal {u:.3} median {md:.3} ensemble {:.3}", get(m, ScenarioKind::AgemodelEnsemble)));
    }
    for k in [ScenarioKind::AgemodelMedian, ScenarioKind::AgemodelEnsemble] {
        for g in methods.iter().filter(|m| m.method == Method::Gaussian) {
            for sl in methods.iter().filter(|m| m.method == Method::Slotting) {
                pass &= get(g, k) >= get(sl, k) - 0.02;
            }
        }
    }
    check(
        "ROC: AUC unequal > AUC median for every method; Gaussian >= slotting - 0.02 with age models",
        pass,
        parts.join("; "),
    )
}

fn method_agreement(s: &SuiteResults) -> Check {
    let table = agreement_matrix(&s.coupled, &AlignmentSpec::defaults());
    let li_g = table
        .iter()
        .find(|a| a.a == AlignmentSpec::linear() && a.b == AlignmentSpec::gaussian(0.5))
        .map(|a| a.same_sign)
        .unwrap_or(f64::NAN);
    let best_other = table
        .iter()
        .filter(|a| !(a.a == AlignmentSpec::linear() && a.b == AlignmentSpec::gaussian(0.5)))
        .map(|a| a.same_sign)
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_opposite = table.iter().map(|a| a.opposite_sign).fold(0.0, f64::max);
    check(
        "LI/G(0.5) sign agreement in [0.8, 1.0] and the highest; opposite signs < 2%",
        (0.8..=1.0).contains(&li_g) && li_g > best_other && worst_opposite < 0.02,
        format!("LI/G(0.5) {li_g:.3}, next best {best_other:.3}, max opposite {worst_opposite:.4}"),
    )
}

fn forward_model_statistics() -> Check {
    let n = 100_000;
    let (mu, skew) = (0.35, 1.5);
    let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let col = deposit(&times, &vec![0.0; n], mu, skew, &mut stream(0xACCE, &[9, 1])).unwrap();
    let th = col.thicknesses();
    let (shape, scale) = gamma_shape_scale(mu, skew).unwrap();
    let (m, v) = (mean(&th), variance(&th));
    let (m_true, v_true) = (shape * scale, shape * scale * scale);
    let layers_ok = ((m - m_true) / m_true).abs() < 0.02 && ((v - v_true) / v_true).abs() < 0.02;

    let theta = 0.3;
    let ou = generate_ou(n, 1.0, theta, &mut stream(0xACCE, &[9, 2])).unwrap();
    let ac = pearson(&ou[..n - 1], &ou[1..]);
    let ac_ok = (ac - (-theta).exp()).abs() < 0.01;

    let c = 0.6;
    let pair = latent_pair(n, c, theta, &mut stream(0xACCE, &[9, 3])).unwrap();
    let r = pearson(&pair.x, &pair.y);
    // Both series share the AR(1) coefficient, so the pair behaves like
    // n (1 - a^2) / (1 + a^2) independent bivariate normal draws.
    let a = (-theta).exp();
    let se = (1.0 - c * c) * ((1.0 + a * a) / ((1.0 - a * a) * n as f64)).sqrt();
    let corr_ok = (r - c).abs() < 3.0 * se;
    check(
        "forward model: layer moments within 2%, OU lag-1 autocorrelation within 0.01, latent correlation within 3 SE",
        layers_ok && ac_ok && corr_ok,
        format!(
            "layer mean {m:.4}/{m_true:.4} var {v:.4}/{v_true:.4}; acf {ac:.4}/{:.4}; r {r:.4} vs c {c} (3 SE {:.4})",
            (-theta).exp(),
            3.0 * se
        ),
    )
}

fn chronology_round_trip() -> Check {
    let cal: Vec<f64> = (0..=60).map(|i| i as f64 * 500.0).collect();
    let c14: Vec<f64> = cal.iter().map(|t| 300.0 + 0.9 * t + 1e-6 * t * t).collect();
    let curve = CalibrationCurve::new(cal.clone(), c14, vec![0.0; cal.len()]).unwrap();
    let step = EnsembleSettings::default().grid_step;
    let mut rng = stream(0xACCE, &[10]);
    let mut worst = 0.0f64;
    for (k, &t) in cal.iter().enumerate() {
        let date = forward_date(k as f64, t, &curve, 0.0, &mut rng).unwrap();
        let got = calibrate_date(&date, &curve, step).unwrap().mode();
        worst = worst.max((got - t).abs());
    }
    let knots_ok = worst <= step;

    let toy = CalibrationCurve::toy_marine();
    let fm = ForwardModel::default();
    let (mut total, mut monotone) = (0usize, 0usize);
    for seed in 0..20u64 {
        let params = PseudoproxyParams {
            n_obs: 150,
            coupling: 0.5,
            drag: 0.3,
            sed_mean: 0.35,
            sed_skew: 1.5,
            seed,
        };
        let pair = simulate_pair(&params, &fm, &toy, 10).unwrap();
        let (dx, dy) = pair.dated.unwrap();
        for ens in [&dx.ages, &dy.ages] {
            for real in &ens.realizations {
                total += 1;
                monotone += real.windows(2).all(|w| w[1] > w[0]) as usize;
            }
        }
        let depths: Vec<f64> = dx.ages.depths.clone();
        let extra = build_age_ensemble(&depths, &dx.dates, &toy, 50, &fm.chronology, &mut stream(seed, &[10, 1])).unwrap();
        for real in &extra.realizations {
            total += 1;
            monotone += real.windows(2).all(|w| w[1] > w[0]) as usize;
        }
    }
    check(
        "chronology: zero-noise knots recovered within one grid step; every realization monotone",
        knots_ok && monotone == total,
        format!("max knot error {worst} (step {step}); monotone {monotone}/{total}"),
    )
}

fn lag_recovery() -> Check {
    let (n, lag, runs) = (300usize, 7usize, 50u64);
    let lags: Vec<f64> = (-20..=20).map(f64::from).collect();
    let cfg = InferenceConfig::default();
    let mut hits = 0;
    for k in 0..runs {
        let pair = latent_pair(n + lag, 0.8, 0.1, &mut stream(0xACCE, &[11, k])).unwrap();
        let x = TimeSeries::new((0..n).map(|i| i as f64).collect(), pair.x[..n].to_vec()).unwrap();
        let y = TimeSeries::new((0..n).map(|i| (i + lag) as f64).collect(), pair.y[..n].to_vec()).unwrap();
        let scan = lag_scan(&x, &y, &lags, &AlignmentSpec::linear(), &cfg.with_stream(&[k])).unwrap();
        hits += (scan.best_lag == lag as f64) as usize;
    }
    let rate = hits as f64 / runs as f64;
    check(
        "lag scan recovers an injected 7-step lag in >= 95% of runs",
        rate >= 0.95,
        format!("{hits}/{runs}"),
    )
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Name, arguments and extra input files of one command invocation.
type Run<'a> = (&'a str, Vec<String>, Vec<(&'a str, &'a str)>);

fn cli_is_deterministic() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let sim = root.join("sim");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let runs: Vec<Run> = vec![
        ("simulate", vec!["simulate".into()], vec![]),
        (
            "calibrate",
            vec!["calibrate".into(), "--dates".into(), s(&sim.join("x_dates.csv")), "--record".into(), s(&sim.join("x_record.csv"))],
            vec![],
        ),
        (
            "correlate",
            vec![
                "correlate".into(),
                s(&sim.join("x_record.csv")),
                s(&sim.join("y_record.csv")),
                "--dates-a".into(),
                s(&sim.join("x_dates.csv")),
                "--dates-b".into(),
                s(&sim.join("y_dates.csv")),
                "--ensemble".into(),
                "5".into(),
            ],
            vec![],
        ),
        (
            "windows",
            vec!["windows".into(), "--lag-scan".into(), s(&sim.join("x_record.csv")), s(&sim.join("y_record.csv"))],
            vec![("PALEOCORR__WINDOWS__LAG_STEP", "500.0")],
        ),
        (
            "experiment",
            vec!["experiment".into(), "--pairs".into(), "3".into()],
            vec![("PALEOCORR__EXPERIMENT__METHODS", "[\"LI\", \"S(2)\"]"), ("PALEOCORR__INFERENCE__N_STEPS", "3000")],
        ),
    ];
    let mut failed = Vec::new();
    for (name, args, env) in &runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = if *name == "simulate" && rep == 0 { sim.clone() } else { root.join(format!("{name}{rep}")) };
            let status = Command::new(env!("CARGO_BIN_EXE_paleocorr"))
                .args(["--seed", "77", "--out", &s(&out)])
                .args(args)
                .envs(env.iter().copied())
                .output()
                .unwrap();
            if !status.status.success() {
                failed.push(format!("{name} exited with {:?}", status.status.code()));
            }
            outputs.push(dir_bytes(&out));
        }
        if outputs[0] != outputs[1] {
            failed.push(format!("{name} differs between runs"));
        }
    }
    check(
        "every CLI command is byte-identical across reruns",
        failed.is_empty(),
        if failed.is_empty() { "simulate, calibrate, correlate, windows, experiment".into() } else { failed.join("; ") },
    )
}

fn main() -> ExitCode {
    let n_pairs = std::env::var("ACCEPTANCE_PAIRS").ok().and_then(|v| v.parse().ok()).unwrap_or(200);
    let mut checks = Vec::new();
    let timed = |f: &dyn Fn() -> Check| {
        let t = Instant::now();
        let mut c = f();
        c.detail = format!("{} [{:.1}s]", c.detail, t.elapsed().as_secs_f64());
        c
    };
    checks.push(timed(&sampler_matches_sample_correlation));
    checks.push(timed(&prior_is_uniform));

    let t = Instant::now();
    let cfg = SuiteConfig {
        n_pairs,
        ..SuiteConfig::default()
    };
    let suite = run_suite(&cfg, &CalibrationCurve::toy_marine(), |_| Ok(())).expect("benchmark sweep runs");
    println!("benchmark sweep: {n_pairs} pairs in {:.1}s, skipped {:?}", t.elapsed().as_secs_f64(), suite.skip_counts());
    checks.push(equal_sampling_is_unbiased(&suite));
    checks.push(persistence_collapses_under_unequal_sampling(&suite));
    checks.push(nearest_and_slotting_are_wider(&suite));
    checks.push(sign_detection(&suite));
    checks.push(roc_ordering(&suite));
    checks.push(method_agreement(&suite));

    checks.push(timed(&forward_model_statistics));
    checks.push(timed(&chronology_round_trip));
    checks.push(timed(&lag_recovery));
    checks.push(timed(&cli_is_deterministic));

    let mut failures = 0;
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        failures += !c.pass as usize;
    }
    println!("{} passed, {failures} failed", checks.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
