use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use paleocorr::alignment::{self, cut_window, highpass, lag_scan, window_bounds};
use paleocorr::bayes::{PosteriorSample, DEFAULT_ALPHA};
use paleocorr::chronology::{
    build_age_ensemble, calibrate_date, load_calibration_curve, write_dating_table, CalibrationCurve,
};
use paleocorr::experiments::{
    self, analyse, default_bins, metrics_table, roc_table, simulate_pair, PairOutcome, ScenarioData,
    METRICS_HEADER, SCORES_HEADER, STORE_HEADER,
};
use paleocorr::rng::stream;
use paleocorr::{Error, TimeSeries};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, CliResult, Context};
use crate::records::{ensemble_csv, read_dates, read_record, write, RecordFile};

const TAG_AGES_A: u64 = 101;
const TAG_AGES_B: u64 = 102;
const TAG_CALIBRATE: u64 = 103;
const TAG_LAG_SCAN: u64 = 104;
const TAG_WINDOW: u64 = 105;

pub fn curve(cfg: &RunConfig) -> CliResult<CalibrationCurve> {
    match &cfg.chronology.curve {
        Some(p) => {
            let file = File::open(p).map_err(io_err(p))?;
            load_calibration_curve(BufReader::new(file)).context(|| p.display().to_string())
        }
        None => Ok(CalibrationCurve::toy_marine()),
    }
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    cfg.write_resolved(out)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    prepare_out(cfg, out)?;
    let params = cfg.simulate.params(cfg.seed);
    let fm = &cfg.forward;
    let pair = simulate_pair(&params, fm, &curve(cfg)?, cfg.simulate.n_ens).context(|| "simulation".into())?;
    let (cx, cy) = pair.cores.clone().context(|| "coring".into())?;
    let (dx, dy) = pair.dated.clone().context(|| "dating".into())?;
    let ages = fm.years(&pair.latent.times);
    for (name, values) in [("x", &pair.latent.x), ("y", &pair.latent.y)] {
        let rec = RecordFile {
            name: Some(format!("{name} latent")),
            age: Some(ages.clone()),
            value: values.clone(),
            ..Default::default()
        };
        write(&out.join(format!("{name}_true.csv")), &rec.to_csv())?;
    }
    for (name, core, dated) in [("x", &cx, &dx), ("y", &cy, &dy)] {
        let rec = RecordFile {
            name: Some(format!("{name} core")),
            units: None,
            depth: Some(core.depths.clone()),
            age: Some(fm.years(&core.times)),
            value: core.values.clone(),
        };
        write(&out.join(format!("{name}_record.csv")), &rec.to_csv())?;
        write(&out.join(format!("{name}_dates.csv")), &write_dating_table(&dated.dates))?;
        write(&out.join(format!("{name}_ages.csv")), &ensemble_csv(&dated.ages, cfg.simulate.n_ens))?;
    }
    log::info!("simulated {} and {} core samples", cx.len(), cy.len());
    Ok(())
}

pub fn calibrate(cfg: &RunConfig, dates: &Path, record: Option<&Path>, out: &Path) -> CliResult<()> {
    prepare_out(cfg, out)?;
    let curve = curve(cfg)?;
    let dates = read_dates(dates)?;
    let settings = cfg.chronology.settings();
    let mut table = String::from("depth,c14_age,c14_sigma,mode,mean,q05,q50,q95\n");
    for d in &dates {
        let cal = calibrate_date(d, &curve, settings.grid_step).context(|| format!("date at depth {}", d.depth))?;
        writeln!(
            table,
            "{},{},{},{},{},{},{},{}",
            d.depth,
            d.measured_c14,
            d.meas_sigma,
            cal.mode(),
            cal.mean(),
            cal.quantile(0.05),
            cal.quantile(0.5),
            cal.quantile(0.95)
        )
        .unwrap();
    }
    write(&out.join("calibrated_dates.csv"), &table)?;

    let rec = record.map(read_record).transpose()?;
    let depths: Vec<f64> = match &rec {
        Some(r) => r
            .depth
            .clone()
            .ok_or_else(|| CliError::Config("the record needs a depth column to be dated".into()))?,
        None => {
            let mut d: Vec<f64> = dates.iter().map(|d| d.depth).collect();
            d.sort_by(f64::total_cmp);
            d
        }
    };
    let mut rng = stream(cfg.seed, &[TAG_CALIBRATE]);
    let n = cfg.chronology.realizations;
    let ens = build_age_ensemble(&depths, &dates, &curve, n, &settings, &mut rng).context(|| "age model".into())?;
    write(&out.join("ages.csv"), &ensemble_csv(&ens, n))?;
    if let Some(r) = rec {
        let dated = RecordFile {
            age: Some(ens.median_ages.clone()),
            ..r
        };
        write(&out.join("record_median.csv"), &dated.to_csv())?;
    }
    log::info!("age model acceptance rate {:.3}", ens.acceptance_rate());
    Ok(())
}

/// The two input records and their optional dating tables.
#[derive(Debug, Clone, Default)]
pub struct PairInputs {
    pub record_a: Option<PathBuf>,
    pub record_b: Option<PathBuf>,
    pub dates_a: Option<PathBuf>,
    pub dates_b: Option<PathBuf>,
    /// Age realizations to pool over; needs dating tables.
    pub ensemble: Option<usize>,
}

impl PairInputs {
    fn resolve(self, cfg: &RunConfig) -> Self {
        let i = &cfg.inputs;
        Self {
            record_a: self.record_a.or_else(|| i.record_a.clone()),
            record_b: self.record_b.or_else(|| i.record_b.clone()),
            dates_a: self.dates_a.or_else(|| i.dates_a.clone()),
            dates_b: self.dates_b.or_else(|| i.dates_b.clone()),
            ensemble: self.ensemble,
        }
    }
}

/// Time series of one record, one per age realization. A dating table wins
/// over an age column; without `ensemble` the median age model is used.
fn record_members(
    cfg: &RunConfig,
    curve: &CalibrationCurve,
    record: &Path,
    dates: Option<&Path>,
    ensemble: Option<usize>,
    cutoff: Option<f64>,
    tag: u64,
) -> CliResult<Vec<TimeSeries>> {
    let rec = read_record(record)?;
    let ctx = || record.display().to_string();
    let age_sets: Vec<Vec<f64>> = match dates {
        Some(dp) => {
            let dates = read_dates(dp)?;
            let depth = rec.depth.as_ref().ok_or_else(|| {
                CliError::Config(format!("{}: dating needs a depth column", record.display()))
            })?;
            let n = ensemble.unwrap_or(cfg.chronology.realizations);
            let mut rng = stream(cfg.seed, &[tag]);
            let ens = build_age_ensemble(depth, &dates, curve, n, &cfg.chronology.settings(), &mut rng)
                .context(|| dp.display().to_string())?;
            if ensemble.is_some() {
                ens.realizations
            } else {
                vec![ens.median_ages]
            }
        }
        None => {
            if ensemble.is_some() {
                return Err(CliError::Config(format!(
                    "{}: an age ensemble needs a dating table",
                    record.display()
                )));
            }
            let age = rec.age.clone().ok_or_else(|| {
                CliError::Config(format!("{}: no age column and no dating table", record.display()))
            })?;
            vec![age]
        }
    };
    age_sets
        .into_iter()
        .map(|ages| {
            let ts = TimeSeries::new(ages, rec.value.clone())?.normalize()?;
            match cutoff {
                Some(c) => highpass(&ts, c),
                None => Ok(ts),
            }
        })
        .collect::<paleocorr::Result<Vec<_>>>()
        .context(ctx)
}

/// Members pairing the `k`-th realization of each record; records with a
/// single age model are reused for every member.
fn load_pair(cfg: &RunConfig, inputs: PairInputs) -> CliResult<Vec<(TimeSeries, TimeSeries)>> {
    let inputs = inputs.resolve(cfg);
    let (Some(ra), Some(rb)) = (&inputs.record_a, &inputs.record_b) else {
        return Err(CliError::Config("two records are required".into()));
    };
    if inputs.ensemble == Some(0) {
        return Err(CliError::Config("--ensemble must be at least 1".into()));
    }
    if inputs.ensemble.is_some() && inputs.dates_a.is_none() && inputs.dates_b.is_none() {
        return Err(CliError::Config("--ensemble needs at least one dating table".into()));
    }
    let curve = curve(cfg)?;
    let pre = &cfg.preprocess;
    let side = |rec: &Path, dates: &Option<PathBuf>, cutoff, tag| {
        let ens = dates.as_ref().and(inputs.ensemble);
        record_members(cfg, &curve, rec, dates.as_deref(), ens, cutoff, tag)
    };
    let a = side(ra, &inputs.dates_a, pre.detrend_cutoff_a, TAG_AGES_A)?;
    let b = side(rb, &inputs.dates_b, pre.detrend_cutoff_b, TAG_AGES_B)?;
    let n = a.len().max(b.len());
    Ok((0..n)
        .map(|k| (a[k % a.len()].clone(), b[k % b.len()].shifted(-pre.lag)))
        .collect())
}

fn summary_text(sample: &PosteriorSample, est: &experiments::CellEstimate, cfg: &RunConfig) -> String {
    let s = sample.summary(DEFAULT_ALPHA);
    let acc = sample.diagnostics.iter().map(|d| d.acceptance_rate).sum::<f64>()
        / sample.diagnostics.len().max(1) as f64;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
    kv("method", cfg.alignment.method.to_string());
    kv("mode", s.mode.to_string());
    kv("median", s.median.to_string());
    kv("q5", s.q5.to_string());
    kv("q95", s.q95.to_string());
    kv("idr", s.idr.to_string());
    kv("fraction_positive", s.fraction_positive.to_string());
    kv("sign", s.sign.to_string());
    kv("effective_n", est.effective_n.to_string());
    kv("n_draws", s.n_draws.to_string());
    kv("members", est.members.to_string());
    kv("acceptance_rate", acc.to_string());
    kv("warning", sample.has_warning().to_string());
    out
}

pub fn correlate(cfg: &RunConfig, inputs: PairInputs, out: &Path) -> CliResult<()> {
    let members = load_pair(cfg, inputs)?;
    prepare_out(cfg, out)?;
    let n_members = members.len();
    let (sample, est) =
        analyse(&ScenarioData { members }, &cfg.alignment.method, &cfg.inference()).context(|| "correlation".into())?;
    if est.members < n_members {
        log::warn!("{} of {n_members} age realizations failed and were left out", n_members - est.members);
    }
    for d in sample.diagnostics.iter().filter(|d| d.warning) {
        log::warn!("chain acceptance rate {:.3} is outside [0.01, 0.99]", d.acceptance_rate);
    }
    let mut draws = String::with_capacity(sample.len() * 20);
    for r in &sample.rho_draws {
        writeln!(draws, "{r}").unwrap();
    }
    write(&out.join("draws.txt"), &draws)?;
    let text = summary_text(&sample, &est, cfg);
    write(&out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub const WINDOWS_HEADER: &str = "start,end,mode,q5,q95,sign,n_a,n_b,flag";

pub fn windows(cfg: &RunConfig, inputs: PairInputs, out: &Path) -> CliResult<()> {
    let mut members = load_pair(cfg, inputs)?;
    prepare_out(cfg, out)?;
    let w = &cfg.windows;
    let method = cfg.alignment.method;
    let inference = cfg.inference();
    if w.lag_scan {
        let (x, y) = &members[0];
        let scan = lag_scan(x, y, &w.lags()?, &method, &inference.with_stream(&[TAG_LAG_SCAN]))
            .context(|| "lag scan".into())?;
        let mut table = String::from("lag,mode,q5,q95,sign\n");
        for p in &scan.points {
            match &p.summary {
                Some(s) => writeln!(table, "{},{},{},{},{}", p.lag, s.mode, s.q5, s.q95, s.sign).unwrap(),
                None => writeln!(table, "{},,,,", p.lag).unwrap(),
            }
        }
        write(&out.join("lag_scan.csv"), &table)?;
        log::info!("best lag {}", scan.best_lag);
        for (_, y) in &mut members {
            *y = y.shifted(-scan.best_lag);
        }
    }
    let lo = members.iter().map(|(x, y)| x.start().min(y.start())).fold(f64::INFINITY, f64::min);
    let hi = members.iter().map(|(x, y)| x.end().max(y.end())).fold(f64::NEG_INFINITY, f64::max);
    let bounds = window_bounds(lo, hi, w.width, w.step).map_err(|e| CliError::Config(e.to_string()))?;
    let last = bounds.len() - 1;
    use rayon::prelude::*;
    let rows: Vec<String> = bounds
        .par_iter()
        .enumerate()
        .map(|(k, &(start, end))| {
            let cut: Vec<alignment::Window> =
                members.iter().map(|(x, y)| cut_window(x, y, start, end, k == last)).collect();
            let (n_a, n_b) = (cut[0].x_times.len(), cut[0].y_times.len());
            let estimate = if cut.iter().any(|c| c.insufficient) {
                Err("insufficient")
            } else {
                cut.iter()
                    .map(|c| Ok((c.x_series()?, c.y_series()?)))
                    .collect::<paleocorr::Result<Vec<_>>>()
                    .and_then(|members| {
                        analyse(&ScenarioData { members }, &method, &inference.with_stream(&[TAG_WINDOW, k as u64]))
                    })
                    .map_err(|e| e.reason())
            };
            match estimate {
                Ok((s, _)) => {
                    let s = s.summary(DEFAULT_ALPHA);
                    format!("{start},{end},{},{},{},{},{n_a},{n_b},\n", s.mode, s.q5, s.q95, s.sign)
                }
                Err(flag) => format!("{start},{end},,,,,{n_a},{n_b},{flag}\n"),
            }
        })
        .collect();
    let mut table = format!("{WINDOWS_HEADER}\n");
    rows.iter().for_each(|r| table.push_str(r));
    write(&out.join("windows.csv"), &table)?;
    log::info!("{} windows", rows.len());
    Ok(())
}

/// Append-only CSV whose rows each go out in a single write.
struct RowFile {
    path: PathBuf,
    file: File,
}

impl RowFile {
    fn create(path: PathBuf, header: &str) -> CliResult<Self> {
        std::fs::write(&path, format!("{header}\n")).map_err(io_err(&path))?;
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    fn append(&mut self, row: &str) -> std::io::Result<()> {
        self.file.write_all(row.as_bytes())
    }
}

pub fn experiment(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    prepare_out(cfg, out)?;
    let suite = cfg.suite();
    suite.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let curve = curve(cfg)?;
    let mut store = RowFile::create(out.join("results.csv"), STORE_HEADER)?;
    let mut null_store = RowFile::create(out.join("null_results.csv"), STORE_HEADER)?;
    let mut scores = RowFile::create(out.join("scores.csv"), SCORES_HEADER)?;
    let mut io_failure: Option<CliError> = None;
    let sink = |pair: &PairOutcome| -> paleocorr::Result<()> {
        let mut run = || -> std::result::Result<(), (PathBuf, std::io::Error)> {
            for r in &pair.coupled {
                store.append(&experiments::store_row(r)).map_err(|e| (store.path.clone(), e))?;
                scores.append(&experiments::score_row(r)).map_err(|e| (scores.path.clone(), e))?;
            }
            for r in &pair.uncoupled {
                null_store.append(&experiments::store_row(r)).map_err(|e| (null_store.path.clone(), e))?;
                scores.append(&experiments::score_row(r)).map_err(|e| (scores.path.clone(), e))?;
            }
            Ok(())
        };
        run().map_err(|(path, source)| {
            let msg = format!("{}: {source}", path.display());
            io_failure = Some(CliError::Io { path, source });
            Error::Invalid(msg)
        })
    };
    let results = match experiments::run_suite(&suite, &curve, sink) {
        Ok(r) => r,
        Err(e) => return Err(io_failure.unwrap_or(CliError::Core { context: "experiment".into(), source: e })),
    };

    let metrics = metrics_table(&results.coupled, &default_bins(&suite.ranges));
    let mut table = format!("{METRICS_HEADER}\n");
    metrics.iter().for_each(|m| table.push_str(&m.csv()));
    write(&out.join("metrics.csv"), &table)?;

    let rocs = roc_table(&results.coupled, &results.uncoupled);
    let mut roc = String::from("method,scale,scenario,threshold,fpr,tpr\n");
    let mut auc = String::from("method,scale,scenario,auc\n");
    for (m, s, curve) in &rocs {
        for i in 0..curve.thresholds.len() {
            writeln!(
                roc,
                "{},{},{s},{},{},{}",
                m.method.code(),
                m.scale,
                curve.thresholds[i],
                curve.fpr[i],
                curve.tpr[i]
            )
            .unwrap();
        }
        writeln!(auc, "{},{},{s},{}", m.method.code(), m.scale, curve.auc).unwrap();
    }
    write(&out.join("roc.csv"), &roc)?;
    write(&out.join("auc.csv"), &auc)?;

    let mut agree = String::from("method_a,method_b,n,same_sign,opposite_sign\n");
    for a in experiments::agreement_matrix(&results.coupled, &suite.methods) {
        writeln!(agree, "{},{},{},{},{}", a.a, a.b, a.n, a.same_sign, a.opposite_sign).unwrap();
    }
    write(&out.join("agreement.csv"), &agree)?;

    let mut summary = String::new();
    writeln!(summary, "pairs = {}", suite.n_pairs).unwrap();
    writeln!(summary, "cells = {}", results.coupled.len()).unwrap();
    writeln!(summary, "null_cells = {}", results.uncoupled.len()).unwrap();
    for (reason, n) in results.skip_counts() {
        writeln!(summary, "skipped.{reason} = {n}").unwrap();
    }
    writeln!(summary, "# ROC negatives are the zero-coupling twins in null_results.csv").unwrap();
    write(&out.join("summary.txt"), &summary)?;

    println!("{:<18} {:<8} {:>5} {:>10} {:>10} {:>8} {:>8}", "scenario", "method", "n", "bias", "idr", "correct", "indiff");
    for m in metrics.iter().filter(|m| m.group == "all") {
        println!(
            "{:<18} {:<8} {:>5} {:>10.3} {:>10.3} {:>8.2} {:>8.2}",
            m.scenario.to_string(),
            m.method.to_string(),
            m.n,
            m.median_scaled_bias,
            m.median_scaled_idr,
            m.signs.correct,
            m.signs.indifferent
        );
    }
    Ok(())
}
