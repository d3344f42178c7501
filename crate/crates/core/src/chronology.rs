//! Radiocarbon dating and depth-age models.
//!
//! Calendar ages are turned into radiocarbon measurements through a
//! calibration curve, calibrated back into discrete calendar-age
//! distributions, and combined into an ensemble of monotone depth-age models
//! by linear interpolation between dated horizons.

use std::io::BufRead;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear radiocarbon calibration curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    cal_age: Vec<f64>,
    c14_age: Vec<f64>,
    sigma: Vec<f64>,
}

impl CalibrationCurve {
    pub fn new(cal_age: Vec<f64>, c14_age: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if cal_age.len() != c14_age.len() || cal_age.len() != sigma.len() {
            return Err(Error::Invalid("calibration curve columns differ in length".into()));
        }
        if cal_age.len() < 2 {
            return Err(Error::Invalid("calibration curve needs at least 2 knots".into()));
        }
        if let Some(i) = cal_age.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid(format!(
                "calibration ages not strictly increasing at knot {}",
                i + 1
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::Invalid(format!("negative curve sigma {s}")));
        }
        Ok(Self {
            cal_age,
            c14_age,
            sigma,
        })
    }

    /// Synthetic marine-like curve from 0 to 50 ka: a 400 year surface offset,
    /// slowly decreasing slope, small multi-century wiggles and growing
    /// uncertainty. Strictly monotone in radiocarbon age.
    pub fn toy_marine() -> Self {
        let cal: Vec<f64> = (0..=500).map(|i| i as f64 * 100.0).collect();
        let c14 = cal
            .iter()
            .map(|&t| {
                400.0 + t * (1.0 - 0.05 * t / 50_000.0)
                    + 40.0 * (2.0 * std::f64::consts::PI * t / 2000.0).sin()
            })
            .collect();
        let sigma = cal.iter().map(|&t| 10.0 + 0.002 * t).collect();
        Self::new(cal, c14, sigma).expect("toy curve is valid")
    }

    pub fn cal_ages(&self) -> &[f64] {
        &self.cal_age
    }

    pub fn c14_ages(&self) -> &[f64] {
        &self.c14_age
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.cal_age.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cal_age.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.cal_age[0], self.cal_age[self.cal_age.len() - 1])
    }

    /// Interpolated radiocarbon age and curve sigma at `cal_age`.
    pub fn at(&self, cal_age: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.range();
        if !(cal_age >= lo && cal_age <= hi) {
            return Err(Error::OutOfRange {
                what: "calendar age",
                value: cal_age,
                lo,
                hi,
            });
        }
        let j = self.cal_age.partition_point(|&t| t <= cal_age).min(self.len() - 1).max(1);
        let (t0, t1) = (self.cal_age[j - 1], self.cal_age[j]);
        let w = (cal_age - t0) / (t1 - t0);
        let lerp = |v: &[f64]| v[j - 1] + w * (v[j] - v[j - 1]);
        Ok((lerp(&self.c14_age), lerp(&self.sigma)))
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|f| !f.is_empty())
        .collect()
}

/// Reads a curve: `cal_age c14_age sigma` per line, comma or whitespace
/// separated, `#` comments. Extra trailing columns (as in IntCal/Marine
/// distribution files) are ignored. Files listed oldest-first are reversed.
pub fn load_calibration_curve<R: BufRead>(source: R) -> Result<CalibrationCurve> {
    let mut rows: Vec<(usize, [f64; 3])> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed);
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 numeric columns, found {}", fields.len()),
            });
        }
        let mut row = [0.0f64; 3];
        for (slot, field) in row.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not a number: {field:?}"),
            })?;
            if !slot.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite value {field:?}"),
                });
            }
        }
        if row[2] < 0.0 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("negative sigma {}", row[2]),
            });
        }
        rows.push((lineno, row));
    }
    if rows.len() < 2 {
        return Err(Error::Parse {
            line: rows.first().map_or(0, |r| r.0),
            message: "calibration curve needs at least 2 rows".into(),
        });
    }
    let descending = rows[1].1[0] < rows[0].1[0];
    for w in rows.windows(2) {
        let ok = if descending {
            w[1].1[0] < w[0].1[0]
        } else {
            w[1].1[0] > w[0].1[0]
        };
        if !ok {
            return Err(Error::Parse {
                line: w[1].0,
                message: format!(
                    "calendar age {} breaks the monotone order of the curve",
                    w[1].1[0]
                ),
            });
        }
    }
    if descending {
        rows.reverse();
    }
    let cal = rows.iter().map(|r| r.1[0]).collect();
    let c14 = rows.iter().map(|r| r.1[1]).collect();
    let sig = rows.iter().map(|r| r.1[2]).collect();
    CalibrationCurve::new(cal, c14, sig)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiocarbonDate {
    pub depth: f64,
    pub measured_c14: f64,
    pub meas_sigma: f64,
}

impl RadiocarbonDate {
    pub fn new(depth: f64, measured_c14: f64, meas_sigma: f64) -> Result<Self> {
        if !depth.is_finite() || !measured_c14.is_finite() {
            return Err(Error::Invalid("non-finite radiocarbon date".into()));
        }
        if !(meas_sigma >= 0.0) {
            return Err(Error::Invalid(format!("negative measurement sigma {meas_sigma}")));
        }
        Ok(Self {
            depth,
            measured_c14,
            meas_sigma,
        })
    }
}

/// Reads a dating table: CSV with header `depth,c14_age,c14_sigma`.
pub fn load_dating_table<R: BufRead>(source: R) -> Result<Vec<RadiocarbonDate>> {
    let mut dates = Vec::new();
    let mut header_seen = false;
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if !header_seen {
            if fields != ["depth", "c14_age", "c14_sigma"] {
                return Err(Error::Parse {
                    line: lineno,
                    message: "expected header `depth,c14_age,c14_sigma`".into(),
                });
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 columns, found {}", fields.len()),
            });
        }
        let mut v = [0.0; 3];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not a number: {f:?}"),
            })?;
        }
        let date = RadiocarbonDate::new(v[0], v[1], v[2]).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        dates.push(date);
    }
    if !header_seen {
        return Err(Error::Parse {
            line: 0,
            message: "empty dating table".into(),
        });
    }
    dates.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    Ok(dates)
}

pub fn write_dating_table(dates: &[RadiocarbonDate]) -> String {
    let mut out = String::from("depth,c14_age,c14_sigma\n");
    for d in dates {
        out.push_str(&format!("{},{},{}\n", d.depth, d.measured_c14, d.meas_sigma));
    }
    out
}

/// Simulated radiocarbon measurement of a sample with known calendar age.
pub fn forward_date<R: Rng + ?Sized>(
    depth: f64,
    cal_age: f64,
    curve: &CalibrationCurve,
    meas_sigma: f64,
    rng: &mut R,
) -> Result<RadiocarbonDate> {
    if !(meas_sigma >= 0.0) {
        return Err(Error::domain(format!("negative measurement sigma {meas_sigma}")));
    }
    let (mu, curve_sigma) = curve.at(cal_age)?;
    let sd = (meas_sigma * meas_sigma + curve_sigma * curve_sigma).sqrt();
    let measured = if sd > 0.0 {
        Normal::new(mu, sd).map_err(Error::domain)?.sample(rng)
    } else {
        mu
    };
    RadiocarbonDate::new(depth, measured, meas_sigma)
}

/// Discrete calendar-age distribution of one calibrated date.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedDate {
    pub ages: Vec<f64>,
    pub probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CalibratedDate {
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        self.ages[i]
    }

    pub fn mean(&self) -> f64 {
        self.ages.iter().zip(&self.probs).map(|(a, p)| a * p).sum()
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let i = self.cumulative.partition_point(|&c| c < q).min(self.ages.len() - 1);
        self.ages[i]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }
}

/// Calibration z-scores beyond this are treated as incompatible with the curve.
const MAX_CALIBRATION_Z: f64 = 40.0;

/// Calibrates a date on a regular grid spanning the curve. Weights follow the
/// Gaussian misfit between the measurement and the curve, support is cut
/// where the weight drops below `1e-9` of the maximum.
pub fn calibrate_date(
    date: &RadiocarbonDate,
    curve: &CalibrationCurve,
    grid_step: f64,
) -> Result<CalibratedDate> {
    if !(grid_step > 0.0) {
        return Err(Error::domain(format!("grid step must be positive, got {grid_step}")));
    }
    let (lo, hi) = curve.range();
    let n = ((hi - lo) / grid_step).floor() as usize + 1;
    let mut ages = Vec::with_capacity(n);
    let mut logw = Vec::with_capacity(n);
    let mut best_z = f64::INFINITY;
    let meas_var = date.meas_sigma * date.meas_sigma;
    for k in 0..n {
        let t = lo + k as f64 * grid_step;
        let (mu, sig) = curve.at(t.min(hi))?;
        let var = meas_var + sig * sig;
        let d = date.measured_c14 - mu;
        best_z = best_z.min(d.abs() / (var + grid_step * grid_step).sqrt());
        ages.push(t);
        // A vanishing variance collapses the distribution onto the nearest
        // grid point; normalizing by the maximum below keeps that point.
        logw.push(-d * d / (2.0 * var.max(f64::MIN_POSITIVE)));
    }
    if !(best_z <= MAX_CALIBRATION_Z) {
        return Err(Error::CalibrationFailure {
            measured: date.measured_c14,
        });
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = max + 1e-9f64.ln();
    let mut kept_ages = Vec::new();
    let mut probs = Vec::new();
    for (t, lw) in ages.into_iter().zip(logw) {
        if lw >= cut {
            kept_ages.push(t);
            probs.push((lw - max).exp());
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    let mut acc = 0.0;
    let cumulative = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    Ok(CalibratedDate {
        ages: kept_ages,
        probs,
        cumulative,
    })
}

/// Depth-age model realizations for a set of observation depths.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeEnsemble {
    pub depths: Vec<f64>,
    /// One row per realization, one column per depth.
    pub realizations: Vec<Vec<f64>>,
    pub median_ages: Vec<f64>,
    pub draws_attempted: usize,
    pub draws_accepted: usize,
}

impl AgeEnsemble {
    pub fn n_realizations(&self) -> usize {
        self.realizations.len()
    }

    /// Fraction of single-date draws that respected stratigraphic order.
    pub fn acceptance_rate(&self) -> f64 {
        self.draws_accepted as f64 / self.draws_attempted.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    pub grid_step: f64,
    /// Redraws allowed for one date before the realization is abandoned.
    pub retry_cap: usize,
    /// Abandoned realizations tolerated per requested realization.
    pub max_rejects_per_realization: usize,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self {
            grid_step: 5.0,
            retry_cap: 100,
            max_rejects_per_realization: 20,
        }
    }
}

/// Linear interpolation of `ys` over increasing `xs`; `x` must lie within.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let j = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[j - 1], xs[j]);
    ys[j - 1] + (x - x0) / (x1 - x0) * (ys[j] - ys[j - 1])
}

pub(crate) fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn build_age_ensemble<R: Rng + ?Sized>(
    obs_depths: &[f64],
    dates: &[RadiocarbonDate],
    curve: &CalibrationCurve,
    n_real: usize,
    settings: &EnsembleSettings,
    rng: &mut R,
) -> Result<AgeEnsemble> {
    if n_real == 0 {
        return Err(Error::domain("ensemble size must be at least 1"));
    }
    if dates.len() < 2 {
        return Err(Error::DegenerateChronology("need at least 2 dated depths".into()));
    }
    let mut dates = dates.to_vec();
    dates.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    if dates.windows(2).any(|w| w[1].depth <= w[0].depth) {
        return Err(Error::DegenerateChronology("two dates share one depth".into()));
    }
    if obs_depths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("observation depths must strictly increase".into()));
    }
    let (lo, hi) = (dates[0].depth, dates[dates.len() - 1].depth);
    if let Some(&d) = obs_depths.iter().find(|&&d| d < lo || d > hi) {
        return Err(Error::OutOfRange {
            what: "observation depth",
            value: d,
            lo,
            hi,
        });
    }
    let calibrated = dates
        .iter()
        .map(|d| calibrate_date(d, curve, settings.grid_step))
        .collect::<Result<Vec<_>>>()?;
    let date_depths: Vec<f64> = dates.iter().map(|d| d.depth).collect();

    let mut realizations = Vec::with_capacity(n_real);
    let mut attempted = 0usize;
    let mut accepted = 0usize;
    let mut rejected_realizations = 0usize;
    let reject_budget = settings.max_rejects_per_realization.saturating_mul(n_real).max(1);
    let mut ages = vec![0.0; dates.len()];
    while realizations.len() < n_real {
        let mut ok = true;
        for (k, cal) in calibrated.iter().enumerate() {
            let mut tries = 0;
            loop {
                attempted += 1;
                let a = cal.sample(rng);
                if k == 0 || a > ages[k - 1] {
                    accepted += 1;
                    ages[k] = a;
                    break;
                }
                tries += 1;
                if tries > settings.retry_cap {
                    ok = false;
                    break;
                }
            }
            if !ok {
                break;
            }
        }
        if !ok {
            rejected_realizations += 1;
            if rejected_realizations >= reject_budget {
                return Err(Error::DegenerateChronology(format!(
                    "{rejected_realizations} realizations violated stratigraphic order"
                )));
            }
            continue;
        }
        realizations.push(obs_depths.iter().map(|&d| interp(&date_depths, &ages, d)).collect::<Vec<_>>());
    }
    let median_ages = (0..obs_depths.len())
        .map(|j| median_of(&mut realizations.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    Ok(AgeEnsemble {
        depths: obs_depths.to_vec(),
        realizations,
        median_ages,
        draws_attempted: attempted,
        draws_accepted: accepted,
    })
}
