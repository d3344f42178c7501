//! Pairing of unequally sampled series and supporting series operations.
//!
//! Four approximation methods turn two series with different observation
//! times into concurrent value pairs: linear interpolation (LI), Gaussian
//! kernel interpolation (G), nearest value matching (NV) and slotting (S).
//! Kernel widths are multiples of the pair-averaged mean sampling interval.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, InferenceConfig};
use crate::error::{Error, Result};
use crate::series::{standardize, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LI")]
    Linear,
    #[serde(rename = "G")]
    Gaussian,
    #[serde(rename = "NV")]
    Nearest,
    #[serde(rename = "S")]
    Slotting,
}

impl Method {
    pub fn code(self) -> &'static str {
        match self {
            Method::Linear => "LI",
            Method::Gaussian => "G",
            Method::Nearest => "NV",
            Method::Slotting => "S",
        }
    }
}

/// Approximation method plus its width as a multiple of the mean sampling
/// interval. LI ignores the scale; NV uses it as the matching limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSpec {
    pub method: Method,
    pub scale: f64,
}

pub const NV_LIMIT: f64 = 0.5;

impl AlignmentSpec {
    pub fn linear() -> Self {
        Self {
            method: Method::Linear,
            scale: 0.0,
        }
    }

    pub fn gaussian(h: f64) -> Self {
        Self {
            method: Method::Gaussian,
            scale: h,
        }
    }

    pub fn nearest() -> Self {
        Self {
            method: Method::Nearest,
            scale: NV_LIMIT,
        }
    }

    pub fn slotting(width: f64) -> Self {
        Self {
            method: Method::Slotting,
            scale: width,
        }
    }

    /// LI, G(0.5), G(2), NV, S(1), S(2).
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::linear(),
            Self::gaussian(0.5),
            Self::gaussian(2.0),
            Self::nearest(),
            Self::slotting(1.0),
            Self::slotting(2.0),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.method != Method::Linear && !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::domain(format!("{} needs a positive scale, got {}", self.method.code(), self.scale)));
        }
        Ok(())
    }

    /// Stable key used in seeds and output ordering.
    pub fn key(&self) -> u64 {
        let m = self.method as u64;
        (m << 32) ^ (self.scale * 1000.0).round() as u64
    }
}

impl fmt::Display for AlignmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.method {
            Method::Linear | Method::Nearest => f.write_str(self.method.code()),
            Method::Gaussian | Method::Slotting => write!(f, "{}({})", self.method.code(), self.scale),
        }
    }
}

impl FromStr for AlignmentSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            Some(_) => return Err(Error::domain(format!("malformed method {s:?}"))),
            None => (s, None),
        };
        let arg = arg
            .map(|a| a.trim().parse::<f64>().map_err(|_| Error::domain(format!("bad method scale in {s:?}"))))
            .transpose()?;
        let spec = match (name.trim().to_ascii_uppercase().as_str(), arg) {
            ("LI", None) => Self::linear(),
            ("NV", None) => Self::nearest(),
            ("NV", Some(l)) => Self {
                method: Method::Nearest,
                scale: l,
            },
            ("G", Some(h)) => Self::gaussian(h),
            ("G", None) => Self::gaussian(0.5),
            ("S", Some(w)) => Self::slotting(w),
            ("S", None) => Self::slotting(1.0),
            _ => return Err(Error::domain(format!("unknown method {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for AlignmentSpecList {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|m| m.to_string()))
    }
}

impl<'de> Deserialize<'de> for AlignmentSpecList {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names
            .iter()
            .map(|n| n.parse().map_err(serde::de::Error::custom))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(AlignmentSpecList)
    }
}

/// Method list written as strings such as `["LI", "G(0.5)"]` in config files.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSpecList(pub Vec<AlignmentSpec>);

/// Concurrent value pairs produced by an alignment method.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPairs {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub const MIN_PAIRS: usize = 3;

impl AlignedPairs {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let times = (0..x.len()).map(|i| i as f64).collect();
        Self::with_times(times, x, y)
    }

    pub fn with_times(times: Vec<f64>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || times.len() != x.len() {
            return Err(Error::Invalid("pair columns differ in length".into()));
        }
        if x.len() < MIN_PAIRS {
            return Err(Error::InsufficientOverlap {
                pairs: x.len(),
                needed: MIN_PAIRS,
            });
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite paired value".into()));
        }
        Ok(Self { times, x, y })
    }

    pub fn effective_n(&self) -> usize {
        self.x.len()
    }
}

/// Pair-averaged mean sampling interval used to scale method widths.
pub fn pair_dt(x: &TimeSeries, y: &TimeSeries) -> f64 {
    0.5 * (x.mean_dt() + y.mean_dt())
}

fn overlap(x: &TimeSeries, y: &TimeSeries) -> Result<(f64, f64)> {
    let lo = x.start().max(y.start());
    let hi = x.end().min(y.end());
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    Ok((lo, hi))
}

/// Builds concurrent pairs from `x` and `y`; `y` is mapped onto `x`'s axis
/// for the interpolating methods. Both series are expected to be normalized.
pub fn align(x: &TimeSeries, y: &TimeSeries, spec: &AlignmentSpec) -> Result<AlignedPairs> {
    spec.validate()?;
    let (lo, hi) = overlap(x, y)?;
    let dt = pair_dt(x, y);
    let (times, xs, ys) = match spec.method {
        Method::Linear => interpolate_onto(x, y, linear_at),
        Method::Gaussian => {
            let sigma = spec.scale * dt;
            interpolate_onto(x, y, |ty, vy, t| gaussian_at(ty, vy, t, sigma))
        }
        Method::Nearest => nearest_pairs(x, y, spec.scale * dt, lo, hi),
        Method::Slotting => slot_pairs(x, y, spec.scale * dt, lo, hi),
    };
    AlignedPairs::with_times(times, xs, ys)
}

type Columns = (Vec<f64>, Vec<f64>, Vec<f64>);

fn interpolate_onto(x: &TimeSeries, y: &TimeSeries, f: impl Fn(&[f64], &[f64], f64) -> f64) -> Columns {
    let (mut t, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for (&tx, &vx) in x.times().iter().zip(x.values()) {
        if tx < y.start() || tx > y.end() {
            continue;
        }
        t.push(tx);
        a.push(vx);
        b.push(f(y.times(), y.values(), tx));
    }
    (t, a, b)
}

fn linear_at(ty: &[f64], vy: &[f64], t: f64) -> f64 {
    let j = ty.partition_point(|&s| s <= t);
    if j == 0 {
        return vy[0];
    }
    if j == ty.len() || ty[j - 1] == t {
        return vy[j - 1];
    }
    let w = (t - ty[j - 1]) / (ty[j] - ty[j - 1]);
    vy[j - 1] + w * (vy[j] - vy[j - 1])
}

/// Kernel weights beyond this many bandwidths past the nearest observation
/// are below 1e-300 relative and skipped.
const KERNEL_REACH: f64 = 38.0;

/// Nadaraya-Watson estimate at `t`. Weights are taken relative to the
/// nearest observation so they never underflow all at once.
fn gaussian_at(ty: &[f64], vy: &[f64], t: f64, sigma: f64) -> f64 {
    let j = ty.partition_point(|&s| s < t);
    let d_near = [j.checked_sub(1), (j < ty.len()).then_some(j)]
        .into_iter()
        .flatten()
        .map(|k| (ty[k] - t).abs())
        .fold(f64::INFINITY, f64::min);
    let reach = d_near + KERNEL_REACH * sigma;
    let lo = ty.partition_point(|&s| s < t - reach);
    let hi = ty.partition_point(|&s| s <= t + reach);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let base = d_near * d_near;
    let (mut num, mut den) = (0.0, 0.0);
    for k in lo..hi {
        let d = ty[k] - t;
        let w = (-(d * d - base) * inv).exp();
        num += w * vy[k];
        den += w;
    }
    num / den
}

/// Greedy single-use nearest matching in the order of `x`'s times. Ties go
/// to the earlier `y` observation; both matched times must lie in `[lo, hi]`.
fn nearest_pairs(x: &TimeSeries, y: &TimeSeries, limit: f64, lo: f64, hi: f64) -> Columns {
    let ty = y.times();
    let mut used = vec![false; ty.len()];
    let (mut t, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for (&tx, &vx) in x.times().iter().zip(x.values()) {
        if tx < lo || tx > hi {
            continue;
        }
        let j = ty.partition_point(|&s| s < tx);
        let left = (0..j).rev().find(|&k| !used[k]);
        let right = (j..ty.len()).find(|&k| !used[k]);
        let best = match (left, right) {
            (Some(l), Some(r)) => {
                if tx - ty[l] <= ty[r] - tx {
                    Some(l)
                } else {
                    Some(r)
                }
            }
            (l, r) => l.or(r),
        };
        let Some(k) = best else { continue };
        if (ty[k] - tx).abs() <= limit && ty[k] >= lo && ty[k] <= hi {
            used[k] = true;
            t.push(tx);
            a.push(vx);
            b.push(y.values()[k]);
        }
    }
    (t, a, b)
}

/// Slot means on the grid `lo + k w`; only complete slots that hold at least
/// one observation of each series are emitted.
fn slot_pairs(x: &TimeSeries, y: &TimeSeries, width: f64, lo: f64, hi: f64) -> Columns {
    let n_slots = ((hi - lo) / width + 1e-9).floor() as usize;
    let slot_means = |s: &TimeSeries| {
        let mut sum = vec![0.0; n_slots];
        let mut count = vec![0usize; n_slots];
        for (&t, &v) in s.times().iter().zip(s.values()) {
            if t < lo {
                continue;
            }
            let k = ((t - lo) / width).floor() as usize;
            if k < n_slots {
                sum[k] += v;
                count[k] += 1;
            }
        }
        (sum, count)
    };
    let (sx, cx) = slot_means(x);
    let (sy, cy) = slot_means(y);
    let (mut t, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..n_slots {
        if cx[k] > 0 && cy[k] > 0 {
            t.push(lo + (k as f64 + 0.5) * width);
            a.push(sx[k] / cx[k] as f64);
            b.push(sy[k] / cy[k] as f64);
        }
    }
    (t, a, b)
}

/// Gaussian-kernel lag autocorrelation for irregular sampling (gACF).
pub fn gacf(ts: &TimeSeries, lag: f64, bandwidth: f64) -> Result<f64> {
    if !(lag > 0.0) || !(bandwidth > 0.0) {
        return Err(Error::domain(format!("gACF lag and bandwidth must be positive ({lag}, {bandwidth})")));
    }
    let t = ts.times();
    let v = ts.values();
    let reach = KERNEL_REACH * bandwidth;
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..t.len() {
        let lo = t.partition_point(|&s| s < t[i] + lag - reach);
        let hi = t.partition_point(|&s| s <= t[i] + lag + reach);
        for j in lo..hi {
            if j == i {
                continue;
            }
            let d = t[j] - t[i] - lag;
            let w = (-d * d * inv).exp();
            num += w * v[i] * v[j];
            den += w;
        }
    }
    if !(den >= 1e-12) {
        return Err(Error::UndefinedPersistence { lag });
    }
    Ok(num / den)
}

/// gACF at lag `mean_dt` with bandwidth `mean_dt / 4`.
pub fn gacf_default(ts: &TimeSeries) -> Result<f64> {
    let dt = ts.mean_dt();
    gacf(ts, dt, 0.25 * dt)
}

/// Removes variability slower than `cutoff`: subtracts a Gaussian-kernel
/// smooth of bandwidth `cutoff / 2 pi` and renormalizes.
pub fn highpass(ts: &TimeSeries, cutoff: f64) -> Result<TimeSeries> {
    if !(cutoff > 0.0) {
        return Err(Error::domain(format!("cutoff must be positive, got {cutoff}")));
    }
    let sigma = cutoff / (2.0 * std::f64::consts::PI);
    let resid: Vec<f64> = ts
        .times()
        .iter()
        .zip(ts.values())
        .map(|(&t, &v)| v - gaussian_at(ts.times(), ts.values(), t, sigma))
        .collect();
    ts.with_values(standardize(&resid)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub x_times: Vec<f64>,
    pub x_values: Vec<f64>,
    pub y_times: Vec<f64>,
    pub y_values: Vec<f64>,
    /// Set when either series has fewer than [`MIN_WINDOW_OBS`] observations.
    pub insufficient: bool,
}

pub const MIN_WINDOW_OBS: usize = 5;

impl Window {
    pub fn x_series(&self) -> Result<TimeSeries> {
        TimeSeries::new(self.x_times.clone(), self.x_values.clone())
    }

    pub fn y_series(&self) -> Result<TimeSeries> {
        TimeSeries::new(self.y_times.clone(), self.y_values.clone())
    }
}

/// Window edges tiling `[lo, hi]`: the first starts at `lo`, windows
/// advance by `step` until one reaches `hi`.
pub fn window_bounds(lo: f64, hi: f64, width: f64, step: f64) -> Result<Vec<(f64, f64)>> {
    if !(width > 0.0) || !(step > 0.0 && step <= width) {
        return Err(Error::domain(format!("need width > 0 and 0 < step <= width (width={width}, step={step})")));
    }
    let span = hi - lo;
    let n = if span <= width {
        1
    } else {
        ((span - width) / step - 1e-9).ceil() as usize + 1
    };
    Ok((0..n)
        .map(|k| {
            let start = lo + k as f64 * step;
            (start, start + width)
        })
        .collect())
}

/// Observations of both series with `start <= t < end`, or `t <= end` when
/// `closed`.
pub fn cut_window(x: &TimeSeries, y: &TimeSeries, start: f64, end: f64, closed: bool) -> Window {
    let take = |s: &TimeSeries| {
        if closed {
            s.slice_inclusive(start, end)
        } else {
            s.slice(start, end)
        }
    };
    let (x_times, x_values) = take(x);
    let (y_times, y_values) = take(y);
    let insufficient = x_times.len() < MIN_WINDOW_OBS || y_times.len() < MIN_WINDOW_OBS;
    Window {
        start,
        end,
        x_times,
        x_values,
        y_times,
        y_values,
        insufficient,
    }
}

/// Sliding windows over the joint span of both series. The window reaching
/// the span end also includes it.
pub fn windows(x: &TimeSeries, y: &TimeSeries, width: f64, step: f64) -> Result<Vec<Window>> {
    let bounds = window_bounds(x.start().min(y.start()), x.end().max(y.end()), width, step)?;
    let n = bounds.len();
    Ok(bounds
        .into_iter()
        .enumerate()
        .map(|(k, (start, end))| cut_window(x, y, start, end, k + 1 == n))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagPoint {
    pub lag: f64,
    /// `None` when this lag left too little overlap.
    pub summary: Option<bayes::Summary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagScan {
    pub best_lag: f64,
    pub points: Vec<LagPoint>,
}

/// Scans candidate lags by which `y` trails `x`: for lag `L` the times of
/// `y` are moved by `-L`, the pair is aligned and the correlation posterior
/// estimated. The best lag maximizes the posterior mode.
pub fn lag_scan(
    x: &TimeSeries,
    y: &TimeSeries,
    lags: &[f64],
    spec: &AlignmentSpec,
    cfg: &InferenceConfig,
) -> Result<LagScan> {
    let x = x.normalize()?;
    let y = y.normalize()?;
    let points: Vec<LagPoint> = lags
        .par_iter()
        .enumerate()
        .map(|(k, &lag)| {
            let summary = align(&x, &y.shifted(-lag), spec).ok().and_then(|pairs| {
                let cfg = cfg.with_stream(&[k as u64]);
                bayes::metropolis(&pairs, &cfg).ok().map(|s| s.summary(bayes::DEFAULT_ALPHA))
            });
            LagPoint { lag, summary }
        })
        .collect();
    let best = points
        .iter()
        .filter_map(|p| p.summary.as_ref().map(|s| (p.lag, s.mode)))
        .fold(None, |acc: Option<(f64, f64)>, cur| match acc {
            Some(a) if a.1 >= cur.1 => Some(a),
            _ => Some(cur),
        });
    let (best_lag, _) = best.ok_or(Error::InsufficientOverlap {
        pairs: 0,
        needed: MIN_PAIRS,
    })?;
    Ok(LagScan { best_lag, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudoproxy::generate_ou;
    use crate::rng::stream;
    use rand_distr::{Distribution, StandardNormal};

    fn ts(times: Vec<f64>, values: Vec<f64>) -> TimeSeries {
        TimeSeries::new(times, values).unwrap()
    }

    fn regular(n: usize, offset: f64, seed: u64) -> TimeSeries {
        let mut rng = stream(seed, &[]);
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        ts((0..n).map(|i| i as f64 + offset).collect(), v).normalize().unwrap()
    }

    #[test]
    fn spec_parsing_and_display() {
        for s in ["LI", "G(0.5)", "G(2)", "NV", "S(1)", "S(2)"] {
            assert_eq!(s.parse::<AlignmentSpec>().unwrap().to_string(), s);
        }
        assert_eq!(AlignmentSpec::defaults().len(), 6);
        assert!("Q(1)".parse::<AlignmentSpec>().is_err());
        assert!("G(-1)".parse::<AlignmentSpec>().is_err());
    }

    #[test]
    fn identical_grids_pair_exactly() {
        let x = regular(50, 0.0, 1);
        let y = regular(50, 0.0, 2);
        for spec in [AlignmentSpec::linear(), AlignmentSpec::nearest(), AlignmentSpec::slotting(1.0)] {
            let p = align(&x, &y, &spec).unwrap();
            let n = p.effective_n();
            assert!(n >= 49, "{spec}: {n}");
            assert_eq!(&p.x[..], &x.values()[..n], "{spec}");
            assert_eq!(&p.y[..], &y.values()[..n], "{spec}");
        }
    }

    #[test]
    fn gaussian_with_narrow_kernel_reproduces_grid_values() {
        let x = regular(50, 0.0, 1);
        let y = regular(50, 0.0, 2);
        let p = align(&x, &y, &AlignmentSpec::gaussian(0.1)).unwrap();
        for (a, b) in p.y.iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_midpoint() {
        let x = ts(vec![0.5, 1.0, 1.5], vec![3.0, 4.0, 5.0]);
        let y = ts(vec![0.0, 2.0], vec![0.0, 2.0]);
        let p = align(&x, &y, &AlignmentSpec::linear()).unwrap();
        assert_eq!(p.y, vec![0.5, 1.0, 1.5]);
        assert_eq!(p.x[1], 4.0);
    }

    #[test]
    fn gaussian_single_observation_is_constant() {
        let x = ts(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0, 4.0]);
        for t in [0.3, 1.7, 2.9] {
            assert_eq!(gaussian_at(&[1.0], &[0.7], t, 0.2), 0.7);
        }
        let y = ts(vec![-1.0, 5.0], vec![0.7, 0.7]);
        let p = align(&x, &y, &AlignmentSpec::gaussian(0.5)).unwrap();
        assert!(p.y.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn slotting_offset_grids() {
        // Hand enumeration: x on 0..20, y on 0.5..19.5, overlap [0.5, 19],
        // width 1 gives 18 complete slots [0.5 + k, 1.5 + k), each holding
        // x = k + 1 and y = k + 0.5.
        let x = regular(20, 0.0, 3);
        let y = regular(20, 0.5, 4);
        let p = align(&x, &y, &AlignmentSpec::slotting(1.0)).unwrap();
        assert_eq!(p.effective_n(), 18);
        for k in 0..18 {
            assert_eq!(p.x[k], x.values()[k + 1]);
            assert_eq!(p.y[k], y.values()[k]);
        }
    }

    #[test]
    fn nearest_is_single_use_and_prefers_earlier_on_ties() {
        let x = ts(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0]);
        // y at 1.5 is equidistant from x=1 and x=2 and is claimed by x=1.
        let y = ts(vec![0.0, 1.5, 3.0], vec![10.0, 11.0, 12.0]);
        let p = align(&x, &y, &AlignmentSpec::nearest()).unwrap();
        assert_eq!(p.x, vec![0.0, 1.0, 3.0]);
        assert_eq!(p.y, vec![10.0, 11.0, 12.0]);

        let y = ts(vec![0.0, 1.0, 1.5, 3.0], vec![10.0, 11.0, 11.5, 12.0]);
        let p = align(&x, &y, &AlignmentSpec::nearest()).unwrap();
        assert_eq!(p.y, vec![10.0, 11.0, 11.5, 12.0]);
    }

    #[test]
    fn errors_for_disjoint_or_short_overlap() {
        let x = ts(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]);
        let y = ts(vec![5.0, 6.0, 7.0], vec![0.0, 1.0, 2.0]);
        assert!(matches!(align(&x, &y, &AlignmentSpec::linear()), Err(Error::NoOverlap)));
        let y = ts(vec![1.5, 6.0, 7.0], vec![0.0, 1.0, 2.0]);
        assert!(matches!(
            align(&x, &y, &AlignmentSpec::linear()),
            Err(Error::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn gacf_matches_classic_acf_on_regular_grid() {
        let path = generate_ou(2000, 1.0, 0.3, &mut stream(5, &[])).unwrap();
        let s = ts((0..2000).map(|i| i as f64).collect(), path).normalize().unwrap();
        let v = s.values();
        let classic = v.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / v.iter().map(|a| a * a).sum::<f64>();
        let g = gacf(&s, 1.0, 0.01).unwrap();
        assert!((g - classic).abs() < 1e-3, "{g} vs {classic}");
    }

    #[test]
    fn gacf_white_noise_and_ou() {
        let s = regular(10_000, 0.0, 6);
        assert!(gacf_default(&s).unwrap().abs() < 0.05);

        let path = generate_ou(100_000, 1.0, 0.1, &mut stream(7, &[])).unwrap();
        let s = ts((0..100_000).map(|i| i as f64).collect(), path).normalize().unwrap();
        let g = gacf_default(&s).unwrap();
        assert!((g - (-0.1f64).exp()).abs() < 0.02, "{g}");
    }

    #[test]
    fn gacf_undefined_without_lagged_pairs() {
        let s = ts(vec![0.0, 1.0, 2.0], vec![-1.0, 0.0, 1.0]);
        assert!(matches!(gacf(&s, 100.0, 0.1), Err(Error::UndefinedPersistence { .. })));
    }

    fn sine(wavelength: f64) -> TimeSeries {
        let n = 4000;
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let v = t.iter().map(|&t| (2.0 * std::f64::consts::PI * t / wavelength).sin()).collect();
        ts(t, v).normalize().unwrap()
    }

    /// Direct-simulation transfer oracle: variance kept after filtering,
    /// measured away from the record ends.
    fn kept_variance(input: &TimeSeries, cutoff: f64) -> f64 {
        let out = highpass(input, cutoff).unwrap();
        // `highpass` renormalizes, so compare the raw residual instead.
        let sigma = cutoff / (2.0 * std::f64::consts::PI);
        let n = input.len();
        let core = n / 5..4 * n / 5;
        let resid: Vec<f64> = core
            .clone()
            .map(|i| input.values()[i] - gaussian_at(input.times(), input.values(), input.times()[i], sigma))
            .collect();
        let vin: f64 = core.clone().map(|i| input.values()[i].powi(2)).sum::<f64>();
        assert_eq!(out.len(), n);
        resid.iter().map(|r| r * r).sum::<f64>() / vin
    }

    #[test]
    fn highpass_transfer() {
        let cutoff = 50.0;
        assert!(kept_variance(&sine(10.0 * cutoff), cutoff) < 0.05);
        assert!(kept_variance(&sine(cutoff / 10.0), cutoff) > 0.8);
    }

    #[test]
    fn highpass_of_constant_fails() {
        let s = ts(vec![0.0, 1.0, 2.0, 3.0], vec![2.0; 4]);
        assert!(matches!(highpass(&s, 10.0), Err(Error::ZeroVariance)));
    }

    #[test]
    fn window_arithmetic() {
        let x = ts((0..=40).map(|i| i as f64 * 500.0).collect(), vec![0.0; 41].iter().enumerate().map(|(i, _)| i as f64).collect());
        let w = windows(&x, &x, 5000.0, 2500.0).unwrap();
        let starts: Vec<f64> = w.iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0.0, 2500.0, 5000.0, 7500.0, 10000.0, 12500.0, 15000.0]);
        assert!(w.iter().all(|w| !w.insufficient));

        let whole = windows(&x, &x, 20_000.0, 20_000.0).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].x_times.len(), 41);
    }

    #[test]
    fn empty_window_is_flagged() {
        let x = ts(vec![0.0, 1.0, 2.0, 3.0, 4.0, 20.0, 21.0, 22.0, 23.0, 24.0], (0..10).map(f64::from).collect());
        let w = windows(&x, &x, 5.0, 5.0).unwrap();
        assert_eq!(w.len(), 5);
        assert!(w[2].insufficient && w[2].x_times.is_empty());
        assert!(!w[0].insufficient);
    }

    #[test]
    fn self_lag_is_recovered() {
        let path = generate_ou(200, 1.0, 0.3, &mut stream(8, &[])).unwrap();
        let x = ts((0..200).map(|i| i as f64).collect(), path);
        let y = x.shifted(7.0);
        let lags: Vec<f64> = (-10..=10).map(f64::from).collect();
        let cfg = InferenceConfig {
            n_steps: 6000,
            n_keep: 500,
            ..InferenceConfig::default()
        };
        let scan = lag_scan(&x, &y, &lags, &AlignmentSpec::linear(), &cfg).unwrap();
        assert_eq!(scan.best_lag, 7.0);
        assert_eq!(scan.points.len(), 21);
    }
}
