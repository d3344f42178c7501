//! Bivariate normal model of concurrent pairs and its posterior.
//!
//! Priors: `N(0, 10)` on both means, `HalfCauchy(2.5)` on both standard
//! deviations, the two-dimensional LKJ density on the correlation with a
//! `Uniform(0, 5)` shape parameter. Sampling runs a component-wise random
//! walk Metropolis chain in `(mu_x, mu_y, ln sigma_x, ln sigma_y, atanh rho, eta)`.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::alignment::AlignedPairs;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const MEAN_PRIOR_SD: f64 = 10.0;
pub const SIGMA_PRIOR_SCALE: f64 = 2.5;
pub const ETA_MAX: f64 = 5.0;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnmParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
    pub eta: f64,
}

impl BnmParams {
    pub fn in_domain(&self) -> bool {
        self.mu_x.is_finite()
            && self.mu_y.is_finite()
            && self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.sigma_x.is_finite()
            && self.sigma_y.is_finite()
            && self.rho.abs() < 1.0
            && self.eta > 0.0
            && self.eta < ETA_MAX
    }
}

/// Sums that determine the bivariate normal likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientStats {
    pub n: f64,
    pub sx: f64,
    pub sy: f64,
    pub sxx: f64,
    pub syy: f64,
    pub sxy: f64,
}

impl SufficientStats {
    pub fn from_pairs(x: &[f64], y: &[f64]) -> Self {
        let mut s = Self {
            n: x.len() as f64,
            sx: 0.0,
            sy: 0.0,
            sxx: 0.0,
            syy: 0.0,
            sxy: 0.0,
        };
        for (&a, &b) in x.iter().zip(y) {
            s.sx += a;
            s.sy += b;
            s.sxx += a * a;
            s.syy += b * b;
            s.sxy += a * b;
        }
        s
    }
}

/// `ln(1 - tanh(z)^2)` without cancellation.
fn log1m_tanh2(z: f64) -> f64 {
    let a = z.abs();
    -2.0 * (a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2)
}

fn log1m_rho2(rho: f64) -> f64 {
    ((1.0 - rho) * (1.0 + rho)).ln()
}

fn log_lik_parts(p: &BnmParams, log1m: f64, s: &SufficientStats) -> f64 {
    let (mx, my) = (p.mu_x, p.mu_y);
    let suu = (s.sxx - 2.0 * mx * s.sx + s.n * mx * mx) / (p.sigma_x * p.sigma_x);
    let svv = (s.syy - 2.0 * my * s.sy + s.n * my * my) / (p.sigma_y * p.sigma_y);
    let suv = (s.sxy - mx * s.sy - my * s.sx + s.n * mx * my) / (p.sigma_x * p.sigma_y);
    let q = suu - 2.0 * p.rho * suv + svv;
    -s.n * (LN_2PI + p.sigma_x.ln() + p.sigma_y.ln() + 0.5 * log1m) - 0.5 * q / log1m.exp()
}

pub fn log_likelihood(p: &BnmParams, stats: &SufficientStats) -> f64 {
    if !p.in_domain() {
        return f64::NEG_INFINITY;
    }
    log_lik_parts(p, log1m_rho2(p.rho), stats)
}

/// Normalized LKJ density of a 2x2 correlation matrix, as a density of `rho`
/// on `(-1, 1)`: `(1 - rho^2)^(eta - 1) / (2^(2 eta - 1) B(eta, eta))`.
pub fn lkj_log_density(rho: f64, eta: f64) -> f64 {
    if !(rho.abs() < 1.0) || !(eta > 0.0) {
        return f64::NEG_INFINITY;
    }
    lkj_with_log1m(log1m_rho2(rho), eta)
}

fn lkj_with_log1m(log1m: f64, eta: f64) -> f64 {
    (eta - 1.0) * log1m + lkj_norm(eta)
}

fn normal_log_density(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd).powi(2)
}

fn half_cauchy_log_density(x: f64, scale: f64) -> f64 {
    (2.0 / (std::f64::consts::PI * scale)).ln() - (x / scale).powi(2).ln_1p()
}

fn log_prior_parts(p: &BnmParams, log1m: f64) -> f64 {
    normal_log_density(p.mu_x, MEAN_PRIOR_SD)
        + normal_log_density(p.mu_y, MEAN_PRIOR_SD)
        + half_cauchy_log_density(p.sigma_x, SIGMA_PRIOR_SCALE)
        + half_cauchy_log_density(p.sigma_y, SIGMA_PRIOR_SCALE)
        + lkj_with_log1m(log1m, p.eta)
        - ETA_MAX.ln()
}

pub fn log_prior(p: &BnmParams) -> f64 {
    if !p.in_domain() {
        return f64::NEG_INFINITY;
    }
    log_prior_parts(p, log1m_rho2(p.rho))
}

/// Unnormalized log posterior; `-inf` outside the parameter domain.
pub fn log_posterior(p: &BnmParams, pairs: &AlignedPairs) -> f64 {
    let stats = SufficientStats::from_pairs(&pairs.x, &pairs.y);
    log_likelihood(p, &stats) + log_prior(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub n_steps: usize,
    pub burn_fraction: f64,
    pub n_keep: usize,
    /// Random-walk widths for `(mu_x, mu_y, ln sigma_x, ln sigma_y, atanh rho, eta)`.
    pub proposal_scales: [f64; 6],
    /// Tune widths during burn-in towards 20-40% acceptance, then freeze.
    pub adapt: bool,
    pub seed: u64,
    /// Hold `eta` at this value instead of sampling it.
    pub fixed_eta: Option<f64>,
    /// Drop the likelihood and sample the prior only.
    pub prior_only: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_steps: 30_000,
            burn_fraction: 1.0 / 3.0,
            n_keep: 1000,
            proposal_scales: [0.1, 0.1, 0.1, 0.1, 0.15, 0.25],
            adapt: true,
            seed: 0,
            fixed_eta: None,
            prior_only: false,
        }
    }
}

impl InferenceConfig {
    pub fn burn_in(&self) -> usize {
        (self.n_steps as f64 * self.burn_fraction).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_fraction) {
            return Err(Error::domain(format!("burn_fraction {} outside [0, 1)", self.burn_fraction)));
        }
        let kept = self.n_steps - self.burn_in();
        if self.n_keep == 0 || self.n_keep > kept {
            return Err(Error::domain(format!(
                "n_keep {} must be between 1 and the {kept} post-burn-in steps",
                self.n_keep
            )));
        }
        if self.proposal_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::domain("proposal scales must be positive"));
        }
        if let Some(eta) = self.fixed_eta {
            if !(eta > 0.0 && eta < ETA_MAX) {
                return Err(Error::domain(format!("fixed eta {eta} outside (0, {ETA_MAX})")));
            }
        }
        Ok(())
    }

    /// Copy with the seed moved to an independent child stream.
    pub fn with_stream(&self, path: &[u64]) -> Self {
        Self {
            seed: derive_seed(self.seed, path),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Single,
    Pooled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub acceptance_rate: f64,
    /// Difference of the two half-chain means of rho in units of the
    /// posterior standard deviation.
    pub split_half_discrepancy: f64,
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub rho_draws: Vec<f64>,
    pub provenance: Provenance,
    pub diagnostics: Vec<Diagnostics>,
}

impl PosteriorSample {
    pub fn new(rho_draws: Vec<f64>) -> Result<Self> {
        if rho_draws.is_empty() {
            return Err(Error::Invalid("empty posterior sample".into()));
        }
        if let Some(r) = rho_draws.iter().find(|r| !(r.abs() < 1.0)) {
            return Err(Error::Invalid(format!("correlation draw {r} outside (-1, 1)")));
        }
        Ok(Self {
            rho_draws,
            provenance: Provenance::Single,
            diagnostics: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rho_draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_draws.is_empty()
    }

    pub fn has_warning(&self) -> bool {
        self.diagnostics.iter().any(|d| d.warning)
    }

    pub fn mode(&self) -> f64 {
        posterior_mode(&self.rho_draws)
    }

    pub fn idr(&self) -> f64 {
        idr(&self.rho_draws)
    }

    pub fn fraction_positive(&self) -> f64 {
        self.rho_draws.iter().filter(|&&r| r > 0.0).count() as f64 / self.len() as f64
    }

    pub fn sign(&self, alpha: f64) -> Sign {
        sign_decision(&self.rho_draws, alpha)
    }

    pub fn summary(&self, alpha: f64) -> Summary {
        let mut sorted = self.rho_draws.clone();
        sorted.sort_by(f64::total_cmp);
        let q5 = quantile_sorted(&sorted, 0.05);
        let q95 = quantile_sorted(&sorted, 0.95);
        Summary {
            mode: mode_sorted(&sorted),
            q5,
            q95,
            median: quantile_sorted(&sorted, 0.5),
            idr: q95 - q5,
            fraction_positive: self.fraction_positive(),
            sign: self.sign(alpha),
            n_draws: self.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mode: f64,
    pub q5: f64,
    pub q95: f64,
    pub median: f64,
    pub idr: f64,
    pub fraction_positive: f64,
    pub sign: Sign,
    pub n_draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
    Indifferent,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Positive => "positive",
            Sign::Negative => "negative",
            Sign::Indifferent => "indifferent",
        })
    }
}

impl std::str::FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Sign::Positive),
            "negative" => Ok(Sign::Negative),
            "indifferent" => Ok(Sign::Indifferent),
            _ => Err(Error::Invalid(format!("unknown sign {s:?}"))),
        }
    }
}

/// Chain position in sampling coordinates
/// `(mu_x, mu_y, ln sigma_x, ln sigma_y, atanh rho, eta)` together with the
/// derived quantities the density needs, so a single-coordinate move only
/// recomputes what it touches.
#[derive(Debug, Clone, Copy)]
struct Point {
    s: [f64; 6],
    sigma: [f64; 2],
    /// `ln(1 + (sigma / scale)^2)` of each standard deviation.
    cauchy: [f64; 2],
    rho: f64,
    log1m: f64,
    one_m: f64,
    /// LKJ normalization of the current `eta`.
    eta_norm: f64,
}

fn lkj_norm(eta: f64) -> f64 {
    -(2.0 * eta - 1.0) * std::f64::consts::LN_2 - (2.0 * ln_gamma(eta) - ln_gamma(2.0 * eta))
}

impl Point {
    fn new(s: [f64; 6]) -> Self {
        let mut p = Point {
            s,
            sigma: [0.0; 2],
            cauchy: [0.0; 2],
            rho: 0.0,
            log1m: 0.0,
            one_m: 1.0,
            eta_norm: 0.0,
        };
        for d in 2..6 {
            p.refresh(d);
        }
        p
    }

    fn refresh(&mut self, d: usize) {
        match d {
            2 | 3 => {
                let k = d - 2;
                self.sigma[k] = self.s[d].exp();
                self.cauchy[k] = (self.sigma[k] / SIGMA_PRIOR_SCALE).powi(2).ln_1p();
            }
            4 => {
                self.rho = self.s[4].tanh();
                self.log1m = log1m_tanh2(self.s[4]);
                self.one_m = self.log1m.exp();
            }
            5 if self.s[5] > 0.0 && self.s[5] < ETA_MAX => {
                self.eta_norm = lkj_norm(self.s[5]);
            }
            _ => {}
        }
    }

    fn moved(&self, d: usize, value: f64) -> Self {
        let mut p = *self;
        p.s[d] = value;
        p.refresh(d);
        p
    }

    fn params(&self) -> BnmParams {
        BnmParams {
            mu_x: self.s[0],
            mu_y: self.s[1],
            sigma_x: self.sigma[0],
            sigma_y: self.sigma[1],
            rho: self.rho,
            eta: self.s[5],
        }
    }
}

struct Target<'a> {
    stats: &'a SufficientStats,
    prior_only: bool,
}

impl Target<'_> {
    /// Log posterior in sampling coordinates up to a constant, Jacobian
    /// included.
    fn log_density(&self, p: &Point) -> f64 {
        let eta = p.s[5];
        if !(eta > 0.0 && eta < ETA_MAX)
            || !(p.rho.abs() < 1.0)
            || !(p.sigma[0] > 0.0 && p.sigma[1] > 0.0)
            || !p.sigma[0].is_finite()
            || !p.sigma[1].is_finite()
        {
            return f64::NEG_INFINITY;
        }
        let [mx, my, lx, ly, _, _] = p.s;
        let lik = if self.prior_only {
            0.0
        } else {
            let s = self.stats;
            let (ix, iy) = (1.0 / p.sigma[0], 1.0 / p.sigma[1]);
            let suu = (s.sxx - 2.0 * mx * s.sx + s.n * mx * mx) * ix * ix;
            let svv = (s.syy - 2.0 * my * s.sy + s.n * my * my) * iy * iy;
            let suv = (s.sxy - mx * s.sy - my * s.sx + s.n * mx * my) * ix * iy;
            -s.n * (lx + ly + 0.5 * p.log1m) - 0.5 * (suu - 2.0 * p.rho * suv + svv) / p.one_m
        };
        let prior = -0.5 * (mx * mx + my * my) / (MEAN_PRIOR_SD * MEAN_PRIOR_SD) - p.cauchy[0] - p.cauchy[1]
            + (eta - 1.0) * p.log1m
            + p.eta_norm;
        lik + prior + lx + ly + p.log1m
    }
}

const ADAPT_WINDOW: usize = 100;

/// Random-walk Metropolis estimate of the correlation posterior.
pub fn metropolis(pairs: &AlignedPairs, cfg: &InferenceConfig) -> Result<PosteriorSample> {
    cfg.validate()?;
    if pairs.effective_n() < crate::alignment::MIN_PAIRS {
        return Err(Error::InsufficientOverlap {
            pairs: pairs.effective_n(),
            needed: crate::alignment::MIN_PAIRS,
        });
    }
    let stats = SufficientStats::from_pairs(&pairs.x, &pairs.y);
    run_chain(&stats, cfg)
}

fn run_chain(stats: &SufficientStats, cfg: &InferenceConfig) -> Result<PosteriorSample> {
    let mut rng = stream(cfg.seed, &[]);
    let target = Target {
        stats,
        prior_only: cfg.prior_only,
    };
    let n = stats.n.max(1.0);
    let (mx, my) = (stats.sx / n, stats.sy / n);
    let var = |sq: f64, m: f64| (sq / n - m * m).max(1e-6);
    let eta0 = cfg.fixed_eta.unwrap_or(1.0);
    let mut point = if cfg.prior_only {
        Point::new([0.0, 0.0, 0.0, 0.0, 0.0, eta0])
    } else {
        Point::new([mx, my, 0.5 * var(stats.sxx, mx).ln(), 0.5 * var(stats.syy, my).ln(), 0.0, eta0])
    };
    let n_dims = if cfg.fixed_eta.is_some() { 5 } else { 6 };
    let mut scales = cfg.proposal_scales;
    let mut current = target.log_density(&point);
    debug_assert!(current.is_finite());

    let burn = cfg.burn_in();
    let kept = cfg.n_steps - burn;
    let keep_index = |k: usize| burn + ((k + 1) * kept) / cfg.n_keep - 1;
    let mut next_keep = 0usize;
    let mut draws = Vec::with_capacity(cfg.n_keep);
    let mut window_acc = [0usize; 6];
    let (mut post_acc, mut post_tries) = (0usize, 0usize);

    for step in 0..cfg.n_steps {
        for d in 0..n_dims {
            let z: f64 = StandardNormal.sample(&mut rng);
            let proposal = point.moved(d, point.s[d] + scales[d] * z);
            let lp = target.log_density(&proposal);
            let accept = lp >= current || (lp.is_finite() && rng.random::<f64>().ln() < lp - current);
            if accept {
                point = proposal;
                current = lp;
                window_acc[d] += 1;
            }
            if step >= burn {
                post_tries += 1;
                post_acc += accept as usize;
            }
        }
        if cfg.adapt && step < burn && (step + 1) % ADAPT_WINDOW == 0 {
            for d in 0..n_dims {
                let rate = window_acc[d] as f64 / ADAPT_WINDOW as f64;
                if rate < 0.2 {
                    scales[d] *= 0.7;
                } else if rate > 0.4 {
                    scales[d] *= 1.4;
                }
                window_acc[d] = 0;
            }
        }
        if next_keep < cfg.n_keep && step == keep_index(next_keep) {
            debug_assert!(point.params().in_domain());
            draws.push(point.rho);
            next_keep += 1;
        }
    }

    let acceptance_rate = post_acc as f64 / post_tries.max(1) as f64;
    let half = draws.len() / 2;
    let sd = crate::series::variance(&draws).sqrt();
    let split = if half > 0 && sd > 0.0 {
        (crate::series::mean(&draws[..half]) - crate::series::mean(&draws[half..])).abs() / sd
    } else {
        0.0
    };
    let warning = !(0.01..=0.99).contains(&acceptance_rate);
    if warning {
        log::warn!("chain seed {}: acceptance rate {acceptance_rate:.3} after burn-in", cfg.seed);
    }
    log::debug!(
        "chain seed {}: acceptance {acceptance_rate:.3}, split-half discrepancy {split:.3}",
        cfg.seed
    );
    let mut sample = PosteriorSample::new(draws)?;
    sample.diagnostics.push(Diagnostics {
        acceptance_rate,
        split_half_discrepancy: split,
        warning,
    });
    Ok(sample)
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(draws: &[f64], q: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Interdecile range `Q95 - Q5`.
pub fn idr(draws: &[f64]) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.95) - quantile_sorted(&sorted, 0.05)
}

pub const KDE_GRID: usize = 512;
/// Kernel contributions beyond this many bandwidths are below 1e-15.
const KDE_REACH: f64 = 8.5;

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let sd = crate::series::variance(sorted).sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Location of the highest Gaussian KDE value on a 512-point grid spanning
/// the draws.
pub fn posterior_mode(draws: &[f64]) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    mode_sorted(&sorted)
}

fn mode_sorted(sorted: &[f64]) -> f64 {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if sorted.len() < 2 || hi == lo {
        return lo;
    }
    let h = silverman_bandwidth(sorted);
    if !(h > 0.0) {
        return lo;
    }
    let inv = 1.0 / (2.0 * h * h);
    let step = (hi - lo) / (KDE_GRID - 1) as f64;
    let reach = ((KDE_REACH * h) / step).ceil() as usize;
    // Along the grid consecutive kernel values differ by a factor that
    // itself shrinks geometrically, so each draw needs three exponentials.
    let shrink = (-2.0 * step * step * inv).exp();
    let mut dens = vec![0.0; KDE_GRID];
    for &v in sorted {
        let k0 = (((v - lo) / step).round() as usize).min(KDE_GRID - 1);
        let d0 = lo + k0 as f64 * step - v;
        let w0 = (-d0 * d0 * inv).exp();
        dens[k0] += w0;
        let (mut w, mut r) = (w0, (-(2.0 * d0 * step + step * step) * inv).exp());
        for cell in dens.iter_mut().take((k0 + reach + 1).min(KDE_GRID)).skip(k0 + 1) {
            w *= r;
            r *= shrink;
            *cell += w;
        }
        let (mut w, mut r) = (w0, (-(-2.0 * d0 * step + step * step) * inv).exp());
        for cell in dens[k0.saturating_sub(reach)..k0].iter_mut().rev() {
            w *= r;
            r *= shrink;
            *cell += w;
        }
    }
    let best = (0..KDE_GRID).fold(0, |b, k| if dens[k] > dens[b] { k } else { b });
    lo + best as f64 * step
}

/// Positive (negative) when at least `1 - alpha` of the draws lie above
/// (below) zero, indifferent otherwise.
pub fn sign_decision(draws: &[f64], alpha: f64) -> Sign {
    let n = draws.len() as f64;
    let pos = draws.iter().filter(|&&r| r > 0.0).count() as f64 / n;
    let neg = draws.iter().filter(|&&r| r < 0.0).count() as f64 / n;
    if pos >= 1.0 - alpha {
        Sign::Positive
    } else if neg >= 1.0 - alpha {
        Sign::Negative
    } else {
        Sign::Indifferent
    }
}

/// Union of the draws of several posterior samples.
pub fn pool_ensemble(samples: &[PosteriorSample]) -> Result<PosteriorSample> {
    if samples.is_empty() {
        return Err(Error::Invalid("cannot pool an empty ensemble".into()));
    }
    if samples.len() == 1 {
        return Ok(samples[0].clone());
    }
    let members: usize = samples
        .iter()
        .map(|s| match s.provenance {
            Provenance::Single => 1,
            Provenance::Pooled(k) => k,
        })
        .sum();
    Ok(PosteriorSample {
        rho_draws: samples.iter().flat_map(|s| s.rho_draws.iter().copied()).collect(),
        provenance: Provenance::Pooled(members),
        diagnostics: samples.iter().flat_map(|s| s.diagnostics.iter().copied()).collect(),
    })
}
