//! Pseudoproxy benchmark: simulated pairs, uncertainty scenarios, metrics.
//!
//! Every pair is simulated once and then analysed under each scenario and
//! alignment method. Randomness is drawn from streams derived from the root
//! seed and the cell coordinates, so any cell can be re-run in isolation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{align, gacf_default, AlignmentSpec};
use crate::bayes::{self, pool_ensemble, InferenceConfig, PosteriorSample, Sign};
use crate::chronology::{
    build_age_ensemble, forward_date, AgeEnsemble, CalibrationCurve, EnsembleSettings,
    RadiocarbonDate,
};
use crate::error::{Error, Result};
use crate::pseudoproxy::{
    deposit, latent_pair, sample_core, CoredRecord, LatentPair, ParamRanges, PseudoproxyParams,
};
use crate::rng::{derive_seed, stream};
use crate::series::TimeSeries;

pub const DEFAULT_N_ENS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Equal,
    Unequal,
    AgemodelMedian,
    AgemodelEnsemble,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Equal,
        ScenarioKind::Unequal,
        ScenarioKind::AgemodelMedian,
        ScenarioKind::AgemodelEnsemble,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ScenarioKind::Equal => "equal",
            ScenarioKind::Unequal => "unequal",
            ScenarioKind::AgemodelMedian => "agemodel_median",
            ScenarioKind::AgemodelEnsemble => "agemodel_ensemble",
        }
    }

    pub fn uses_age_model(self) -> bool {
        matches!(self, ScenarioKind::AgemodelMedian | ScenarioKind::AgemodelEnsemble)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.code() == s.trim())
            .ok_or_else(|| Error::domain(format!("unknown scenario {s:?}")))
    }
}

/// A source of timing uncertainty; `n_ens` only matters for the ensemble kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    #[serde(default = "default_n_ens")]
    pub n_ens: usize,
}

fn default_n_ens() -> usize {
    DEFAULT_N_ENS
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            n_ens: DEFAULT_N_ENS,
        }
    }

    pub fn all(n_ens: usize) -> Vec<Self> {
        ScenarioKind::ALL.iter().map(|&kind| Self { kind, n_ens }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ens == 0 {
            return Err(Error::domain("n_ens must be at least 1"));
        }
        Ok(())
    }
}

/// How latent signals become dated sediment records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardModel {
    /// Latent steps per target observation. The latent path has
    /// `n_obs * resolution` steps and cores are sampled every
    /// `resolution * sed_mean` depth units.
    pub resolution: usize,
    /// Calendar years per latent step.
    pub years_per_step: f64,
    /// Calendar age of the first latent step, years BP.
    pub core_top_age: f64,
    /// Observations between consecutive radiocarbon-dated samples; the first
    /// and last observations are always dated.
    pub date_spacing: usize,
    pub meas_sigma: f64,
    /// Realizations behind the median age model.
    pub median_realizations: usize,
    pub chronology: EnsembleSettings,
}

impl Default for ForwardModel {
    fn default() -> Self {
        Self {
            resolution: 8,
            years_per_step: 20.0,
            core_top_age: 1000.0,
            date_spacing: 4,
            meas_sigma: 50.0,
            median_realizations: 200,
            chronology: EnsembleSettings::default(),
        }
    }
}

impl ForwardModel {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::domain("resolution must be at least 1"));
        }
        if !(self.years_per_step > 0.0) || !(self.core_top_age >= 0.0) {
            return Err(Error::domain("years_per_step must be positive and core_top_age non-negative"));
        }
        if self.date_spacing == 0 {
            return Err(Error::domain("date_spacing must be at least 1"));
        }
        if !(self.meas_sigma >= 0.0) || self.median_realizations == 0 {
            return Err(Error::domain("meas_sigma must be non-negative and median_realizations positive"));
        }
        Ok(())
    }

    /// Calendar ages of latent time steps.
    pub fn years(&self, steps: &[f64]) -> Vec<f64> {
        steps.iter().map(|t| self.core_top_age + t * self.years_per_step).collect()
    }
}

/// The record pairs one scenario presents to the estimator; one member
/// except for the age-model ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub members: Vec<(TimeSeries, TimeSeries)>,
}

/// A simulated pseudoproxy pair with everything every scenario needs.
#[derive(Debug, Clone)]
pub struct PairData {
    pub params: PseudoproxyParams,
    pub latent: LatentPair,
    /// Cores of the two independently deposited records.
    pub cores: Result<(CoredRecord, CoredRecord)>,
    pub dated: Result<(DatedCore, DatedCore)>,
    pub equal: Result<ScenarioData>,
    pub unequal: Result<ScenarioData>,
    pub median: Result<ScenarioData>,
    pub ensemble: Result<ScenarioData>,
}

impl PairData {
    pub fn scenario(&self, kind: ScenarioKind) -> Result<&ScenarioData> {
        let data = match kind {
            ScenarioKind::Equal => &self.equal,
            ScenarioKind::Unequal => &self.unequal,
            ScenarioKind::AgemodelMedian => &self.median,
            ScenarioKind::AgemodelEnsemble => &self.ensemble,
        };
        data.as_ref().map_err(Clone::clone)
    }
}

const TAG_LATENT: u64 = 1;
const TAG_SED_SHARED: u64 = 2;
const TAG_SED_X: u64 = 3;
const TAG_SED_Y: u64 = 4;
const TAG_DATES_X: u64 = 5;
const TAG_DATES_Y: u64 = 6;
const TAG_CHAIN: u64 = 7;
const TAG_PAIR: u64 = 8;
const TAG_PARAMS: u64 = 9;

fn series_from(times: Vec<f64>, values: Vec<f64>) -> Result<TimeSeries> {
    TimeSeries::new(times, values).map_err(|e| match e {
        Error::Invalid(msg) => Error::DegenerateChronology(msg),
        other => other,
    })
}

fn date_indices(n: usize, spacing: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).step_by(spacing).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    idx
}

/// Radiocarbon dates of a core and the age model built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedCore {
    pub dates: Vec<RadiocarbonDate>,
    pub ages: AgeEnsemble,
}

fn date_core(
    core: &CoredRecord,
    fm: &ForwardModel,
    curve: &CalibrationCurve,
    n_real: usize,
    root: u64,
    tag: u64,
) -> Result<DatedCore> {
    let mut rng = stream(root, &[tag]);
    let ages = fm.years(&core.times);
    let dates = date_indices(core.len(), fm.date_spacing)
        .into_iter()
        .map(|i| forward_date(core.depths[i], ages[i], curve, fm.meas_sigma, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let ages = build_age_ensemble(&core.depths, &dates, curve, n_real, &fm.chronology, &mut rng)?;
    Ok(DatedCore { dates, ages })
}

/// Simulates one pair: latent signals, a shared-sedimentation core pair,
/// two independent cores and their radiocarbon age models. `n_ens` sets the
/// number of ensemble members kept for the ensemble scenario.
pub fn simulate_pair(
    params: &PseudoproxyParams,
    fm: &ForwardModel,
    curve: &CalibrationCurve,
    n_ens: usize,
) -> Result<PairData> {
    params.validate()?;
    fm.validate()?;
    let root = params.seed;
    let n_latent = params.n_obs * fm.resolution;
    let latent = latent_pair(n_latent, params.coupling, params.drag, &mut stream(root, &[TAG_LATENT]))?;
    let spacing = fm.resolution as f64 * params.sed_mean;
    let core_of = |values: &[f64], tag: u64| {
        let col = deposit(&latent.times, values, params.sed_mean, params.sed_skew, &mut stream(root, &[tag]))?;
        sample_core(&col, spacing)
    };

    let equal = core_of(&latent.x, TAG_SED_SHARED).and_then(|core| {
        let t = fm.years(&core.times);
        let y: Vec<f64> = core.times.iter().map(|&s| latent.y[s as usize]).collect();
        Ok(ScenarioData {
            members: vec![(series_from(t.clone(), core.values)?, series_from(t, y)?)],
        })
    });

    let cores = core_of(&latent.x, TAG_SED_X).and_then(|cx| Ok((cx, core_of(&latent.y, TAG_SED_Y)?)));
    let unequal = cores.as_ref().map_err(Clone::clone).and_then(|(cx, cy)| {
        Ok(ScenarioData {
            members: vec![(
                series_from(fm.years(&cx.times), cx.values.clone())?,
                series_from(fm.years(&cy.times), cy.values.clone())?,
            )],
        })
    });

    let n_real = fm.median_realizations.max(n_ens);
    let dated = cores.as_ref().map_err(Clone::clone).and_then(|(cx, cy)| {
        Ok((
            date_core(cx, fm, curve, n_real, root, TAG_DATES_X)?,
            date_core(cy, fm, curve, n_real, root, TAG_DATES_Y)?,
        ))
    });
    let with_ages = |f: &dyn Fn(&AgeEnsemble, &AgeEnsemble, &CoredRecord, &CoredRecord) -> Result<ScenarioData>| {
        match (&cores, &dated) {
            (Ok((cx, cy)), Ok((dx, dy))) => f(&dx.ages, &dy.ages, cx, cy),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        }
    };
    let median = with_ages(&|ax, ay, cx, cy| {
        Ok(ScenarioData {
            members: vec![(
                series_from(ax.median_ages.clone(), cx.values.clone())?,
                series_from(ay.median_ages.clone(), cy.values.clone())?,
            )],
        })
    });
    let ensemble = with_ages(&|ax, ay, cx, cy| {
        let members = (0..n_ens.max(1))
            .map(|k| {
                Ok((
                    series_from(ax.realizations[k].clone(), cx.values.clone())?,
                    series_from(ay.realizations[k].clone(), cy.values.clone())?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScenarioData { members })
    });

    Ok(PairData {
        params: *params,
        latent,
        cores,
        dated,
        equal,
        unequal,
        median,
        ensemble,
    })
}

/// Posterior summary of one analysed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEstimate {
    pub mode: f64,
    pub idr: f64,
    pub q5: f64,
    pub q95: f64,
    pub sign: Sign,
    pub fraction_positive: f64,
    /// gACF of the first record on the scenario's time axis.
    pub gacf_x: Option<f64>,
    pub effective_n: usize,
    pub n_draws: usize,
    pub members: usize,
}

#[derive(Debug, Clone)]
pub struct RealizationResult {
    pub pair_id: usize,
    pub params: PseudoproxyParams,
    pub method: AlignmentSpec,
    pub scenario: ScenarioSpec,
    /// `Err` records a skipped realization and why.
    pub outcome: Result<CellEstimate>,
}

impl RealizationResult {
    pub fn estimate(&self) -> Option<&CellEstimate> {
        self.outcome.as_ref().ok()
    }

    pub fn is_skipped(&self) -> bool {
        self.outcome.is_err()
    }
}

/// Aligns and estimates every member of a scenario, pooling members.
pub fn analyse(
    data: &ScenarioData,
    method: &AlignmentSpec,
    inference: &InferenceConfig,
) -> Result<(PosteriorSample, CellEstimate)> {
    let mut samples = Vec::with_capacity(data.members.len());
    let mut gacfs = Vec::new();
    let mut eff = Vec::new();
    let mut first_err = None;
    for (k, (x, y)) in data.members.iter().enumerate() {
        let run = || -> Result<(PosteriorSample, Option<f64>, usize)> {
            let x = x.normalize()?;
            let y = y.normalize()?;
            let pairs = align(&x, &y, method)?;
            let cfg = inference.with_stream(&[TAG_CHAIN, method.key(), k as u64]);
            let sample = bayes::metropolis(&pairs, &cfg)?;
            Ok((sample, gacf_default(&x).ok(), pairs.effective_n()))
        };
        match run() {
            Ok((s, g, n)) => {
                samples.push(s);
                gacfs.extend(g);
                eff.push(n);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if samples.is_empty() {
        return Err(first_err.unwrap_or(Error::Invalid("scenario without members".into())));
    }
    let pooled = pool_ensemble(&samples)?;
    let s = pooled.summary(bayes::DEFAULT_ALPHA);
    let est = CellEstimate {
        mode: s.mode,
        idr: s.idr,
        q5: s.q5,
        q95: s.q95,
        sign: s.sign,
        fraction_positive: s.fraction_positive,
        gacf_x: (!gacfs.is_empty()).then(|| crate::series::mean(&gacfs)),
        effective_n: (eff.iter().sum::<usize>() as f64 / eff.len() as f64).round() as usize,
        n_draws: s.n_draws,
        members: samples.len(),
    };
    Ok((pooled, est))
}

/// Runs one cell of an already simulated pair.
pub fn run_cell(
    pair_id: usize,
    pair: &PairData,
    method: &AlignmentSpec,
    scenario: &ScenarioSpec,
    inference: &InferenceConfig,
) -> RealizationResult {
    let inference = inference.with_stream(&[pair.params.seed, scenario.kind as u64]);
    let outcome = pair.scenario(scenario.kind).and_then(|data| {
        let data = if scenario.kind == ScenarioKind::AgemodelEnsemble && data.members.len() > scenario.n_ens {
            std::borrow::Cow::Owned(ScenarioData {
                members: data.members[..scenario.n_ens].to_vec(),
            })
        } else {
            std::borrow::Cow::Borrowed(data)
        };
        analyse(&data, method, &inference).map(|(_, est)| est)
    });
    RealizationResult {
        pair_id,
        params: pair.params,
        method: *method,
        scenario: *scenario,
        outcome,
    }
}

/// Simulates a pair and analyses one method under one scenario.
pub fn run_realization(
    params: &PseudoproxyParams,
    method: &AlignmentSpec,
    scenario: &ScenarioSpec,
    fm: &ForwardModel,
    curve: &CalibrationCurve,
    inference: &InferenceConfig,
) -> Result<RealizationResult> {
    scenario.validate()?;
    let pair = simulate_pair(params, fm, curve, scenario.n_ens)?;
    Ok(run_cell(0, &pair, method, scenario, inference))
}

/// `(mode - c) / c`.
pub fn scaled_bias(mode: f64, c: f64) -> Result<f64> {
    if c == 0.0 {
        return Err(Error::UndefinedScaling);
    }
    Ok((mode - c) / c)
}

/// Root mean square of `mode - c` over `(mode, c)` pairs.
pub fn rmse(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let (sum, n) = pairs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), (m, c)| (s + (m - c).powi(2), n + 1));
    (sum / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignFractions {
    pub correct: f64,
    pub wrong: f64,
    pub indifferent: f64,
}

/// Shares of positive, negative and indifferent decisions for a positively
/// coupled set.
pub fn sign_fractions(signs: impl IntoIterator<Item = Sign>) -> Option<SignFractions> {
    let (mut pos, mut neg, mut n) = (0usize, 0usize, 0usize);
    for s in signs {
        n += 1;
        match s {
            Sign::Positive => pos += 1,
            Sign::Negative => neg += 1,
            Sign::Indifferent => {}
        }
    }
    if n == 0 {
        return None;
    }
    let correct = pos as f64 / n as f64;
    let wrong = neg as f64 / n as f64;
    Some(SignFractions {
        correct,
        wrong,
        indifferent: 1.0 - correct - wrong,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// Every distinct score plus `+inf`, descending.
pub fn sweep_thresholds(positive: &[f64], negative: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = positive.iter().chain(negative).copied().collect();
    t.push(f64::INFINITY);
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// Calls positive iff `score >= threshold`. The area is the trapezoid rule
/// over the curve anchored at `(0, 0)` and `(1, 1)`.
pub fn roc_curve(positive: &[f64], negative: &[f64], thresholds: &[f64]) -> Result<RocCurve> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Invalid("ROC needs both positive and negative cases".into()));
    }
    let rate = |scores: &[f64], t: f64| scores.iter().filter(|&&s| s >= t).count() as f64 / scores.len() as f64;
    let fpr: Vec<f64> = thresholds.iter().map(|&t| rate(negative, t)).collect();
    let tpr: Vec<f64> = thresholds.iter().map(|&t| rate(positive, t)).collect();
    let mut pts: Vec<(f64, f64)> = fpr.iter().copied().zip(tpr.iter().copied()).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let auc = pts.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum();
    Ok(RocCurve {
        thresholds: thresholds.to_vec(),
        fpr,
        tpr,
        auc,
    })
}

/// Which parameter a bin filters on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinParam {
    Coupling,
    Length,
    Drag,
    Gacf,
}

/// Closed interval `[lo, hi]` of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub name: String,
    pub param: BinParam,
    pub lo: f64,
    pub hi: f64,
}

impl Bin {
    pub fn value(&self, r: &RealizationResult) -> Option<f64> {
        match self.param {
            BinParam::Coupling => Some(r.params.coupling),
            BinParam::Length => Some(r.params.n_obs as f64),
            BinParam::Drag => Some(r.params.drag),
            BinParam::Gacf => r.estimate().and_then(|e| e.gacf_x),
        }
    }

    pub fn contains(&self, r: &RealizationResult) -> bool {
        self.value(r).is_some_and(|v| v >= self.lo && v <= self.hi)
    }
}

/// Lowest, middle and highest tenth of the coupling, length and drag
/// intervals, plus gACF classes of width 0.2.
pub fn default_bins(ranges: &ParamRanges) -> Vec<Bin> {
    let mut bins = Vec::new();
    let tenths = [("low", 0.0, 0.1), ("mid", 0.45, 0.55), ("high", 0.9, 1.0)];
    for (param, key, (lo, hi)) in [
        (BinParam::Coupling, "c", ranges.coupling),
        (BinParam::Length, "n_obs", (ranges.n_obs.0 as f64, ranges.n_obs.1 as f64)),
        (BinParam::Drag, "theta", ranges.drag),
    ] {
        for (label, a, b) in tenths {
            bins.push(Bin {
                name: format!("{key}_{label}"),
                param,
                lo: lo + a * (hi - lo),
                hi: lo + b * (hi - lo),
            });
        }
    }
    // Upper edges sit just below the next class so each value lands once.
    let edges = [f64::NEG_INFINITY, 0.2, 0.4, 0.6, 0.8, f64::INFINITY];
    for w in edges.windows(2) {
        bins.push(Bin {
            name: format!("gacf_{}_{}", w[0], w[1]),
            param: BinParam::Gacf,
            lo: w[0],
            hi: if w[1].is_finite() { w[1] - 1e-12 } else { w[1] },
        });
    }
    bins
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub group: String,
    pub method: AlignmentSpec,
    pub scenario: ScenarioKind,
    pub n: usize,
    pub n_skipped: usize,
    pub median_scaled_bias: f64,
    pub scaled_bias_q25: f64,
    pub scaled_bias_q75: f64,
    pub median_scaled_idr: f64,
    pub rmse: f64,
    pub signs: SignFractions,
}

pub const METRICS_HEADER: &str = "group,method,scale,scenario,n,n_skipped,median_scaled_bias,scaled_bias_q25,scaled_bias_q75,median_scaled_idr,rmse,correct,wrong,indifferent";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.group,
            self.method.method.code(),
            self.method.scale,
            self.scenario,
            self.n,
            self.n_skipped,
            self.median_scaled_bias,
            self.scaled_bias_q25,
            self.scaled_bias_q75,
            self.median_scaled_idr,
            self.rmse,
            self.signs.correct,
            self.signs.wrong,
            self.signs.indifferent
        )
    }
}

/// Metrics of one group of positively coupled results; `None` when no
/// result in the group was estimated.
pub fn group_metrics(
    group: &str,
    method: AlignmentSpec,
    scenario: ScenarioKind,
    results: &[&RealizationResult],
) -> Option<MetricsRow> {
    let est: Vec<(&RealizationResult, &CellEstimate)> = results
        .iter()
        .filter_map(|r| r.estimate().map(|e| (*r, e)))
        .filter(|(r, _)| r.params.coupling > 0.0)
        .collect();
    let signs = sign_fractions(est.iter().map(|(_, e)| e.sign))?;
    let mut bias: Vec<f64> = est
        .iter()
        .map(|(r, e)| (e.mode - r.params.coupling) / r.params.coupling)
        .collect();
    bias.sort_by(f64::total_cmp);
    let mut idr: Vec<f64> = est.iter().map(|(r, e)| e.idr / r.params.coupling).collect();
    idr.sort_by(f64::total_cmp);
    Some(MetricsRow {
        group: group.to_string(),
        method,
        scenario,
        n: est.len(),
        n_skipped: results.len() - est.len(),
        median_scaled_bias: bayes::quantile_sorted(&bias, 0.5),
        scaled_bias_q25: bayes::quantile_sorted(&bias, 0.25),
        scaled_bias_q75: bayes::quantile_sorted(&bias, 0.75),
        median_scaled_idr: bayes::quantile_sorted(&idr, 0.5),
        rmse: rmse(est.iter().map(|(r, e)| (e.mode, r.params.coupling))),
        signs,
    })
}

fn cell_keys(results: &[RealizationResult]) -> Vec<(AlignmentSpec, ScenarioKind)> {
    let mut keys: Vec<(AlignmentSpec, ScenarioKind)> = Vec::new();
    for r in results {
        let k = (r.method, r.scenario.kind);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys
}

/// Metrics for every `(group, method, scenario)`; the group `all` comes
/// first, followed by `bins` in order.
pub fn metrics_table(results: &[RealizationResult], bins: &[Bin]) -> Vec<MetricsRow> {
    let keys = cell_keys(results);
    let mut rows = Vec::new();
    let mut push_group = |name: &str, filter: &dyn Fn(&RealizationResult) -> bool| {
        for &(m, s) in &keys {
            let members: Vec<&RealizationResult> = results
                .iter()
                .filter(|r| r.method == m && r.scenario.kind == s && filter(r))
                .collect();
            if let Some(row) = group_metrics(name, m, s, &members) {
                rows.push(row);
            }
        }
    };
    push_group("all", &|_| true);
    for b in bins {
        push_group(&b.name, &|r| b.contains(r));
    }
    rows
}

/// ROC of each `(method, scenario)`, scoring cells by their fraction of
/// positive draws. Negatives come from the uncoupled sweep.
pub fn roc_table(
    coupled: &[RealizationResult],
    uncoupled: &[RealizationResult],
) -> Vec<(AlignmentSpec, ScenarioKind, RocCurve)> {
    let scores = |set: &[RealizationResult], m: AlignmentSpec, s: ScenarioKind| -> Vec<f64> {
        set.iter()
            .filter(|r| r.method == m && r.scenario.kind == s)
            .filter_map(|r| r.estimate().map(|e| e.fraction_positive))
            .collect()
    };
    cell_keys(coupled)
        .into_iter()
        .filter_map(|(m, s)| {
            let pos = scores(coupled, m, s);
            let neg = scores(uncoupled, m, s);
            let roc = roc_curve(&pos, &neg, &sweep_thresholds(&pos, &neg)).ok()?;
            Some((m, s, roc))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub a: AlignmentSpec,
    pub b: AlignmentSpec,
    /// Cells where both methods produced an estimate.
    pub n: usize,
    pub same_sign: f64,
    /// One method positive and the other negative.
    pub opposite_sign: f64,
}

/// Sign agreement between two methods over all `(pair, scenario)` cells.
pub fn sign_agreement(results: &[RealizationResult], a: &AlignmentSpec, b: &AlignmentSpec) -> Agreement {
    let mut by_cell: HashMap<(usize, ScenarioKind), Sign> = HashMap::new();
    for r in results.iter().filter(|r| r.method == *a) {
        if let Some(e) = r.estimate() {
            by_cell.insert((r.pair_id, r.scenario.kind), e.sign);
        }
    }
    let (mut n, mut same, mut opposite) = (0usize, 0usize, 0usize);
    for r in results.iter().filter(|r| r.method == *b) {
        let (Some(e), Some(&other)) = (r.estimate(), by_cell.get(&(r.pair_id, r.scenario.kind))) else {
            continue;
        };
        n += 1;
        same += (e.sign == other) as usize;
        opposite += matches!(
            (e.sign, other),
            (Sign::Positive, Sign::Negative) | (Sign::Negative, Sign::Positive)
        ) as usize;
    }
    let frac = |k: usize| if n == 0 { f64::NAN } else { k as f64 / n as f64 };
    Agreement {
        a: *a,
        b: *b,
        n,
        same_sign: frac(same),
        opposite_sign: frac(opposite),
    }
}

/// Agreement of every unordered method pair.
pub fn agreement_matrix(results: &[RealizationResult], methods: &[AlignmentSpec]) -> Vec<Agreement> {
    let mut out = Vec::new();
    for (i, a) in methods.iter().enumerate() {
        for b in &methods[i + 1..] {
            out.push(sign_agreement(results, a, b));
        }
    }
    out
}

pub const STORE_HEADER: &str =
    "pair_id,method,scale,scenario,c,n_obs,theta,mu_s,gamma_s,gacf,mode,idr,sign,effective_n,skipped";
pub const SCORES_HEADER: &str = "pair_id,method,scale,scenario,c,fraction_positive,n_draws";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line of the result store. Skipped cells leave the estimate columns
/// empty and name the reason in `skipped`.
pub fn store_row(r: &RealizationResult) -> String {
    let p = &r.params;
    let e = r.estimate();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.pair_id,
        r.method.method.code(),
        r.method.scale,
        r.scenario.kind,
        p.coupling,
        p.n_obs,
        p.drag,
        p.sed_mean,
        p.sed_skew,
        opt(e.and_then(|e| e.gacf_x)),
        opt(e.map(|e| e.mode)),
        opt(e.map(|e| e.idr)),
        e.map(|e| e.sign.to_string()).unwrap_or_default(),
        e.map(|e| e.effective_n.to_string()).unwrap_or_default(),
        r.outcome.as_ref().err().map(Error::reason).unwrap_or(""),
    )
}

pub fn score_row(r: &RealizationResult) -> String {
    let e = r.estimate();
    format!(
        "{},{},{},{},{},{},{}\n",
        r.pair_id,
        r.method.method.code(),
        r.method.scale,
        r.scenario.kind,
        r.params.coupling,
        opt(e.map(|e| e.fraction_positive)),
        e.map(|e| e.n_draws.to_string()).unwrap_or_default(),
    )
}

/// Everything that defines a benchmark sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub n_pairs: usize,
    pub methods: Vec<AlignmentSpec>,
    pub scenarios: Vec<ScenarioSpec>,
    pub ranges: ParamRanges,
    pub forward: ForwardModel,
    pub inference: InferenceConfig,
    pub seed: u64,
    /// Also run every pair with zero coupling, as ROC negatives.
    pub null_sweep: bool,
    /// Pairs simulated concurrently between two sink calls.
    pub chunk: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_pairs: 200,
            methods: AlignmentSpec::defaults(),
            scenarios: ScenarioSpec::all(DEFAULT_N_ENS),
            ranges: ParamRanges::default(),
            forward: ForwardModel::default(),
            inference: InferenceConfig::default(),
            seed: 0,
            null_sweep: true,
            chunk: 8,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::domain("n_pairs must be at least 1"));
        }
        if self.methods.is_empty() || self.scenarios.is_empty() {
            return Err(Error::domain("at least one method and one scenario are required"));
        }
        for m in &self.methods {
            m.validate()?;
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        self.ranges.validate()?;
        self.forward.validate()?;
        self.inference.validate()
    }

    /// Generator parameters of pair `pair_id`.
    pub fn pair_params(&self, pair_id: usize) -> PseudoproxyParams {
        let seed = derive_seed(self.seed, &[TAG_PAIR, pair_id as u64]);
        self.ranges.draw(seed, &mut stream(self.seed, &[TAG_PARAMS, pair_id as u64]))
    }

    fn n_ens(&self) -> usize {
        self.scenarios
            .iter()
            .filter(|s| s.kind == ScenarioKind::AgemodelEnsemble)
            .map(|s| s.n_ens)
            .max()
            .unwrap_or(1)
    }
}

/// All cells of one pair, in method-major then scenario order.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub pair_id: usize,
    pub coupled: Vec<RealizationResult>,
    pub uncoupled: Vec<RealizationResult>,
}

fn run_pair(cfg: &SuiteConfig, curve: &CalibrationCurve, pair_id: usize) -> Result<PairOutcome> {
    let params = cfg.pair_params(pair_id);
    let cells = |params: &PseudoproxyParams| -> Result<Vec<RealizationResult>> {
        let pair = simulate_pair(params, &cfg.forward, curve, cfg.n_ens())?;
        let grid: Vec<(&AlignmentSpec, &ScenarioSpec)> = cfg
            .methods
            .iter()
            .flat_map(|m| cfg.scenarios.iter().map(move |s| (m, s)))
            .collect();
        Ok(grid
            .par_iter()
            .map(|(m, s)| run_cell(pair_id, &pair, m, s, &cfg.inference))
            .collect())
    };
    let coupled = cells(&params)?;
    let uncoupled = if cfg.null_sweep {
        cells(&PseudoproxyParams {
            coupling: 0.0,
            ..params
        })?
    } else {
        Vec::new()
    };
    Ok(PairOutcome {
        pair_id,
        coupled,
        uncoupled,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SuiteResults {
    pub coupled: Vec<RealizationResult>,
    pub uncoupled: Vec<RealizationResult>,
}

impl SuiteResults {
    pub fn skip_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for r in self.coupled.iter().chain(&self.uncoupled) {
            if let Err(e) = &r.outcome {
                *counts.entry(e.reason()).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Runs the sweep. `sink` sees each pair's cells in pair order as soon as
/// its chunk is done; an error from the sink stops the run.
pub fn run_suite(
    cfg: &SuiteConfig,
    curve: &CalibrationCurve,
    mut sink: impl FnMut(&PairOutcome) -> Result<()>,
) -> Result<SuiteResults> {
    cfg.validate()?;
    let mut out = SuiteResults::default();
    let chunk = cfg.chunk.max(1);
    let mut start = 0;
    while start < cfg.n_pairs {
        let end = (start + chunk).min(cfg.n_pairs);
        let done: Vec<Result<PairOutcome>> = (start..end)
            .into_par_iter()
            .map(|i| run_pair(cfg, curve, i))
            .collect();
        for pair in done {
            let pair = pair?;
            sink(&pair)?;
            out.coupled.extend(pair.coupled);
            out.uncoupled.extend(pair.uncoupled);
        }
        log::info!("{end}/{} pairs done", cfg.n_pairs);
        start = end;
    }
    Ok(out)
}
