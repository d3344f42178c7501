//! Synthetic proxy records with known coupling.
//!
//! A pair of unit-variance Ornstein-Uhlenbeck paths is coupled linearly, each
//! path is laid down as a column of gamma-distributed sediment layers, and the
//! column is cored at regular depth intervals. The result is an irregularly
//! sampled record whose true observation times are known.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Generator knobs of one pseudoproxy pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoproxyParams {
    pub n_obs: usize,
    pub coupling: f64,
    pub drag: f64,
    pub sed_mean: f64,
    pub sed_skew: f64,
    pub seed: u64,
}

/// Closed intervals the benchmark sweep draws each knob from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamRanges {
    pub n_obs: (usize, usize),
    pub coupling: (f64, f64),
    pub drag: (f64, f64),
    pub sed_mean: (f64, f64),
    pub sed_skew: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            n_obs: (25, 300),
            coupling: (0.1, 0.9),
            drag: (0.01, 0.9),
            sed_mean: (0.2, 0.5),
            sed_skew: (1.0, 2.0),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo <= hi;
        if !(ok(self.n_obs.0 as f64, self.n_obs.1 as f64)
            && ok(self.coupling.0, self.coupling.1)
            && ok(self.drag.0, self.drag.1)
            && ok(self.sed_mean.0, self.sed_mean.1)
            && ok(self.sed_skew.0, self.sed_skew.1))
        {
            return Err(Error::domain("parameter range with lower bound above upper bound"));
        }
        let probe = PseudoproxyParams {
            n_obs: self.n_obs.0,
            coupling: self.coupling.0,
            drag: self.drag.0,
            sed_mean: self.sed_mean.0,
            sed_skew: self.sed_skew.0,
            seed: 0,
        };
        probe.validate()?;
        PseudoproxyParams {
            n_obs: self.n_obs.1,
            coupling: self.coupling.1,
            drag: self.drag.1,
            sed_mean: self.sed_mean.1,
            sed_skew: self.sed_skew.1,
            seed: 0,
        }
        .validate()
    }

    /// Uniform draw of every knob.
    pub fn draw<R: Rng + ?Sized>(&self, seed: u64, rng: &mut R) -> PseudoproxyParams {
        let real = |rng: &mut R, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                Uniform::new_inclusive(lo, hi).unwrap().sample(rng)
            }
        };
        let n_obs = rng.random_range(self.n_obs.0..=self.n_obs.1);
        PseudoproxyParams {
            n_obs,
            coupling: real(rng, self.coupling),
            drag: real(rng, self.drag),
            sed_mean: real(rng, self.sed_mean),
            sed_skew: real(rng, self.sed_skew),
            seed,
        }
    }
}

impl PseudoproxyParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 2 {
            return Err(Error::domain("n_obs must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(Error::domain(format!("coupling {} outside [0, 1]", self.coupling)));
        }
        for (name, v) in [
            ("drag", self.drag),
            ("sed_mean", self.sed_mean),
            ("sed_skew", self.sed_skew),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Coupled latent signals on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Stationary unit-variance OU path sampled every `dt` with the exact
/// transition `x' = a x + sqrt(1 - a^2) z`, `a = exp(-drag dt)`.
pub fn generate_ou<R: Rng + ?Sized>(n: usize, dt: f64, drag: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(drag > 0.0) {
        return Err(Error::domain(format!(
            "OU step and drag must be positive (dt={dt}, drag={drag})"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let a = (-drag * dt).exp();
    let innovation_sd = (-(-2.0 * drag * dt).exp_m1()).sqrt();
    let mut path = Vec::with_capacity(n);
    let mut state: f64 = StandardNormal.sample(rng);
    path.push(state);
    for _ in 1..n {
        let z: f64 = StandardNormal.sample(rng);
        state = a * state + innovation_sd * z;
        path.push(state);
    }
    Ok(path)
}

/// `y = c x + sqrt(1 - c^2) e` with `e` an independent OU path of the same drag.
pub fn couple<R: Rng + ?Sized>(
    x: &[f64],
    coupling: f64,
    drag: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&coupling) {
        return Err(Error::domain(format!("coupling {coupling} outside [0, 1]")));
    }
    let noise = generate_ou(x.len(), dt, drag, rng)?;
    let w = (1.0 - coupling * coupling).sqrt();
    Ok(x.iter().zip(&noise).map(|(a, e)| coupling * a + w * e).collect())
}

/// Latent pair on the unit grid `0, 1, ..., n-1`.
pub fn latent_pair<R: Rng + ?Sized>(n: usize, coupling: f64, drag: f64, rng: &mut R) -> Result<LatentPair> {
    let x = generate_ou(n, 1.0, drag, rng)?;
    let y = couple(&x, coupling, drag, 1.0, rng)?;
    Ok(LatentPair {
        times: (0..n).map(|i| i as f64).collect(),
        x,
        y,
    })
}

/// Gamma shape and scale matching a mean and skewness.
pub fn gamma_shape_scale(sed_mean: f64, sed_skew: f64) -> Result<(f64, f64)> {
    if !(sed_mean > 0.0) || !(sed_skew > 0.0) {
        return Err(Error::domain(format!(
            "sedimentation mean and skewness must be positive (mean={sed_mean}, skew={sed_skew})"
        )));
    }
    let shape = (2.0 / sed_skew).powi(2);
    Ok((shape, sed_mean / shape))
}

/// Layered sediment: layer `i` spans `[tops[i], tops[i+1])`, the last layer
/// ends at `bottom`.
#[derive(Debug, Clone, PartialEq)]
pub struct SedimentColumn {
    pub layer_top_depths: Vec<f64>,
    pub bottom: f64,
    pub layer_times: Vec<f64>,
    pub assigned_values: Vec<f64>,
}

impl SedimentColumn {
    pub fn total_depth(&self) -> f64 {
        self.bottom
    }

    pub fn thicknesses(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.layer_top_depths.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(&last) = self.layer_top_depths.last() {
            out.push(self.bottom - last);
        }
        out
    }

    /// Index of the layer containing `depth`, if any.
    pub fn layer_at(&self, depth: f64) -> Option<usize> {
        if depth < 0.0 || depth >= self.bottom {
            return None;
        }
        Some(self.layer_top_depths.partition_point(|&top| top <= depth) - 1)
    }
}

/// Assigns one gamma-thickness layer to every latent value.
pub fn deposit<R: Rng + ?Sized>(
    times: &[f64],
    values: &[f64],
    sed_mean: f64,
    sed_skew: f64,
    rng: &mut R,
) -> Result<SedimentColumn> {
    if times.len() != values.len() {
        return Err(Error::Invalid("times and values differ in length".into()));
    }
    let (shape, scale) = gamma_shape_scale(sed_mean, sed_skew)?;
    let gamma = Gamma::new(shape, scale).map_err(Error::domain)?;
    let mut tops = Vec::with_capacity(values.len());
    let mut depth = 0.0;
    for _ in values {
        tops.push(depth);
        // Gamma draws can underflow to zero for small shapes.
        let d: f64 = gamma.sample(rng).max(f64::MIN_POSITIVE);
        depth += d;
    }
    Ok(SedimentColumn {
        layer_top_depths: tops,
        bottom: depth,
        layer_times: times.to_vec(),
        assigned_values: values.to_vec(),
    })
}

/// A cored record: one observation per sampled layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CoredRecord {
    /// Depth of the first core sample that landed in the layer.
    pub depths: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CoredRecord {
    pub fn series(&self) -> Result<TimeSeries> {
        TimeSeries::new(self.times.clone(), self.values.clone())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Samples the column at depths `(k + 1/2) * spacing` and reads the value of
/// the containing layer. Samples hitting an already sampled layer are dropped.
pub fn sample_core(column: &SedimentColumn, sample_spacing: f64) -> Result<CoredRecord> {
    if !(sample_spacing > 0.0) {
        return Err(Error::domain(format!("sample spacing must be positive, got {sample_spacing}")));
    }
    if sample_spacing > column.total_depth() {
        return Err(Error::EmptyOutput(format!(
            "spacing {sample_spacing} exceeds core depth {}",
            column.total_depth()
        )));
    }
    let mut rec = CoredRecord {
        depths: Vec::new(),
        times: Vec::new(),
        values: Vec::new(),
    };
    let mut last_layer = None;
    let mut k = 0usize;
    loop {
        let depth = (k as f64 + 0.5) * sample_spacing;
        let Some(layer) = column.layer_at(depth) else {
            break;
        };
        if last_layer != Some(layer) {
            rec.depths.push(depth);
            rec.times.push(column.layer_times[layer]);
            rec.values.push(column.assigned_values[layer]);
            last_layer = Some(layer);
        }
        k += 1;
    }
    if rec.len() < 2 {
        return Err(Error::EmptyOutput(format!(
            "only {} observation(s) at spacing {sample_spacing}",
            rec.len()
        )));
    }
    Ok(rec)
}
