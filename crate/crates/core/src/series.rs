use crate::error::{Error, Result};

/// Irregularly sampled series: strictly increasing times, finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Invalid(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::Invalid("a time series needs at least 2 observations".into()));
        }
        if let Some(i) = times
            .iter()
            .chain(values.iter())
            .position(|v| !v.is_finite())
        {
            return Err(Error::Invalid(format!("non-finite entry at position {i}")));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(format!(
                "times not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Mean sampling interval `(t_N - t_1) / (N - 1)`.
    pub fn mean_dt(&self) -> f64 {
        (self.end() - self.start()) / (self.len() - 1) as f64
    }

    /// Same values, times moved by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t + offset).collect(),
            values: self.values.clone(),
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.times.clone(), values)
    }

    /// Observations with `start <= t < end`.
    pub fn slice(&self, start: f64, end: f64) -> (Vec<f64>, Vec<f64>) {
        let lo = self.times.partition_point(|&t| t < start);
        let hi = self.times.partition_point(|&t| t < end);
        (self.times[lo..hi].to_vec(), self.values[lo..hi].to_vec())
    }

    /// Observations with `start <= t <= end`.
    pub fn slice_inclusive(&self, start: f64, end: f64) -> (Vec<f64>, Vec<f64>) {
        let lo = self.times.partition_point(|&t| t < start);
        let hi = self.times.partition_point(|&t| t <= end);
        (self.times[lo..hi].to_vec(), self.values[lo..hi].to_vec())
    }

    /// Rescales values to zero mean and unit sample variance.
    pub fn normalize(&self) -> Result<Self> {
        let values = standardize(&self.values)?;
        Ok(Self {
            times: self.times.clone(),
            values,
        })
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub(crate) fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let m = mean(values);
    let var = variance(values);
    let scale = m.abs().max(1.0);
    if !(var > 1e-24 * scale * scale) {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    Ok(values.iter().map(|v| (v - m) / sd).collect())
}
