//! Python bindings: `import paleocorr`.

use paleocorr::alignment::{self, AlignmentSpec};
use paleocorr::bayes::{self, InferenceConfig, PosteriorSample};
use paleocorr::chronology::{self, CalibrationCurve, RadiocarbonDate};
use paleocorr::experiments::{self, ForwardModel, ScenarioKind};
use paleocorr::pseudoproxy::PseudoproxyParams;
use paleocorr::TimeSeries;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: paleocorr::Error) -> PyErr {
    PyValueError::new_err(format!("{} ({})", e, e.reason()))
}

fn spec(method: &str) -> PyResult<AlignmentSpec> {
    method.parse().map_err(err)
}

fn series(times: Vec<f64>, values: Vec<f64>) -> PyResult<TimeSeries> {
    TimeSeries::new(times, values).map_err(err)
}

fn inference(seed: u64, n_steps: usize, n_keep: usize) -> PyResult<InferenceConfig> {
    let cfg = InferenceConfig {
        seed,
        n_steps,
        n_keep,
        ..InferenceConfig::default()
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Posterior draws of the correlation coefficient.
#[pyclass(name = "Posterior", frozen)]
struct Posterior {
    inner: PosteriorSample,
}

#[pymethods]
impl Posterior {
    #[new]
    fn new(draws: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: PosteriorSample::new(draws).map_err(err)?,
        })
    }

    #[getter]
    fn draws(&self) -> Vec<f64> {
        self.inner.rho_draws.clone()
    }

    #[getter]
    fn mode(&self) -> f64 {
        self.inner.mode()
    }

    #[getter]
    fn idr(&self) -> f64 {
        self.inner.idr()
    }

    #[getter]
    fn fraction_positive(&self) -> f64 {
        self.inner.fraction_positive()
    }

    #[pyo3(signature = (alpha = bayes::DEFAULT_ALPHA))]
    fn sign(&self, alpha: f64) -> String {
        self.inner.sign(alpha).to_string()
    }

    /// `(q5, median, q95)`.
    fn quantiles(&self) -> (f64, f64, f64) {
        let s = self.inner.summary(bayes::DEFAULT_ALPHA);
        (s.q5, s.median, s.q95)
    }

    #[getter]
    fn warning(&self) -> bool {
        self.inner.has_warning()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Posterior(n={}, mode={:.3}, idr={:.3}, sign={})",
            self.inner.len(),
            self.inner.mode(),
            self.inner.idr(),
            self.inner.sign(bayes::DEFAULT_ALPHA)
        )
    }
}

/// Pairs two irregular series; returns `(times, x, y)`.
#[pyfunction]
#[pyo3(signature = (x_times, x_values, y_times, y_values, method = "G(0.5)"))]
fn align(
    x_times: Vec<f64>,
    x_values: Vec<f64>,
    y_times: Vec<f64>,
    y_values: Vec<f64>,
    method: &str,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let p = alignment::align(&series(x_times, x_values)?, &series(y_times, y_values)?, &spec(method)?).map_err(err)?;
    Ok((p.times, p.x, p.y))
}

/// Normalizes, aligns and samples the correlation posterior.
#[pyfunction]
#[pyo3(signature = (x_times, x_values, y_times, y_values, method = "G(0.5)", seed = 0, n_steps = 30_000, n_keep = 1000))]
#[allow(clippy::too_many_arguments)]
fn correlate(
    py: Python<'_>,
    x_times: Vec<f64>,
    x_values: Vec<f64>,
    y_times: Vec<f64>,
    y_values: Vec<f64>,
    method: &str,
    seed: u64,
    n_steps: usize,
    n_keep: usize,
) -> PyResult<Posterior> {
    let x = series(x_times, x_values)?;
    let y = series(y_times, y_values)?;
    let spec = spec(method)?;
    let cfg = inference(seed, n_steps, n_keep)?;
    let data = experiments::ScenarioData { members: vec![(x, y)] };
    let (inner, _) = py
        .detach(|| experiments::analyse(&data, &spec, &cfg))
        .map_err(err)?;
    Ok(Posterior { inner })
}

/// Samples the posterior of already paired observations.
#[pyfunction]
#[pyo3(signature = (x, y, seed = 0, n_steps = 30_000, n_keep = 1000))]
fn metropolis(py: Python<'_>, x: Vec<f64>, y: Vec<f64>, seed: u64, n_steps: usize, n_keep: usize) -> PyResult<Posterior> {
    let pairs = alignment::AlignedPairs::new(x, y).map_err(err)?;
    let cfg = inference(seed, n_steps, n_keep)?;
    let inner = py.detach(|| bayes::metropolis(&pairs, &cfg)).map_err(err)?;
    Ok(Posterior { inner })
}

/// Best lag by which `y` trails `x`, and `(lag, mode)` for every lag that
/// left enough overlap.
#[pyfunction]
#[pyo3(signature = (x_times, x_values, y_times, y_values, lags, method = "G(0.5)", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn lag_scan(
    py: Python<'_>,
    x_times: Vec<f64>,
    x_values: Vec<f64>,
    y_times: Vec<f64>,
    y_values: Vec<f64>,
    lags: Vec<f64>,
    method: &str,
    seed: u64,
) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let x = series(x_times, x_values)?;
    let y = series(y_times, y_values)?;
    let spec = spec(method)?;
    let cfg = InferenceConfig {
        seed,
        ..InferenceConfig::default()
    };
    let scan = py.detach(|| alignment::lag_scan(&x, &y, &lags, &spec, &cfg)).map_err(err)?;
    let points = scan
        .points
        .iter()
        .filter_map(|p| p.summary.as_ref().map(|s| (p.lag, s.mode)))
        .collect();
    Ok((scan.best_lag, points))
}

/// Calibrated calendar-age distribution `(ages, probabilities)` of one date
/// on the built-in toy curve.
#[pyfunction]
#[pyo3(signature = (c14_age, c14_sigma, grid_step = 5.0))]
fn calibrate(c14_age: f64, c14_sigma: f64, grid_step: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let date = RadiocarbonDate::new(0.0, c14_age, c14_sigma).map_err(err)?;
    let cal = chronology::calibrate_date(&date, &CalibrationCurve::toy_marine(), grid_step).map_err(err)?;
    Ok((cal.ages, cal.probs))
}

/// One simulated pseudoproxy pair as seen by a scenario: a list of
/// `((x_times, x_values), (y_times, y_values))` members.
#[pyfunction]
#[pyo3(signature = (scenario, n_obs = 200, coupling = 0.6, drag = 0.2, sed_mean = 0.35, sed_skew = 1.5, seed = 0, n_ens = 10))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn simulate(
    py: Python<'_>,
    scenario: &str,
    n_obs: usize,
    coupling: f64,
    drag: f64,
    sed_mean: f64,
    sed_skew: f64,
    seed: u64,
    n_ens: usize,
) -> PyResult<Vec<((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>))>> {
    let kind: ScenarioKind = scenario.parse().map_err(err)?;
    let params = PseudoproxyParams {
        n_obs,
        coupling,
        drag,
        sed_mean,
        sed_skew,
        seed,
    };
    let pair = py
        .detach(|| experiments::simulate_pair(&params, &ForwardModel::default(), &CalibrationCurve::toy_marine(), n_ens))
        .map_err(err)?;
    let data = pair.scenario(kind).map_err(err)?;
    Ok(data
        .members
        .iter()
        .map(|(x, y)| ((x.times().to_vec(), x.values().to_vec()), (y.times().to_vec(), y.values().to_vec())))
        .collect())
}

#[pymodule]
#[pyo3(name = "paleocorr")]
fn paleocorr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Posterior>()?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(correlate, m)?)?;
    m.add_function(wrap_pyfunction!(metropolis, m)?)?;
    m.add_function(wrap_pyfunction!(lag_scan, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("METHODS", ["LI", "G(0.5)", "G(2)", "NV", "S(1)", "S(2)"])?;
    Ok(())
}
