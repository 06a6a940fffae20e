//! Python bindings for the afterpulsing toolkit.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use spad_ap_core::cli::acquire;
use spad_ap_core::config::RunConfig;
use spad_ap_core::estimators::{self, TimeWindow};
use spad_ap_core::fitting::{self, Law};
use spad_ap_core::histio::{self, SweepHistogram};
use spad_ap_core::models::{self, Model, ModelParams};
use spad_ap_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn window(w: Option<(f64, f64)>) -> PyResult<TimeWindow> {
    match w {
        Some((a, b)) => TimeWindow::new(a, b).map_err(err),
        None => Ok(estimators::DEFAULT_DCR_WINDOW),
    }
}

/// Run configuration parsed from TOML.
#[pyclass(name = "Config", frozen)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        let inner = RunConfig::from_toml_str(toml).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = RunConfig::load(path).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn fingerprint(&self) -> String {
        format!("{:016x}", self.inner.fingerprint())
    }

    /// Start of the afterpulse sum, seconds.
    #[getter]
    fn tau_s(&self) -> f64 {
        self.inner.tau_s()
    }

    fn __repr__(&self) -> String {
        format!("Config(fingerprint={})", self.fingerprint())
    }
}

/// Time histogram of clicks following each trigger click.
#[pyclass(name = "Histogram", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHistogram {
    inner: SweepHistogram,
}

#[pymethods]
impl PyHistogram {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let inner = histio::read_histogram(path).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        let inner = histio::parse_histogram(text).map_err(err)?;
        Ok(Self { inner })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        histio::write_histogram(&self.inner, path).map_err(err)
    }

    fn to_csv(&self) -> PyResult<String> {
        histio::format_histogram(&self.inner).map_err(err)
    }

    #[getter]
    fn bins(&self) -> Vec<u64> {
        self.inner.bins().to_vec()
    }

    #[getter]
    fn c0(&self) -> u64 {
        self.inner.c0()
    }

    #[getter]
    fn total(&self) -> u64 {
        self.inner.total()
    }

    #[getter]
    fn bin_width_ns(&self) -> u64 {
        self.inner.bin_width_ns()
    }

    #[getter]
    fn sweep_ns(&self) -> u64 {
        self.inner.sweep_ns()
    }

    #[getter]
    fn meta(&self) -> BTreeMap<String, String> {
        self.inner.meta.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.bins().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Histogram(bins={}, bin_width_ns={}, c0={})",
            self.inner.bins().len(),
            self.inner.bin_width_ns(),
            self.inner.c0()
        )
    }
}

#[pyclass(name = "CustomEstimate", frozen, get_all)]
struct PyCustomEstimate {
    p_exp: f64,
    sigma: f64,
    c0: u64,
    c_ap: f64,
    c_dcr: f64,
    suspicious: bool,
}

impl From<estimators::CustomEstimate> for PyCustomEstimate {
    fn from(e: estimators::CustomEstimate) -> Self {
        Self {
            p_exp: e.p_exp,
            sigma: e.sigma,
            c0: e.c0,
            c_ap: e.c_ap,
            c_dcr: e.c_dcr,
            suspicious: e.suspicious,
        }
    }
}

#[pymethods]
impl PyCustomEstimate {
    fn __repr__(&self) -> String {
        format!(
            "CustomEstimate(p_exp={}, sigma={}, c0={})",
            self.p_exp, self.sigma, self.c0
        )
    }
}

#[pyclass(name = "Bundle", frozen, get_all)]
struct PyBundle {
    p_exp: f64,
    p_n: f64,
    p0: f64,
    p_s: f64,
    p1: f64,
    p2: f64,
    p_ap: f64,
}

#[pymethods]
impl PyBundle {
    fn __repr__(&self) -> String {
        format!(
            "Bundle(p_exp={}, p_s={}, p1={}, p2={}, p_ap={})",
            self.p_exp, self.p_s, self.p1, self.p2, self.p_ap
        )
    }
}

/// One simulated acquisition.
#[pyclass(name = "Run", frozen, get_all)]
struct PyRun {
    histogram: PyHistogram,
    clicks: usize,
    hidden_avalanches: u64,
    rate_hz: f64,
    tau_s: f64,
}

#[pyclass(name = "FitResult", frozen)]
struct PyFitResult {
    inner: fitting::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }

    #[getter]
    fn law(&self) -> String {
        self.inner.law.to_string()
    }

    #[getter]
    fn rss(&self) -> f64 {
        self.inner.rss
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    /// Fitted curve at `tau` seconds.
    fn __call__(&self, tau: f64) -> f64 {
        self.inner.eval(tau)
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult(law={}, a={}, b={}, c={}, rss={})",
            self.inner.law, self.inner.a, self.inner.b, self.inner.c, self.inner.rss
        )
    }
}

#[pymethods]
impl PyRun {
    /// Sweep-histogram estimate with the dark window in seconds.
    #[pyo3(signature = (window = None))]
    fn estimate(&self, window: Option<(f64, f64)>) -> PyResult<PyCustomEstimate> {
        estimate_custom(&self.histogram, self.tau_s, window)
    }

    fn __repr__(&self) -> String {
        format!(
            "Run(clicks={}, rate_hz={}, hidden_avalanches={})",
            self.clicks, self.rate_hz, self.hidden_avalanches
        )
    }
}

/// Simulate one acquisition and histogram it.
#[pyfunction]
#[pyo3(signature = (config = None, seed = None))]
fn simulate(py: Python<'_>, config: Option<&PyConfig>, seed: Option<u64>) -> PyResult<PyRun> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let mut sim = cfg.sim_config();
    if let Some(s) = seed {
        sim.seed = s;
    }
    let tau_s = cfg.tau_s();
    let acq = py
        .detach(|| acquire(&cfg, &sim, tau_s))
        .map_err(err)?;
    Ok(PyRun {
        clicks: acq.trace.clicks(),
        hidden_avalanches: acq.trace.hidden_avalanches,
        rate_hz: acq.trace.rate(),
        tau_s,
        histogram: PyHistogram {
            inner: acq.histogram,
        },
    })
}

/// `p_exp = C_ap / C₀` from a sweep histogram. Times in seconds.
#[pyfunction]
#[pyo3(signature = (histogram, tau_s, window = None))]
fn estimate_custom(
    histogram: &PyHistogram,
    tau_s: f64,
    window: Option<(f64, f64)>,
) -> PyResult<PyCustomEstimate> {
    let w = self::window(window)?;
    estimators::estimate_custom(&histogram.inner, tau_s, w)
        .map(Into::into)
        .map_err(err)
}

/// Convert `p_exp` with the count rate (Hz) and dead time (s).
#[pyfunction]
fn derive_all(p_exp: f64, rate: f64, tau_s: f64) -> PyResult<PyBundle> {
    let b = estimators::derive_all(p_exp, rate, tau_s).map_err(err)?;
    Ok(PyBundle {
        p_exp: b.p_exp,
        p_n: b.p_n,
        p0: b.p0,
        p_s: b.p_s,
        p1: b.p1,
        p2: b.p2,
        p_ap: b.p_ap,
    })
}

#[pyfunction]
fn simple_forward(p0: f64, p_s: f64) -> PyResult<f64> {
    models::simple_forward(p0, p_s).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (p0, p_ap, order_max = 20))]
fn first_order_forward(p0: f64, p_ap: f64, order_max: usize) -> PyResult<f64> {
    let params = ModelParams::new(p_ap, order_max).map_err(err)?;
    models::first_order_forward(p0, &params)
        .map(|v| v.value)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (p0, p_ap, order_max = 20))]
fn second_order_forward(p0: f64, p_ap: f64, order_max: usize) -> PyResult<f64> {
    let params = ModelParams::new(p_ap, order_max).map_err(err)?;
    models::second_order_forward(p0, &params).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (p0, p_ap, order_max = 20))]
fn exact_forward(p0: f64, p_ap: f64, order_max: usize) -> PyResult<f64> {
    let params = ModelParams::new(p_ap, order_max).map_err(err)?;
    models::exact_forward(p0, &params).map_err(err)
}

#[pyfunction]
fn invert_simple(p_exp: f64, p0: f64) -> PyResult<f64> {
    models::invert_simple(p_exp, p0).map_err(err)
}

#[pyfunction]
fn invert_first(p_exp: f64) -> PyResult<f64> {
    models::invert_first(p_exp).map_err(err)
}

#[pyfunction]
fn invert_second(p_exp: f64, p0: f64) -> PyResult<f64> {
    models::invert_second(p_exp, p0).map_err(err)
}

/// `P₀` from an observed click probability under `model`
/// (`"simple"`, `"first"` or `"second"`).
#[pyfunction]
fn p0_from_observed(p_total: f64, model: &str, p_ap: f64) -> PyResult<f64> {
    let model: Model = model.parse().map_err(err)?;
    models::p0_from_observed(p_total, model, p_ap).map_err(err)
}

/// Fit `a·τ^b + c` or `a·e^(−b·τ) + c`; `xs` in seconds, parameters per µs.
#[pyfunction]
#[pyo3(signature = (xs, ys, law = "exponential", sigmas = None))]
fn fit_curve(
    xs: Vec<f64>,
    ys: Vec<f64>,
    law: &str,
    sigmas: Option<Vec<f64>>,
) -> PyResult<PyFitResult> {
    let law: Law = law.parse().map_err(err)?;
    let inner = match sigmas {
        Some(w) => fitting::fit_curve_weighted(&xs, &ys, &w, law),
        None => fitting::fit_curve(&xs, &ys, law),
    }
    .map_err(err)?;
    Ok(PyFitResult { inner })
}

#[pymodule]
fn spad_ap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyHistogram>()?;
    m.add_class::<PyRun>()?;
    m.add_class::<PyCustomEstimate>()?;
    m.add_class::<PyBundle>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_custom, m)?)?;
    m.add_function(wrap_pyfunction!(derive_all, m)?)?;
    m.add_function(wrap_pyfunction!(simple_forward, m)?)?;
    m.add_function(wrap_pyfunction!(first_order_forward, m)?)?;
    m.add_function(wrap_pyfunction!(second_order_forward, m)?)?;
    m.add_function(wrap_pyfunction!(exact_forward, m)?)?;
    m.add_function(wrap_pyfunction!(invert_simple, m)?)?;
    m.add_function(wrap_pyfunction!(invert_first, m)?)?;
    m.add_function(wrap_pyfunction!(invert_second, m)?)?;
    m.add_function(wrap_pyfunction!(p0_from_observed, m)?)?;
    m.add_function(wrap_pyfunction!(fit_curve, m)?)?;
    Ok(())
}
