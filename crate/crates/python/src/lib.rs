//! Python bindings for `censored_spmle`.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use censored_spmle as core;
use censored_spmle::elratio;
use censored_spmle::gof;
use censored_spmle::spmle::SolveOptions;

create_exception!(pyspmle, SpmleError, PyException);

fn err(e: core::Error) -> PyErr {
    SpmleError::new_err(format!("{}: {}", e.name(), e))
}

fn scheme(tag: &str) -> PyResult<core::SampleScheme> {
    tag.parse().map_err(err)
}

fn options(tol: f64, npmle_tol: f64, max_iter: usize) -> core::SpmleOptions {
    core::SpmleOptions {
        npmle: core::NpmleOptions { tol: npmle_tol, max_iter },
        solve: SolveOptions { tol, ..SolveOptions::default() },
    }
}

/// One censored observation `(lower, upper]`; exact values have
/// `lower == upper`.
#[pyclass(frozen, skip_from_py_object, name = "Observation")]
#[derive(Clone)]
struct PyObservation(core::Observation);

#[pymethods]
impl PyObservation {
    #[staticmethod]
    fn exact(x: f64) -> PyResult<Self> {
        core::Observation::exact(x).map(Self).map_err(err)
    }
    #[staticmethod]
    fn right(c: f64) -> PyResult<Self> {
        core::Observation::right(c).map(Self).map_err(err)
    }
    #[staticmethod]
    fn left(c: f64) -> PyResult<Self> {
        core::Observation::left(c).map(Self).map_err(err)
    }
    #[staticmethod]
    fn interval(lower: f64, upper: f64) -> PyResult<Self> {
        core::Observation::interval(lower, upper).map(Self).map_err(err)
    }
    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind().csv_tag()
    }
    #[getter]
    fn lower(&self) -> f64 {
        self.0.lower()
    }
    #[getter]
    fn upper(&self) -> f64 {
        self.0.upper()
    }
    fn __repr__(&self) -> String {
        format!("Observation({}, {}, {})", self.kind(), self.0.lower(), self.0.upper())
    }
}

fn unwrap_obs(sample: Vec<PyRef<'_, PyObservation>>) -> Vec<core::Observation> {
    sample.iter().map(|o| o.0).collect()
}

/// Discrete distribution; a mass at `inf` represents unassigned tail mass.
#[pyclass(frozen, skip_from_py_object, name = "DiscreteDistribution")]
#[derive(Clone)]
struct PyDistribution(core::DiscreteDistribution);

#[pymethods]
impl PyDistribution {
    #[new]
    fn new(support: Vec<f64>, masses: Vec<f64>) -> PyResult<Self> {
        core::DiscreteDistribution::new(support, masses).map(Self).map_err(err)
    }
    #[getter]
    fn support(&self) -> Vec<f64> {
        self.0.support().to_vec()
    }
    #[getter]
    fn masses(&self) -> Vec<f64> {
        self.0.masses().to_vec()
    }
    #[getter]
    fn tail_mass(&self) -> f64 {
        self.0.tail_mass()
    }
    fn cdf(&self, t: f64) -> f64 {
        self.0.cdf(t)
    }
    fn __len__(&self) -> usize {
        self.0.len()
    }
    fn __repr__(&self) -> String {
        format!("DiscreteDistribution(atoms={}, tail_mass={})", self.0.len(), self.0.tail_mass())
    }
}

/// `logistic` or `biased:w=identity|const|table:<file>`.
#[pyclass(frozen, skip_from_py_object, name = "BiasModel")]
#[derive(Clone)]
struct PyBiasModel(core::BiasModel);

#[pymethods]
impl PyBiasModel {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        spec.parse().map(Self).map_err(err)
    }
    #[staticmethod]
    fn logistic() -> Self {
        Self(core::BiasModel::logistic())
    }
    #[staticmethod]
    fn length_biased() -> Self {
        Self(core::BiasModel::length_biased())
    }
    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn __repr__(&self) -> String {
        format!("BiasModel('{}')", self.0.spec_string())
    }
}

#[pyclass(frozen, name = "TwoSampleData")]
struct PyTwoSampleData(core::TwoSampleData);

#[pymethods]
impl PyTwoSampleData {
    #[new]
    fn new(
        x: Vec<PyRef<'_, PyObservation>>,
        scheme_x: &str,
        y: Vec<PyRef<'_, PyObservation>>,
        scheme_y: &str,
    ) -> PyResult<Self> {
        core::TwoSampleData::new(unwrap_obs(x), scheme(scheme_x)?, unwrap_obs(y), scheme(scheme_y)?)
            .map(Self)
            .map_err(err)
    }
    /// Reads both samples from `kind,value[,upper]` CSV files.
    #[staticmethod]
    fn from_csv(x: &str, scheme_x: &str, y: &str, scheme_y: &str) -> PyResult<Self> {
        let (sx, sy) = (scheme(scheme_x)?, scheme(scheme_y)?);
        let xs = core::data::ingest_csv(x, sx).map_err(err)?;
        let ys = core::data::ingest_csv(y, sy).map_err(err)?;
        core::TwoSampleData::new(xs, sx, ys, sy).map(Self).map_err(err)
    }
    #[getter]
    fn n0(&self) -> usize {
        self.0.n0()
    }
    #[getter]
    fn n1(&self) -> usize {
        self.0.n1()
    }
}

#[pyclass(frozen, name = "TwoSampleFit")]
struct PyTwoSampleFit {
    inner: core::spmle::TwoSampleFit,
}

#[pymethods]
impl PyTwoSampleFit {
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.fit.theta.clone()
    }
    #[getter]
    fn converged(&self) -> bool {
        self.inner.fit.converged
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.inner.fit.iterations
    }
    #[getter]
    fn f_tilde(&self) -> PyDistribution {
        PyDistribution(self.inner.fit.f_tilde.clone())
    }
    #[getter]
    fn fhat(&self) -> PyDistribution {
        PyDistribution(self.inner.fhat.distribution.clone())
    }
    #[getter]
    fn ghat(&self) -> PyDistribution {
        PyDistribution(self.inner.ghat.distribution.clone())
    }
    #[getter]
    fn sigma1_hat(&self) -> Vec<Vec<f64>> {
        self.inner.fit.sigma1_hat.clone()
    }
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| SpmleError::new_err(e.to_string()))
    }
}

/// NPMLE of one censored sample.
#[pyfunction]
#[pyo3(signature = (sample, scheme_tag, tol = 1e-8, max_iter = 10_000))]
fn npmle(sample: Vec<PyRef<'_, PyObservation>>, scheme_tag: &str, tol: f64, max_iter: usize) -> PyResult<PyDistribution> {
    let opts = core::NpmleOptions { tol, max_iter };
    core::npmle::npmle(&unwrap_obs(sample), scheme(scheme_tag)?, &opts)
        .map(|f| PyDistribution(f.distribution))
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, model, tol = 1e-10, npmle_tol = 1e-8, max_iter = 10_000))]
fn fit_two_sample(
    py: Python<'_>,
    data: &PyTwoSampleData,
    model: &PyBiasModel,
    tol: f64,
    npmle_tol: f64,
    max_iter: usize,
) -> PyResult<PyTwoSampleFit> {
    let opts = options(tol, npmle_tol, max_iter);
    py.detach(|| core::fit_two_sample(&data.0, &model.0, &opts))
        .map(|inner| PyTwoSampleFit { inner })
        .map_err(err)
}

/// Log empirical likelihood ratio at `theta0`; returns `(log_r, stat)`.
#[pyfunction]
fn log_ratio(fit: &PyTwoSampleFit, model: &PyBiasModel, theta0: f64) -> PyResult<(f64, f64)> {
    let r = elratio::log_ratio(&fit.inner.pooled, &model.0, fit.inner.fit.theta[0], theta0).map_err(err)?;
    Ok((r.log_r, r.stat))
}

/// Bootstrap-calibrated interval for `w0 = 1/θ0`; returns
/// `(lower, upper, c0_hat)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (data, model, seed, b = 999, level = 0.95, tol = 1e-10, npmle_tol = 1e-8))]
fn ci_w0(
    py: Python<'_>,
    data: &PyTwoSampleData,
    model: &PyBiasModel,
    seed: u64,
    b: usize,
    level: f64,
    tol: f64,
    npmle_tol: f64,
) -> PyResult<(f64, f64, f64)> {
    let opts = options(tol, npmle_tol, 10_000);
    py.detach(|| {
        let fit = core::fit_two_sample(&data.0, &model.0, &opts)?;
        let theta = fit.fit.theta[0];
        let c0 = elratio::estimate_c0(&data.0, &model.0, theta, &opts, b, seed)?;
        let ci = elratio::ci_w0(&fit.pooled, &model.0, theta, level, c0.c0_hat)?;
        Ok((ci.lower, ci.upper, c0.c0_hat))
    })
    .map_err(err)
}

/// Bootstrap goodness-of-fit test; returns `(t_n, p_value)`.
#[pyfunction]
#[pyo3(signature = (data, model, seed, b = 999, tol = 1e-10, npmle_tol = 1e-8))]
fn gof_test(
    py: Python<'_>,
    data: &PyTwoSampleData,
    model: &PyBiasModel,
    seed: u64,
    b: usize,
    tol: f64,
    npmle_tol: f64,
) -> PyResult<(f64, f64)> {
    let opts = options(tol, npmle_tol, 10_000);
    py.detach(|| gof::bootstrap_pvalue(&data.0, &model.0, b, seed, &opts))
        .map(|r| (r.t_n, r.p_value))
        .map_err(err)
}

#[pymodule]
fn pyspmle(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds the classes and functions of the extension to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SpmleError", m.py().get_type::<SpmleError>())?;
    m.add_class::<PyObservation>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyBiasModel>()?;
    m.add_class::<PyTwoSampleData>()?;
    m.add_class::<PyTwoSampleFit>()?;
    m.add_function(wrap_pyfunction!(npmle, m)?)?;
    m.add_function(wrap_pyfunction!(fit_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(log_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(ci_w0, m)?)?;
    m.add_function(wrap_pyfunction!(gof_test, m)?)?;
    Ok(())
}
