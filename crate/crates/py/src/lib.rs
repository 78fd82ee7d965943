//! Python bindings: `import elrdd`.

use std::collections::HashMap;

use elrdd_core::inference::lr_at as core_lr_at;
use elrdd_core::{
    analyze as core_analyze, montecarlo, AnalysisConfig, BandwidthMode, CoverageReport, DesignKind, DesignSpec,
    DgpKind, DgpSpec, InferenceResult, Kernel, Sample, SolverConfig, StudyConfig,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: elrdd_core::Error) -> PyErr {
    if e.is_input() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = elrdd_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyclass(name = "Sample", module = "elrdd", skip_from_py_object)]
#[derive(Clone)]
pub struct PySample {
    inner: Sample,
}

#[pymethods]
impl PySample {
    #[new]
    #[pyo3(signature = (x, cutoff = 0.0, columns = None))]
    fn new(x: Vec<f64>, cutoff: f64, columns: Option<HashMap<String, Vec<f64>>>) -> PyResult<Self> {
        let mut inner = Sample::new(x, cutoff).map_err(to_py)?;
        for (name, values) in columns.unwrap_or_default() {
            inner = inner.with_column(&name, values).map_err(to_py)?;
        }
        Ok(PySample { inner })
    }

    /// New sample with one more column.
    fn with_column(&self, name: &str, values: Vec<f64>) -> PyResult<Self> {
        Ok(PySample { inner: self.inner.clone().with_column(name, values).map_err(to_py)? })
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.column(name).map_err(to_py)?.to_vec())
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x.clone()
    }

    #[getter]
    fn cutoff(&self) -> f64 {
        self.inner.cutoff
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.keys().cloned().collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Sample(n={}, cutoff={}, columns={:?})", self.inner.n(), self.inner.cutoff, self.columns())
    }
}

#[pyclass(name = "Design", module = "elrdd", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDesign {
    inner: DesignSpec,
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[pymethods]
impl PyDesign {
    /// Generic constructor; `kind` is a design name such as "sharp" or "fuzzy_cov".
    #[new]
    #[pyo3(signature = (kind, y = None, d = None, z = None))]
    fn new(kind: &str, y: Option<Vec<String>>, d: Option<String>, z: Option<Vec<String>>) -> PyResult<Self> {
        let kind: DesignKind = parse(kind)?;
        let (y, z) = (y.unwrap_or_default(), z.unwrap_or_default());
        Ok(PyDesign { inner: DesignSpec::new(kind, &strs(&y), d.as_deref(), &strs(&z)) })
    }

    #[staticmethod]
    fn sharp(y: &str) -> Self {
        PyDesign { inner: DesignSpec::sharp(y) }
    }

    #[staticmethod]
    fn fuzzy(y: &str, d: &str) -> Self {
        PyDesign { inner: DesignSpec::fuzzy(y, d) }
    }

    #[staticmethod]
    fn sharp_cov(y: &str, z: Vec<String>) -> Self {
        PyDesign { inner: DesignSpec::sharp_cov(y, &strs(&z)) }
    }

    #[staticmethod]
    fn fuzzy_cov(y: &str, d: &str, z: Vec<String>) -> Self {
        PyDesign { inner: DesignSpec::fuzzy_cov(y, d, &strs(&z)) }
    }

    #[staticmethod]
    fn multi_outcome(y: Vec<String>) -> Self {
        PyDesign { inner: DesignSpec::multi_outcome(&strs(&y)) }
    }

    #[staticmethod]
    fn categorical_sharp(y: Vec<String>) -> Self {
        PyDesign { inner: DesignSpec::categorical_sharp(&strs(&y)) }
    }

    #[staticmethod]
    fn categorical_fuzzy(y: Vec<String>, d: &str) -> Self {
        PyDesign { inner: DesignSpec::categorical_fuzzy(&strs(&y), d) }
    }

    #[staticmethod]
    fn balance(z: Vec<String>) -> Self {
        PyDesign { inner: DesignSpec::balance(&strs(&z)) }
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn d_rho(&self) -> usize {
        self.inner.d_rho()
    }

    fn __repr__(&self) -> String {
        format!("Design(kind='{}', targets={:?})", self.inner.kind, self.inner.target_columns())
    }
}

#[pyclass(name = "AnalysisResult", module = "elrdd", skip_from_py_object)]
pub struct PyAnalysis {
    inner: InferenceResult,
}

#[pymethods]
impl PyAnalysis {
    #[getter]
    fn point_estimate(&self) -> Vec<f64> {
        self.inner.point_estimate.clone()
    }

    #[getter]
    fn statistic(&self) -> f64 {
        self.inner.statistic
    }

    #[getter]
    fn p_value(&self) -> f64 {
        self.inner.p_value
    }

    #[getter]
    fn lr_at_null(&self) -> f64 {
        self.inner.lr_at_null
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.plan.h
    }

    #[getter]
    fn h_star(&self) -> f64 {
        self.inner.plan.h_star
    }

    #[getter]
    fn bartlett_factor(&self) -> f64 {
        self.inner.plan.bartlett_factor
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// (level, bartlett, lo, hi) for every computed interval.
    #[getter]
    fn intervals(&self) -> Vec<(f64, bool, f64, f64)> {
        self.inner.intervals.iter().map(|c| (c.level, c.bartlett, c.lo, c.hi)).collect()
    }

    #[pyo3(signature = (level, bartlett = true))]
    fn interval(&self, level: f64, bartlett: bool) -> Option<(f64, f64)> {
        self.inner.interval(level, bartlett).map(|c| (c.lo, c.hi))
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "AnalysisResult(design='{}', estimate={:?}, p_value={:.4}, h={:.4})",
            self.inner.design, self.inner.point_estimate, self.inner.p_value, self.inner.plan.h
        )
    }
}

#[pyclass(name = "CoverageReport", module = "elrdd", skip_from_py_object)]
pub struct PyCoverage {
    inner: CoverageReport,
}

#[pymethods]
impl PyCoverage {
    #[getter]
    fn truth(&self) -> Vec<f64> {
        self.inner.truth.clone()
    }

    #[getter]
    fn failures(&self) -> usize {
        self.inner.failures
    }

    /// (label, level, coverage, se) per row.
    #[getter]
    fn rows(&self) -> Vec<(String, f64, f64, f64)> {
        self.inner.rows.iter().map(|r| (r.label.clone(), r.level, r.coverage, r.se)).collect()
    }

    #[pyo3(signature = (level, bartlett = true, mode = "estimated"))]
    fn coverage(&self, level: f64, bartlett: bool, mode: &str) -> PyResult<Option<f64>> {
        let mode: BandwidthMode = parse(mode)?;
        Ok(self.inner.row(mode, bartlett, level).map(|r| r.coverage))
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn to_json(&self) -> PyResult<String> {
        json(&self.inner)
    }
}

#[pyfunction]
#[pyo3(signature = (sample, design, levels = vec![0.90, 0.95, 0.99], bartlett = true, h = None, h_multipliers = None, null = None, kernel = "triangular", intervals = true))]
#[allow(clippy::too_many_arguments)]
fn analyze(
    py: Python<'_>,
    sample: &PySample,
    design: &PyDesign,
    levels: Vec<f64>,
    bartlett: bool,
    h: Option<f64>,
    h_multipliers: Option<Vec<f64>>,
    null: Option<Vec<f64>>,
    kernel: &str,
    intervals: bool,
) -> PyResult<PyAnalysis> {
    let config = AnalysisConfig {
        kernel: parse(kernel)?,
        levels,
        bartlett,
        bandwidth: h,
        h_multipliers: h_multipliers.unwrap_or_default(),
        null,
        intervals,
        ..AnalysisConfig::default()
    };
    let (s, d) = (&sample.inner, &design.inner);
    let inner = py.detach(|| core_analyze(s, d, &config)).map_err(to_py)?;
    Ok(PyAnalysis { inner })
}

/// Profile LR statistic at `tau` for a fixed bandwidth.
#[pyfunction]
#[pyo3(signature = (sample, design, h, tau, kernel = "triangular"))]
fn lr_at(py: Python<'_>, sample: &PySample, design: &PyDesign, h: f64, tau: Vec<f64>, kernel: &str) -> PyResult<f64> {
    let kernel: Kernel = parse(kernel)?;
    let (s, d) = (&sample.inner, &design.inner);
    py.detach(|| core_lr_at(s, d, h, &tau, kernel, &SolverConfig::default())).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (kernel = "triangular"))]
fn kernel_constants<'py>(py: Python<'py>, kernel: &str) -> PyResult<Bound<'py, PyDict>> {
    let k = parse::<Kernel>(kernel)?.constants();
    let d = PyDict::new(py);
    d.set_item("kernel", k.kernel.name())?;
    d.set_item("varpi", k.varpi)?;
    for (j, g) in k.gamma.iter().enumerate() {
        d.set_item(format!("gamma{}", j + 2), g)?;
    }
    d.set_item("m_plus", k.m_plus.clone())?;
    d.set_item("m_minus", k.m_minus.clone())?;
    d.set_item("int_k2", k.int_k2)?;
    d.set_item("int_ku2", k.int_ku2)?;
    d.set_item("int_dk2", k.int_dk2)?;
    Ok(d)
}

/// One draw from a built-in design such as "sharp_model1" or "multi_outcome:3".
#[pyfunction]
#[pyo3(signature = (dgp, n, seed = 1, rep = 0))]
fn generate(dgp: &str, n: usize, seed: u64, rep: u64) -> PyResult<PySample> {
    let spec = DgpSpec::new(parse(dgp)?, n, seed).map_err(to_py)?;
    Ok(PySample { inner: spec.draw(rep).map_err(to_py)? })
}

#[pyfunction]
fn dgp_truth(dgp: &str) -> PyResult<Vec<f64>> {
    let kind: DgpKind = parse(dgp)?;
    Ok(DgpSpec::new(kind, 1000, 0).map_err(to_py)?.truth)
}

#[pyfunction]
#[pyo3(signature = (dgp, n, reps = 2000, seed = 1, levels = vec![0.90, 0.95, 0.99], modes = vec!["true".to_string(), "estimated".to_string()], kernel = "triangular", intervals = true, threads = None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    dgp: &str,
    n: usize,
    reps: usize,
    seed: u64,
    levels: Vec<f64>,
    modes: Vec<String>,
    kernel: &str,
    intervals: bool,
    threads: Option<usize>,
) -> PyResult<PyCoverage> {
    let spec = DgpSpec::new(parse(dgp)?, n, seed).map_err(to_py)?;
    let modes = modes.iter().map(|m| parse(m)).collect::<PyResult<Vec<BandwidthMode>>>()?;
    let config = StudyConfig { replications: reps, levels, modes, kernel: parse(kernel)?, intervals, threads };
    let inner = py.detach(|| montecarlo::run_coverage_study(&spec, &config)).map_err(to_py)?;
    Ok(PyCoverage { inner })
}

#[pymodule]
fn elrdd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_class::<PyCoverage>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_constants, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(dgp_truth, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyModule;

    fn with_module<F: FnOnce(&Bound<'_, PyModule>)>(f: F) {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "elrdd").unwrap();
            elrdd(&m).unwrap();
            f(&m);
        });
    }

    #[test]
    fn constants_through_python() {
        with_module(|m| {
            let d = m.getattr("kernel_constants").unwrap().call0().unwrap();
            let varpi: f64 = d.get_item("varpi").unwrap().extract().unwrap();
            let gamma2: f64 = d.get_item("gamma2").unwrap().extract().unwrap();
            assert!((varpi + 0.1).abs() < 1e-10);
            assert!((gamma2 - 4.8).abs() < 1e-10);
        });
    }

    #[test]
    fn errors_become_python_exceptions() {
        with_module(|m| {
            let py = m.py();
            let err = m.getattr("kernel_constants").unwrap().call1(("gaussian",)).unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(py));
            let err = m.getattr("generate").unwrap().call1(("sharp_model1", 10)).unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(py));
        });
    }

    #[test]
    fn analyze_round_trip() {
        with_module(|m| {
            let sample = m.getattr("generate").unwrap().call1(("sharp_model1", 2000, 3)).unwrap();
            let design = m.getattr("Design").unwrap().getattr("sharp").unwrap().call1(("y",)).unwrap();
            let r = m.getattr("analyze").unwrap().call1((sample, design)).unwrap();
            let est: Vec<f64> = r.getattr("point_estimate").unwrap().extract().unwrap();
            assert!((est[0] - 0.04).abs() < 0.3);
            let ci: Option<(f64, f64)> = r.call_method1("interval", (0.95,)).unwrap().extract().unwrap();
            let (lo, hi) = ci.unwrap();
            assert!(lo <= est[0] && est[0] <= hi);
        });
    }
}
