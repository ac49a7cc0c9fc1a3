//! Python bindings for the `hardy_factor` core library.
//!
//! Structured results (reports, constants, norm estimates) come back as plain
//! Python dicts; operators, families and factorizations are wrapped classes
//! that also round-trip through JSON.

use hardy_factor::operators::norm_estimate_with;
use hardy_factor::randomization::MomentContext;
use hardy_factor::{
    check_capon, check_jones, CollectionFamily, DyadicInterval, ExponentPair, FactorizationArtifacts,
    FactorizationParams, HardyElement, OperatorMatrix, RandomVariable, RvIndex, SpaceDescriptor, Structure,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(hardy_factor_py, HardyFactorError, PyException);

fn err(e: hardy_factor::Error) -> PyErr {
    HardyFactorError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn exponents(p: f64, q: f64) -> PyResult<ExponentPair> {
    ExponentPair::new(p, q).map_err(err)
}

fn interval(s: &str) -> PyResult<DyadicInterval> {
    s.parse().map_err(err)
}

/// A linear operator on `V_N`, stored by its Gram matrix in the Haar basis.
#[pyclass(name = "Operator", module = "hardy_factor_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyOperator {
    inner: OperatorMatrix,
}

#[pymethods]
impl PyOperator {
    #[staticmethod]
    #[pyo3(signature = (resolution, c = 1.0, p = 2.0, q = 2.0))]
    fn scaled_identity(resolution: u32, c: f64, p: f64, q: f64) -> PyResult<Self> {
        let max = hardy_factor::dyadic::max_resolution();
        if resolution > max {
            return Err(err(hardy_factor::Error::ResolutionExceeded { level: resolution, max }));
        }
        let space = SpaceDescriptor::primal(resolution, exponents(p, q)?);
        Ok(Self { inner: OperatorMatrix::scaled_identity(space, c) })
    }

    /// `structure` is one of `diagonal`, `diagonal-plus-noise`, `permuted-blocks`.
    #[staticmethod]
    #[pyo3(signature = (resolution, delta, gamma, structure = "diagonal", seed = 0, p = 2.0, q = 2.0))]
    fn generate(resolution: u32, delta: f64, gamma: f64, structure: &str, seed: u64, p: f64, q: f64) -> PyResult<Self> {
        let structure: Structure = serde_json::from_value(serde_json::Value::String(structure.to_string()))
            .map_err(|_| PyValueError::new_err(format!("unknown structure {structure:?}")))?;
        let inner = hardy_factor::generate_test_operator(resolution, delta, gamma, exponents(p, q)?, structure, seed)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: OperatorMatrix::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn resolution(&self) -> u32 {
        self.inner.domain().resolution
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.domain().dim()
    }

    /// Rows `Q'`, columns `Q`: `⟨T h_Q, h_Q'⟩`.
    fn gram(&self) -> Vec<Vec<f64>> {
        let g = self.inner.gram();
        g.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn apply(&self, coefficients: Vec<f64>) -> PyResult<Vec<f64>> {
        let f = HardyElement::new(self.inner.domain().resolution, coefficients).map_err(err)?;
        Ok(self.inner.apply(&f).map_err(err)?.into_coefficients())
    }

    #[pyo3(signature = (p = 2.0, q = 2.0, samples = 64, seed = 0))]
    fn norm_estimate<'py>(&self, py: Python<'py>, p: f64, q: f64, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let sampling = hardy_factor::operators::NormSampling { samples, seed };
        to_py(py, &norm_estimate_with(&self.inner, exponents(p, q)?, sampling))
    }

    fn __repr__(&self) -> String {
        format!("Operator(resolution={}, dim={})", self.resolution(), self.dim())
    }
}

/// A family `I ↦ 𝒳_I` of collections of dyadic intervals.
#[pyclass(name = "Family", module = "hardy_factor_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFamily {
    inner: CollectionFamily,
}

#[pymethods]
impl PyFamily {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: CollectionFamily::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn domain_resolution(&self) -> u32 {
        self.inner.domain_resolution()
    }

    #[getter]
    fn target_resolution(&self) -> u32 {
        self.inner.target_resolution()
    }

    fn lift(&self, target: u32) -> PyResult<Self> {
        Ok(Self { inner: self.inner.clone().lift(target).map_err(err)? })
    }

    fn check_jones<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &check_jones(&self.inner).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Family(n={}, N={})", self.domain_resolution(), self.target_resolution())
    }
}

/// The factors `E`, `F` of `Id = F T E` together with their diagnostics.
#[pyclass(name = "Factorization", module = "hardy_factor_py", frozen)]
struct PyFactorization {
    inner: FactorizationArtifacts,
}

#[pymethods]
impl PyFactorization {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: FactorizationArtifacts::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    #[getter]
    fn attempts(&self) -> u64 {
        self.inner.search.attempts
    }

    #[getter]
    fn e(&self) -> PyOperator {
        PyOperator { inner: self.inner.e.clone() }
    }

    #[getter]
    fn f(&self) -> PyOperator {
        PyOperator { inner: self.inner.f.clone() }
    }

    #[pyo3(signature = (operator, samples = 64, seed = 0))]
    fn verify<'py>(&self, py: Python<'py>, operator: &PyOperator, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let e = self.inner.params.exponents;
        to_py(py, &hardy_factor::verify_diagram(&self.inner, &operator.inner, e, samples, seed).map_err(err)?)
    }
}

/// `(η₀, m₀, N)` for the given parameters.
#[pyfunction]
fn constants<'py>(py: Python<'py>, n: u32, delta: f64, gamma: f64, eta: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &hardy_factor::constants(n, delta, gamma, eta).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (n, m0, target = None))]
fn gamlen_gaudet(n: u32, m0: u32, target: Option<u32>) -> PyResult<(PyFamily, PyFamily)> {
    let (mut x, mut y) = hardy_factor::gamlen_gaudet(n, m0).map_err(err)?;
    if let Some(t) = target {
        x = x.lift(t).map_err(err)?;
        y = y.lift(t).map_err(err)?;
    }
    Ok((PyFamily { inner: x }, PyFamily { inner: y }))
}

#[pyfunction]
fn check_families<'py>(py: Python<'py>, x: &PyFamily, y: &PyFamily) -> PyResult<Bound<'py, PyAny>> {
    let report = serde_json::json!({
        "jones_x": check_jones(&x.inner).map_err(err)?,
        "jones_y": check_jones(&y.inner).map_err(err)?,
        "capon": check_capon(&x.inner, &y.inner).map_err(err)?,
        "alpha": hardy_factor::alpha(&x.inner, &y.inner),
    });
    to_py(py, &report)
}

/// Coefficients are in canonical basis order over `𝒟_{≤N} ⊗ 𝒟_{≤N}`.
#[pyfunction]
#[pyo3(signature = (coefficients, resolution, p = 2.0, q = 2.0))]
fn mixed_norm(coefficients: Vec<f64>, resolution: u32, p: f64, q: f64) -> PyResult<f64> {
    let f = HardyElement::new(resolution, coefficients).map_err(err)?;
    Ok(hardy_factor::mixed_norm(&f, exponents(p, q)?))
}

#[pyfunction]
fn basis_len(resolution: u32) -> usize {
    hardy_factor::dyadic::basis_len(resolution)
}

fn rv_args(variable: &str, indices: (String, String, String, String)) -> PyResult<(RandomVariable, RvIndex)> {
    let v: RandomVariable = variable.parse().map_err(err)?;
    let idx = RvIndex::w(interval(&indices.0)?, interval(&indices.1)?, interval(&indices.2)?, interval(&indices.3)?);
    idx.check(v).map_err(err)?;
    Ok((v, idx))
}

/// Exact moments; `indices` is `(I, I', J, J')` as `"level:index"` strings.
#[pyfunction]
fn exhaustive_moments<'py>(
    py: Python<'py>,
    operator: &PyOperator,
    x: &PyFamily,
    y: &PyFamily,
    variable: &str,
    indices: (String, String, String, String),
) -> PyResult<Bound<'py, PyAny>> {
    let (v, idx) = rv_args(variable, indices)?;
    let report = py.detach(|| MomentContext::new(&operator.inner, &x.inner, &y.inner).exhaustive(v, idx));
    to_py(py, &report.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (operator, x, y, variable, indices, trials = 10_000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn mc_moments<'py>(
    py: Python<'py>,
    operator: &PyOperator,
    x: &PyFamily,
    y: &PyFamily,
    variable: &str,
    indices: (String, String, String, String),
    trials: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let (v, idx) = rv_args(variable, indices)?;
    let report =
        py.detach(|| MomentContext::new(&operator.inner, &x.inner, &y.inner).monte_carlo(v, idx, trials, seed));
    to_py(py, &report.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (operator, x, y, eta0, max_attempts = 10_000, seed = 0))]
fn search_signs<'py>(
    py: Python<'py>,
    operator: &PyOperator,
    x: &PyFamily,
    y: &PyFamily,
    eta0: f64,
    max_attempts: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let report =
        py.detach(|| hardy_factor::search_signs(&operator.inner, &x.inner, &y.inner, eta0, max_attempts, seed));
    to_py(py, &report.map_err(err)?)
}

/// Practical-mode factorization through `V_N`, with `N` the operator's resolution.
#[pyfunction]
#[pyo3(signature = (operator, n, m0, eta0, delta, gamma, eta = 1.0, max_attempts = 10_000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn factorize(
    py: Python<'_>,
    operator: &PyOperator,
    n: u32,
    m0: u32,
    eta0: f64,
    delta: f64,
    gamma: f64,
    eta: f64,
    max_attempts: u64,
    seed: u64,
) -> PyResult<PyFactorization> {
    let t = &operator.inner;
    let mut params = FactorizationParams::practical(n, t.domain().resolution, m0, eta0, delta, gamma, eta);
    params.max_attempts = max_attempts;
    params.exponents = t.domain().exponents;
    let art = py.detach(|| hardy_factor::factorize(t, &params, seed)).map_err(err)?;
    Ok(PyFactorization { inner: art })
}

#[pymodule]
fn hardy_factor_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HardyFactorError", m.py().get_type::<HardyFactorError>())?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyFamily>()?;
    m.add_class::<PyFactorization>()?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(gamlen_gaudet, m)?)?;
    m.add_function(wrap_pyfunction!(check_families, m)?)?;
    m.add_function(wrap_pyfunction!(mixed_norm, m)?)?;
    m.add_function(wrap_pyfunction!(basis_len, m)?)?;
    m.add_function(wrap_pyfunction!(exhaustive_moments, m)?)?;
    m.add_function(wrap_pyfunction!(mc_moments, m)?)?;
    m.add_function(wrap_pyfunction!(search_signs, m)?)?;
    m.add_function(wrap_pyfunction!(factorize, m)?)?;
    Ok(())
}
