//! Python bindings. Structured results come back as plain dicts/lists.

use bkt_core::density::{a_report, prop21_constants, ChargeDensity, CoverConfig, MultiscaleCover};
use bkt_core::duality::{duality_check, DualityOptions};
use bkt_core::fields::{enumerate_iv, gff_laplace_exact, gff_laplace_mc, GffSampler};
use bkt_core::green::GreenOperator;
use bkt_core::lattice::{Graph, Kind, LatticeDomain};
use bkt_core::spinwave::spinwave_for_member;
use bkt_core::verify::{run_suite, Profile, Suite};
use bkt_core::weights::TrigWeight;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: bkt_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// serde value → Python object through the stdlib json module.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_str(&format!("{s:?}")).map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

fn cover_config(profile: &str, m_test: u64) -> PyResult<CoverConfig> {
    match profile {
        "paper" => Ok(CoverConfig::paper()),
        "test-scaled" => Ok(CoverConfig::test_scaled(m_test)),
        p => Err(PyValueError::new_err(format!("unknown profile {p:?}"))),
    }
}

#[pyclass(name = "Domain", frozen)]
struct PyDomain {
    inner: LatticeDomain,
}

#[pymethods]
impl PyDomain {
    #[new]
    fn new(kind: &str, side: usize) -> PyResult<Self> {
        let k: Kind = parse("kind", kind)?;
        Ok(PyDomain { inner: LatticeDomain::new(k, side).map_err(err)? })
    }
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }
    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }
    fn index(&self, a: usize, b: usize) -> usize {
        self.inner.index(a, b)
    }
    /// (j, l, multiplicity) triples.
    fn edges(&self) -> Vec<(usize, usize, u32)> {
        self.inner.edges()
    }
    fn laplacian(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.laplacian_apply(&f).map_err(err)
    }
    fn __repr__(&self) -> String {
        format!("Domain({:?}, {})", self.inner.kind(), self.inner.side())
    }
}

#[pyclass(name = "Green", frozen)]
struct PyGreen {
    inner: GreenOperator,
}

#[pymethods]
impl PyGreen {
    #[new]
    fn new(domain: &PyDomain) -> PyResult<Self> {
        Ok(PyGreen { inner: GreenOperator::new(&domain.inner).map_err(err)? })
    }
    /// (−Δ)⁻¹f for mean-zero f.
    fn apply(&self, f: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.apply(&f).map_err(err)
    }
    fn quadratic_form(&self, f: Vec<f64>) -> PyResult<f64> {
        self.inner.quadratic_form(&f).map_err(err)
    }
}

#[pyclass(name = "Density", frozen)]
struct PyDensity {
    domain: LatticeDomain,
    inner: ChargeDensity,
}

#[pymethods]
impl PyDensity {
    /// `sites`: list of (a, b, charge).
    #[new]
    fn new(domain: &PyDomain, sites: Vec<(usize, usize, i64)>) -> PyResult<Self> {
        let s: Vec<((usize, usize), i64)> = sites.into_iter().map(|(a, b, q)| ((a, b), q)).collect();
        Ok(PyDensity { domain: domain.inner.clone(), inner: ChargeDensity::from_sites(&domain.inner, &s).map_err(err)? })
    }
    #[getter]
    fn charge(&self) -> i64 {
        self.inner.charge()
    }
    #[getter]
    fn diameter(&self) -> usize {
        self.inner.diameter(&self.domain)
    }
    #[getter]
    fn norm2sq(&self) -> i64 {
        self.inner.norm2sq()
    }
    fn entries(&self) -> Vec<(usize, i64)> {
        self.inner.entries().to_vec()
    }
    /// Per-scale covers and the A(ϱ) bounds.
    #[pyo3(signature = (profile="paper", m_test=2))]
    fn cover<'py>(&self, py: Python<'py>, profile: &str, m_test: u64) -> PyResult<Bound<'py, PyAny>> {
        let cfg = cover_config(profile, m_test)?;
        let mc = MultiscaleCover::build(&self.inner, &self.domain, &cfg).map_err(err)?;
        let rep = a_report(&mc, prop21_constants(&cfg).d1);
        to_py(py, &serde_json::json!({"cover": mc, "bounds": rep}))
    }
    #[pyo3(signature = (beta, profile="paper", m_test=2))]
    fn spinwave<'py>(&self, py: Python<'py>, beta: f64, profile: &str, m_test: u64) -> PyResult<Bound<'py, PyAny>> {
        let cfg = cover_config(profile, m_test)?;
        let (sw, rep, _) = spinwave_for_member(0, std::slice::from_ref(&self.inner), beta, &self.domain, &cfg).map_err(err)?;
        to_py(py, &serde_json::json!({"a": sw.a, "spin_wave": sw, "report": rep}))
    }
}

/// Exact E^IV[e^{⟨m,f⟩}] with the truncation diagnostics.
#[pyfunction]
#[pyo3(signature = (domain, beta, f, k=10, v=0))]
fn iv_enumerate<'py>(py: Python<'py>, domain: &PyDomain, beta: f64, f: Vec<f64>, k: usize, v: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &enumerate_iv(&domain.inner, beta, v, k, &f).map_err(err)?)
}

/// GFF Laplace functional: MC estimate and exact value.
#[pyfunction]
#[pyo3(signature = (domain, beta, f, samples=100_000, seed=0))]
fn gff_laplace<'py>(py: Python<'py>, domain: &PyDomain, beta: f64, f: Vec<f64>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let s = GffSampler::new(&domain.inner, beta, 0).map_err(err)?;
    let mc = gff_laplace_mc(&s, &f, samples, seed);
    let op = GreenOperator::new(&domain.inner).map_err(err)?;
    let exact = gff_laplace_exact(&op, &f, beta).map_err(err)?;
    to_py(py, &serde_json::json!({"mc": mc, "exact": exact}))
}

/// Fejér weight values λ(φ).
#[pyfunction]
fn fejer(n: usize, phi: Vec<f64>) -> PyResult<Vec<f64>> {
    let w = TrigWeight::fejer(n).map_err(err)?;
    Ok(phi.iter().map(|&p| w.evaluate(p)).collect())
}

#[pyfunction]
#[pyo3(signature = (side, beta, x=(0, 0), seed=0))]
fn duality<'py>(py: Python<'py>, side: usize, beta: f64, x: (usize, usize), seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let opt = DualityOptions { seed, ..Default::default() };
    to_py(py, &duality_check(side, beta, x, &opt).map_err(err)?)
}

/// Runs a check suite; returns the list of reports.
#[pyfunction]
#[pyo3(signature = (suite="identities", profile="paper", seed=0))]
fn verify<'py>(py: Python<'py>, suite: &str, profile: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let s: Suite = parse("suite", suite)?;
    let p: Profile = parse("profile", profile)?;
    let reports: Vec<_> = py.detach(|| run_suite(s, p, seed)).map_err(err)?.iter().map(|r| r.without_runtime()).collect();
    to_py(py, &reports)
}

#[pymodule]
fn bktlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", bkt_core::verify::VERSION)?;
    m.add_class::<PyDomain>()?;
    m.add_class::<PyGreen>()?;
    m.add_class::<PyDensity>()?;
    m.add_function(wrap_pyfunction!(iv_enumerate, m)?)?;
    m.add_function(wrap_pyfunction!(gff_laplace, m)?)?;
    m.add_function(wrap_pyfunction!(fejer, m)?)?;
    m.add_function(wrap_pyfunction!(duality, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
