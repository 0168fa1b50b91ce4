//! Python bindings. Results with many fields come back as plain dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use ::qotto::cycle::{self, CycleOptions};
use ::qotto::model::StrokeDurations;
use ::qotto::optimizer::{self, OptimizationSpec, Target};
use ::qotto::propagate::Engine;
use ::qotto::{analysis, tedopa, EngineConfig, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Engine parameters: work medium, thermal baths, dephasing bath, stroke
/// durations and numerics.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: EngineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (preset = "paper-4.1"))]
    fn new(preset: &str) -> PyResult<Self> {
        EngineConfig::preset(preset).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        EngineConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn presets() -> Vec<&'static str> {
        ::qotto::config::PRESETS.to_vec()
    }

    fn to_toml(&self) -> String {
        self.inner.canonical_text()
    }

    /// Copy with `key=value` overrides applied, e.g. "dephasing.Gamma=64".
    fn with_overrides(&self, sets: Vec<String>) -> PyResult<Self> {
        let mut c = self.inner;
        c.apply_overrides(&sets).map_err(py_err)?;
        c.validate().map_err(py_err)?;
        Ok(Self { inner: c })
    }

    fn with_durations(&self, tau_com: f64, tau_h: f64, tau_exp: f64, tau_c: f64) -> PyResult<Self> {
        let d = StrokeDurations::new(tau_com, tau_h, tau_exp, tau_c).map_err(py_err)?;
        let c = self.inner.with_durations(d);
        c.validate().map_err(py_err)?;
        Ok(Self { inner: c })
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.to_flat())
    }

    #[getter]
    fn durations(&self) -> [f64; 4] {
        self.inner.strokes.as_array()
    }

    #[getter]
    fn effective_rate(&self) -> f64 {
        analysis::effective_rate(&self.inner.dephasing)
    }

    fn __repr__(&self) -> String {
        let p = self.inner.dephasing;
        format!(
            "Config(Gamma={}, gamma={}, omega0={}, durations={:?})",
            p.coupling,
            p.width,
            p.omega0,
            self.inner.strokes.as_array()
        )
    }
}

/// Large-time decay rate of the decoherence function of a Lorentzian bath.
#[pyfunction]
#[pyo3(signature = (coupling, width, omega0, beta = f64::INFINITY))]
fn effective_dephasing_rate(coupling: f64, width: f64, omega0: f64, beta: f64) -> f64 {
    analysis::effective_dephasing_rate(coupling, width, omega0, beta)
}

/// Steady displacement of the damped mode for the excited branch.
#[pyfunction]
fn steady_displacement(coupling: f64, width: f64, omega0: f64) -> (f64, f64) {
    let a = analysis::steady_displacement(coupling, width, omega0);
    (a.re, a.im)
}

#[pyfunction]
fn decoupling_energy(coupling: f64, width: f64, omega0: f64) -> f64 {
    analysis::decoupling_energy_lorentzian(coupling, width, omega0)
}

/// (lower, upper) estimate of the heat dissipated in one thermal stroke.
#[pyfunction]
#[pyo3(signature = (coupling, width, omega0, gamma_th, tau_th, n_h, n_c, beta = f64::INFINITY))]
#[allow(clippy::too_many_arguments)]
fn dissipated_heat_bounds(
    coupling: f64,
    width: f64,
    omega0: f64,
    gamma_th: f64,
    tau_th: f64,
    n_h: f64,
    n_c: f64,
    beta: f64,
) -> (f64, f64) {
    let b = analysis::dissipated_heat_bounds(coupling, width, omega0, beta, gamma_th, tau_th, n_h, n_c);
    (b.lower, b.upper)
}

/// Quasi-static cycle quantities as a dict.
#[pyfunction]
fn quasistatic<'py>(py: Python<'py>, eps_c: f64, eps_h: f64, n_c: f64, n_h: f64) -> PyResult<Bound<'py, PyAny>> {
    let q =
        analysis::quasistatic(eps_c, eps_h, analysis::polarization_argument(n_c), analysis::polarization_argument(n_h));
    to_py(py, &q)
}

/// Run to the steady cycle; returns the converged cycle record.
#[pyfunction]
#[pyo3(signature = (config, diagnostics = false))]
fn run_cycle<'py>(py: Python<'py>, config: &PyConfig, diagnostics: bool) -> PyResult<Bound<'py, PyAny>> {
    let c = config.inner;
    let sc = py
        .detach(|| {
            let mut engine = Engine::new(&c)?;
            cycle::run_to_steady_cycle(&mut engine, None, CycleOptions { diagnostics, keep_states: false })
        })
        .map_err(py_err)?;
    let d = to_py(py, &sc.record)?;
    let dict = d.cast::<PyDict>()?;
    dict.set_item("distances", sc.distances)?;
    if diagnostics {
        dict.set_item("diagnostics", to_py(py, &sc.record.diagnostics)?)?;
    }
    Ok(d)
}

/// Maximize steady-cycle power over the stroke durations.
#[pyfunction]
#[pyo3(signature = (config, target = "tot", max_evals = 400, seed = 0))]
fn maximize_power<'py>(
    py: Python<'py>,
    config: &PyConfig,
    target: &str,
    max_evals: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let c = config.inner;
    let mut spec = OptimizationSpec::new(target.parse::<Target>().map_err(py_err)?, c.strokes);
    spec.max_evals = max_evals;
    spec.seed = seed;
    spec.validate().map_err(py_err)?;
    let o = py.detach(|| optimizer::maximize_power(&spec, &c)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("power", o.power)?;
    d.set_item("durations", o.durations.as_array())?;
    d.set_item("evaluations", o.trace.len())?;
    d.set_item("budget_exhausted", o.budget_exhausted)?;
    d.set_item("verified_local_max", o.verified_local_max)?;
    d.set_item("record", to_py(py, &o.record)?)?;
    Ok(d)
}

/// Chain frequencies and hoppings of the configured dephasing bath.
#[pyfunction]
fn chain_coefficients<'py>(py: Python<'py>, config: &PyConfig, a: f64, n: usize) -> PyResult<Bound<'py, PyAny>> {
    let c = tedopa::bath_chain(&config.inner, a, n).map_err(py_err)?;
    to_py(py, &c)
}

#[pymodule]
#[pyo3(name = "qotto")]
fn qotto_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(effective_dephasing_rate, m)?)?;
    m.add_function(wrap_pyfunction!(steady_displacement, m)?)?;
    m.add_function(wrap_pyfunction!(decoupling_energy, m)?)?;
    m.add_function(wrap_pyfunction!(dissipated_heat_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(quasistatic, m)?)?;
    m.add_function(wrap_pyfunction!(run_cycle, m)?)?;
    m.add_function(wrap_pyfunction!(maximize_power, m)?)?;
    m.add_function(wrap_pyfunction!(chain_coefficients, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
