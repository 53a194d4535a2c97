//! Python bindings: surfaces, metric geometry, level-set tracing, holonomy,
//! granular predictions, the fluctuation oracle and the scenario runner.

use std::path::PathBuf;
use std::sync::Arc;

use mcte_core::predictions::{self, ZetaReference};
use mcte_core::runner::{resolve_config, Overrides};
use mcte_core::{
    holonomy as core_holonomy, DerivativeMode, EntropySurface, FdStep, GridSpec, LevelSetPath,
    LoopSpec, McteError, RunError, SamplerConfig, StepControl, TabulatedSurface, ToyGranularParams,
};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

create_exception!(mcte, MCTEError, PyException);
create_exception!(mcte, DomainError, MCTEError);
create_exception!(mcte, DegenerateIntensityError, MCTEError);
create_exception!(mcte, IntegrationError, MCTEError);
create_exception!(mcte, NonErgodicError, MCTEError);
create_exception!(mcte, ConfigError, MCTEError);
create_exception!(mcte, ComputationError, MCTEError);

fn to_py_err(e: McteError) -> PyErr {
    let msg = e.to_string();
    match e {
        McteError::Domain { .. } | McteError::DomainEscape { .. } | McteError::NonFinite { .. } => {
            DomainError::new_err(msg)
        }
        McteError::DegenerateIntensity { .. } => DegenerateIntensityError::new_err(msg),
        McteError::Stiffness { .. } => IntegrationError::new_err(msg),
        McteError::NonErgodic(_) => NonErgodicError::new_err(msg),
        McteError::Config(_) => ConfigError::new_err(msg),
        McteError::InvalidInput(_) | McteError::Index(_) => PyValueError::new_err(msg),
        _ => MCTEError::new_err(msg),
    }
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Config(_) => ConfigError::new_err(e.to_string()),
        RunError::Computation { .. } => ComputationError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(json_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serde_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| MCTEError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// An entropy surface `S(q)`.
#[pyclass(name = "Surface", module = "mcte", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySurface {
    inner: EntropySurface,
}

#[pymethods]
impl PySurface {
    /// Granular toy surface `a ln(V - V_J) + b ln(sigma_max - sigma) - c sigma / (V - V_J)`.
    #[staticmethod]
    #[pyo3(signature = (a=1.0, b=1.0, c=0.3, v_j=0.75, sigma_max=1.0, finite_difference=false))]
    fn toy(
        a: f64,
        b: f64,
        c: f64,
        v_j: f64,
        sigma_max: f64,
        finite_difference: bool,
    ) -> PyResult<Self> {
        let s = EntropySurface::toy(ToyGranularParams {
            a,
            b,
            c,
            v_j,
            sigma_max,
        })
        .map_err(to_py_err)?;
        Self::with_mode(s, finite_difference)
    }

    /// `S = -1/2 sum_i k_i (q_i - center_i)^2`.
    #[staticmethod]
    #[pyo3(signature = (curvature, center, finite_difference=false))]
    fn quadratic(curvature: Vec<f64>, center: Vec<f64>, finite_difference: bool) -> PyResult<Self> {
        let s = EntropySurface::quadratic(curvature, center).map_err(to_py_err)?;
        Self::with_mode(s, finite_difference)
    }

    /// Bicubic spline through a `q0,q1,S` CSV table on a uniform grid.
    #[staticmethod]
    fn tabulated(path: PathBuf) -> PyResult<Self> {
        let t = TabulatedSurface::from_csv_path(&path).map_err(to_py_err)?;
        let inner = EntropySurface::external(Arc::new(t)).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn contains(&self, q: Vec<f64>) -> bool {
        self.inner.contains(&q)
    }

    fn entropy(&self, q: Vec<f64>) -> PyResult<f64> {
        self.inner.entropy(&q).map_err(to_py_err)
    }

    fn gradient(&self, q: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.gradient(&q).map_err(to_py_err)
    }

    fn hessian(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.hessian(&q).map(|h| rows(&h)).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!("Surface({:?})", self.inner.kind())
    }
}

impl PySurface {
    fn with_mode(s: EntropySurface, fd: bool) -> PyResult<Self> {
        let inner = if fd {
            s.with_derivatives(DerivativeMode::CentralFd(FdStep::Auto))
                .map_err(to_py_err)?
        } else {
            s
        };
        Ok(Self { inner })
    }
}

/// Metric `g = -Hessian(S)`, intensities and temperatures at `q`.
#[pyfunction]
fn metric<'py>(py: Python<'py>, surface: &PySurface, q: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let mp = mcte_core::metric_at(&surface.inner, &q).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("q", mp.q.clone())?;
    d.set_item("g", rows(&mp.g))?;
    d.set_item("beta", mp.beta.clone())?;
    d.set_item("temperature", mp.temperature.clone())?;
    d.set_item("det", mcte_core::stability_det(&mp))?;
    Ok(d)
}

/// Components of the coupling one-form `omega_i` at `q`.
#[pyfunction]
fn omega(surface: &PySurface, q: Vec<f64>, channel: usize) -> PyResult<Vec<f64>> {
    let mp = mcte_core::metric_at(&surface.inner, &q).map_err(to_py_err)?;
    mcte_core::omega_at(&mp, channel)
        .map(|o| o.components)
        .map_err(to_py_err)
}

/// A traced entropy level set with optional coupling coefficients.
#[pyclass(name = "LevelSetPath", module = "mcte", frozen)]
struct PyPath {
    inner: LevelSetPath,
    ctrl: StepControl,
    surface: EntropySurface,
}

#[pymethods]
impl PyPath {
    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.q.clone()).collect()
    }

    #[getter]
    fn s_drift(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.s_drift).collect()
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.beta.clone()).collect()
    }

    #[getter]
    fn truncated(&self) -> bool {
        self.inner.is_truncated()
    }

    /// `zeta_i` at every sample (NaN where not yet computed).
    fn zeta(&self, channel: usize) -> PyResult<Vec<f64>> {
        if channel >= self.inner.dim() {
            return Err(PyValueError::new_err(format!(
                "channel {channel} out of range"
            )));
        }
        Ok(self.inner.samples.iter().map(|s| s.zeta[channel]).collect())
    }

    /// New path with `zeta_i` accumulated from `lambda` at the first sample.
    #[pyo3(signature = (channel, lam=1.0))]
    fn with_zeta(&self, channel: usize, lam: f64) -> PyResult<PyPath> {
        let inner =
            mcte_core::zeta_along_path(&self.surface, &self.inner, channel, lam, &self.ctrl)
                .map_err(to_py_err)?;
        Ok(PyPath {
            inner,
            ctrl: self.ctrl.clone(),
            surface: self.surface.clone(),
        })
    }

    /// Invariant report: mean of `zeta_i T_i` and its largest relative drift per channel.
    fn invariant<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serde_to_py(py, &mcte_core::invariant_check(&self.inner))
    }

    fn beta_ratio_error(&self, channel: usize) -> f64 {
        self.inner.beta_ratio_error(channel)
    }

    fn temperature_ratio(&self, channel: usize) -> f64 {
        self.inner.temperature_ratio(channel)
    }

    fn max_s_drift(&self) -> f64 {
        self.inner.max_s_drift()
    }
}

fn step_control(rtol: Option<f64>, atol: Option<f64>) -> PyResult<StepControl> {
    let mut c = StepControl::default();
    if let Some(r) = rtol {
        c.rtol = r;
    }
    if let Some(a) = atol {
        c.atol = a;
    }
    c.validate().map_err(to_py_err)?;
    Ok(c)
}

/// Trace the level set `S = S(q0)` until `q[param_channel]` reaches `target`.
#[pyfunction]
#[pyo3(signature = (surface, q0, param_channel, target, rtol=None, atol=None))]
fn trace(
    surface: &PySurface,
    q0: Vec<f64>,
    param_channel: usize,
    target: f64,
    rtol: Option<f64>,
    atol: Option<f64>,
) -> PyResult<PyPath> {
    let ctrl = step_control(rtol, atol)?;
    let inner = mcte_core::trace_level_set(&surface.inner, &q0, param_channel, target, &ctrl)
        .map_err(to_py_err)?;
    Ok(PyPath {
        inner,
        ctrl,
        surface: surface.inner.clone(),
    })
}

/// `oint omega_i` around a closed polygon (or the rectangle `v_range x sigma_range`).
#[pyfunction]
#[pyo3(signature = (surface, channel=0, vertices=None, v_range=None, sigma_range=None, samples_per_edge=8))]
fn holonomy(
    surface: &PySurface,
    channel: usize,
    vertices: Option<Vec<Vec<f64>>>,
    v_range: Option<(f64, f64)>,
    sigma_range: Option<(f64, f64)>,
    samples_per_edge: usize,
) -> PyResult<f64> {
    let lp = match (vertices, v_range, sigma_range) {
        (Some(v), None, None) => LoopSpec {
            vertices: v,
            samples_per_edge,
        },
        (None, Some(a), Some(b)) => LoopSpec::rectangle(a, b, samples_per_edge),
        _ => {
            return Err(PyValueError::new_err(
                "give either vertices or both v_range and sigma_range",
            ))
        }
    };
    core_holonomy(&surface.inner, &lp, channel).map_err(to_py_err)
}

/// Area integral of the finite-difference curl of `omega_i` over a rectangle.
#[pyfunction]
#[pyo3(signature = (surface, v_range, sigma_range, channel=0, cells=4))]
fn stokes_holonomy(
    surface: &PySurface,
    v_range: (f64, f64),
    sigma_range: (f64, f64),
    channel: usize,
    cells: usize,
) -> PyResult<f64> {
    mcte_core::stokes_holonomy(&surface.inner, v_range, sigma_range, channel, cells)
        .map_err(to_py_err)
}

/// Invariant drift with the correct and the flipped off-diagonal sign.
#[pyfunction]
fn sign_flip<'py>(
    py: Python<'py>,
    surface: &PySurface,
    q0: Vec<f64>,
    target: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = mcte_core::sign_flip_diagnostic(&surface.inner, &q0, target, &StepControl::default())
        .map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("drift_correct", r.drift_correct)?;
    d.set_item("drift_flipped", r.drift_flipped)?;
    d.set_item("s_drift_max", r.s_drift_max)?;
    d.set_item("vacuous", r.vacuous)?;
    Ok(d)
}

#[pyfunction]
fn dilatancy<'py>(
    py: Python<'py>,
    surface: &PySurface,
    q: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let r = mcte_core::dilatancy_at(&surface.inner, &q).map_err(to_py_err)?;
    serde_to_py(py, &r)
}

/// Coupling-corrected stress ratio `zeta_V K_mu R` at `q`, with `zeta_V(q0) = lam`.
#[pyfunction]
#[pyo3(signature = (surface, q, q0, k_mu=3.0, r=1.0, lam=1.0))]
fn rowe<'py>(
    py: Python<'py>,
    surface: &PySurface,
    q: Vec<f64>,
    q0: Vec<f64>,
    k_mu: f64,
    r: f64,
    lam: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let reference = ZetaReference { q0, lambda: lam };
    let rep = predictions::rowe_at(
        &surface.inner,
        &q,
        k_mu,
        r,
        &reference,
        &StepControl::default(),
    )
    .map_err(to_py_err)?;
    serde_to_py(py, &rep)
}

/// `det g` on a `(V, sigma)` grid with the refined critical contour.
#[pyfunction]
#[pyo3(signature = (surface, v_range=(0.76, 1.6), sigma_range=(0.0, 0.95), nv=43, nsigma=39))]
fn stability_map<'py>(
    py: Python<'py>,
    surface: &PySurface,
    v_range: (f64, f64),
    sigma_range: (f64, f64),
    nv: usize,
    nsigma: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = GridSpec {
        v_range,
        sigma_range,
        nv,
        nsigma,
    };
    let map = mcte_core::stability_map(&surface.inner, &spec).map_err(to_py_err)?;
    serde_to_py(py, &map)
}

/// Metropolis estimate of the metric as the precision matrix of `exp(S)` in a box.
#[pyfunction]
#[pyo3(signature = (surface, q_center, box_half_width, n_samples, proposal_scale, seed, burn_in=20_000, batches=50, chains=1))]
#[allow(clippy::too_many_arguments)]
fn sample_metric<'py>(
    py: Python<'py>,
    surface: &PySurface,
    q_center: Vec<f64>,
    box_half_width: Vec<f64>,
    n_samples: usize,
    proposal_scale: Vec<f64>,
    seed: u64,
    burn_in: usize,
    batches: usize,
    chains: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SamplerConfig {
        q_center,
        half_width: box_half_width,
        n_samples,
        burn_in,
        proposal_scale,
        seed,
        batches,
    };
    let s = surface.inner.clone();
    let r = py
        .detach(move || mcte_core::sample_metric_chains(&s, &cfg, chains))
        .map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("g_analytic", rows(&r.g_analytic))?;
    d.set_item("g_sampled", rows(&r.g_sampled))?;
    d.set_item("std_err", rows(&r.std_err))?;
    d.set_item("rel_err_frobenius", r.rel_err_frobenius)?;
    d.set_item("ess", r.ess)?;
    d.set_item("acceptance_rate", r.acceptance_rate)?;
    d.set_item("n_samples", r.n_samples)?;
    d.set_item("mean", r.mean)?;
    Ok(d)
}

/// Run a scenario from a JSON config string; returns the run summary.
#[pyfunction]
#[pyo3(signature = (config_json, jobs=None, output_dir=None, seed=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    config_json: &str,
    jobs: Option<usize>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut v: Value =
        serde_json::from_str(config_json).map_err(|e| ConfigError::new_err(e.to_string()))?;
    let ov = Overrides {
        output_dir,
        seed,
        ..Overrides::default()
    };
    let cfg = resolve_config(&mut v, &ov).map_err(run_err)?;
    let summary = py
        .detach(move || mcte_core::run(&cfg, jobs))
        .map_err(run_err)?;
    serde_to_py(py, &summary)
}

#[pymodule]
fn mcte(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PySurface>()?;
    m.add_class::<PyPath>()?;
    m.add_function(wrap_pyfunction!(metric, m)?)?;
    m.add_function(wrap_pyfunction!(omega, m)?)?;
    m.add_function(wrap_pyfunction!(trace, m)?)?;
    m.add_function(wrap_pyfunction!(holonomy, m)?)?;
    m.add_function(wrap_pyfunction!(stokes_holonomy, m)?)?;
    m.add_function(wrap_pyfunction!(sign_flip, m)?)?;
    m.add_function(wrap_pyfunction!(dilatancy, m)?)?;
    m.add_function(wrap_pyfunction!(rowe, m)?)?;
    m.add_function(wrap_pyfunction!(stability_map, m)?)?;
    m.add_function(wrap_pyfunction!(sample_metric, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("MCTEError", py.get_type::<MCTEError>())?;
    m.add("DomainError", py.get_type::<DomainError>())?;
    m.add(
        "DegenerateIntensityError",
        py.get_type::<DegenerateIntensityError>(),
    )?;
    m.add("IntegrationError", py.get_type::<IntegrationError>())?;
    m.add("NonErgodicError", py.get_type::<NonErgodicError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("ComputationError", py.get_type::<ComputationError>())?;
    m.add("VOLUME", mcte_core::VOLUME)?;
    m.add("STRESS", mcte_core::STRESS)?;
    Ok(())
}
