//! Python bindings for the shlab numerical laboratory.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use shlab_core::diagnostics::energy_inequality_residual;
use shlab_core::workbench::{frequency_schedule, ImprovementOptions};
use shlab_core::{self as core, Error, FrictionParams, ScalarField, TorusGrid, VectorField};

fn to_py(err: Error) -> PyErr {
    match err.exit_code() {
        2 => PyValueError::new_err(err.to_string()),
        4 => PyOSError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Uniform cell-centred grid on the unit torus.
#[pyclass(frozen, skip_from_py_object, name = "Grid")]
#[derive(Clone, Copy)]
struct PyGrid(TorusGrid);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (nx, ny = None))]
    fn new(nx: usize, ny: Option<usize>) -> PyResult<Self> {
        TorusGrid::new(nx, ny.unwrap_or(nx)).py().map(Self)
    }

    #[getter]
    fn nx(&self) -> usize {
        self.0.nx()
    }

    #[getter]
    fn ny(&self) -> usize {
        self.0.ny()
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }

    #[getter]
    fn dy(&self) -> f64 {
        self.0.dy()
    }

    /// Cell centres in storage order.
    fn centers(&self) -> Vec<(f64, f64)> {
        self.0.centers().map(|[x, y]| (x, y)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Grid({}, {})", self.0.nx(), self.0.ny())
    }
}

fn scalar(grid: &PyGrid, values: Vec<f64>) -> PyResult<ScalarField> {
    ScalarField::new(grid.0, values).py()
}

fn vector(grid: &PyGrid, x: Vec<f64>, y: Vec<f64>) -> PyResult<VectorField> {
    VectorField::new(grid.0, x, y).py()
}

fn pair(v: VectorField) -> (Vec<f64>, Vec<f64>) {
    (v.x().to_vec(), v.y().to_vec())
}

/// Sample mean of a cell field.
#[pyfunction]
fn integrate(grid: &PyGrid, values: Vec<f64>) -> PyResult<f64> {
    Ok(core::integrate(&scalar(grid, values)?))
}

/// Zero-mean solution of `-Δu = rhs`.
#[pyfunction]
fn poisson_solve(grid: &PyGrid, rhs: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(core::poisson_solve(&scalar(grid, rhs)?).py()?.into_values())
}

/// Divergence-free part, mean and gradient potential `(v, mean, psi)` of a vector field.
#[pyfunction]
fn helmholtz(
    grid: &PyGrid,
    x: Vec<f64>,
    y: Vec<f64>,
) -> PyResult<((Vec<f64>, Vec<f64>), (f64, f64), Vec<f64>)> {
    let parts = core::helmholtz_decompose(&vector(grid, x, y)?);
    Ok((
        pair(parts.v),
        (parts.mean[0], parts.mean[1]),
        parts.psi.into_values(),
    ))
}

/// Largest eigenvalue of the symmetric traceless matrix `[[p, s], [s, -p]]`.
#[pyfunction]
fn lambda_max_traceless(p: f64, s: f64) -> PyResult<f64> {
    core::lambda_max_traceless(core::SymTraceless2::new(p, s)).py()
}

/// Implicit Coulomb friction update of the momentum `(qx, qy)` over one step `dt`.
#[pyfunction]
#[pyo3(signature = (grid, qx, qy, h, gamma, dt, gamma2 = 0.0))]
fn friction_shrink(
    grid: &PyGrid,
    qx: Vec<f64>,
    qy: Vec<f64>,
    h: Vec<f64>,
    gamma: f64,
    dt: f64,
    gamma2: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let params = if gamma2 > 0.0 {
        FrictionParams::extended(gamma, gamma2)
    } else {
        FrictionParams::coulomb(gamma)
    }
    .py()?;
    let q = vector(grid, qx, qy)?;
    let h = scalar(grid, h)?;
    Ok(pair(core::friction_shrink(&q, &h, &params, dt).py()?))
}

/// A parsed scenario file.
#[pyclass(frozen, name = "Scenario")]
struct PyScenario(core::ScenarioConfig);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        core::parse_scenario(path).py().map(Self)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        core::parse_scenario_str(text, std::path::Path::new("."))
            .py()
            .map(Self)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid)
    }

    #[getter]
    fn t_final(&self) -> f64 {
        self.0.t_final
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn h0(&self) -> Vec<f64> {
        self.0.h0.values().to_vec()
    }

    fn simulate(&self, py: Python<'_>) -> PyResult<PyTrajectory> {
        let scenario = self.0.scenario().py()?;
        py.detach(|| core::simulate(&scenario))
            .py()
            .map(PyTrajectory)
    }

    fn workbench(&self, py: Python<'_>) -> PyResult<PyWorkbench> {
        let data = self.0.workbench_data().py()?;
        let base = py.detach(|| core::WorkbenchBase::new(data)).py()?;
        Ok(PyWorkbench {
            base,
            config: self.0.clone(),
        })
    }
}

/// Output of a finite-volume run.
#[pyclass(frozen, name = "Trajectory")]
struct PyTrajectory(core::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.step_count
    }

    fn mass(&self) -> Vec<f64> {
        self.0.ledger.rows().iter().map(|r| r.mass).collect()
    }

    fn total_energy(&self) -> Vec<f64> {
        self.0.ledger.rows().iter().map(|r| r.total).collect()
    }

    /// Largest violation of the discrete energy inequality (nonpositive when it holds).
    fn energy_residual(&self) -> f64 {
        energy_inequality_residual(&self.0.ledger)
    }

    fn ledger_csv(&self) -> String {
        self.0.ledger.to_csv()
    }

    /// Height and momentum `(h, qx, qy)` at output index `k` (default: last).
    #[pyo3(signature = (k = None))]
    fn state(&self, k: Option<usize>) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let k = k.unwrap_or(self.0.states.len() - 1);
        let s = self
            .0
            .states
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("no output {k}")))?;
        let (qx, qy) = pair(s.q.clone());
        Ok((s.h.values().to_vec(), qx, qy))
    }
}

/// Designed height, stream potential and mean flow for a scenario, ready for subsolutions.
#[pyclass(frozen, name = "Workbench")]
struct PyWorkbench {
    base: core::WorkbenchBase,
    config: core::ScenarioConfig,
}

#[pymethods]
impl PyWorkbench {
    #[getter]
    fn tau(&self) -> f64 {
        self.base.design.tau
    }

    /// Smallest certified energy level (with a 10% safety factor).
    #[pyo3(signature = (delta = None))]
    fn find_lambda0(&self, py: Python<'_>, delta: Option<f64>) -> PyResult<f64> {
        let delta = delta.unwrap_or(self.config.workbench.delta);
        py.detach(|| core::find_lambda0(&self.base, delta)).py()
    }

    #[pyo3(signature = (lam, delta = None))]
    fn subsolution(&self, lam: f64, delta: Option<f64>) -> PyResult<PySubsolution> {
        let delta = delta.unwrap_or(self.config.workbench.delta);
        let sub = self.base.initial_subsolution(lam, delta).py()?;
        Ok(PySubsolution {
            sub,
            config: self.config.clone(),
        })
    }
}

/// Certified subsolution state.
#[pyclass(frozen, name = "Subsolution")]
struct PySubsolution {
    sub: core::SubsolutionState,
    config: core::ScenarioConfig,
}

#[pymethods]
impl PySubsolution {
    #[getter]
    fn lam(&self) -> f64 {
        self.sub.lambda
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.sub.delta
    }

    fn energy_gap(&self) -> f64 {
        core::energy_gap(&self.sub)
    }

    /// `(pass, min_margin, per-node min margins)`.
    fn certificate(&self) -> PyResult<(bool, f64, Vec<f64>)> {
        let c = core::subsolution_certificate(&self.sub).py()?;
        Ok((c.pass, c.min_margin, c.min_margin_per_node))
    }

    /// One improvement step at schedule position `step`; returns the new state and
    /// whether the step was accepted.
    #[pyo3(signature = (step = 0, seed = 0))]
    fn improve(&self, py: Python<'_>, step: usize, seed: u64) -> PyResult<(PySubsolution, bool)> {
        let opts = ImprovementOptions {
            n: frequency_schedule(step, self.config.workbench.frequency, self.config.grid),
            oscillation: self.config.oscillatory_options(seed),
            ..ImprovementOptions::default()
        };
        let rep = py
            .detach(|| core::improvement_step(&self.sub, &opts))
            .py()?;
        let next = PySubsolution {
            sub: rep.state,
            config: self.config.clone(),
        };
        Ok((next, rep.accepted))
    }
}

#[pymodule]
fn shlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", core::VERSION)?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyWorkbench>()?;
    m.add_class::<PySubsolution>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_solve, m)?)?;
    m.add_function(wrap_pyfunction!(helmholtz, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_max_traceless, m)?)?;
    m.add_function(wrap_pyfunction!(friction_shrink, m)?)?;
    Ok(())
}
