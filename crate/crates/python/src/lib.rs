//! Python bindings. Fields cross the boundary as plain lists of floats.

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nonlocal_sis::dynamics::{self, IntegrateOptions, LongTime, State};
use nonlocal_sis::equilibria::{self, EquilibriumKind, EquilibriumResult, ModelParams};
use nonlocal_sis::mesh::{self, Field, KernelSpec};
use nonlocal_sis::spectral::{self, RateFields, ThresholdSearch};
use nonlocal_sis::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidDomain { .. }
        | Error::KernelTooNarrow { .. }
        | Error::NonpositiveParameter { .. }
        | Error::KernelMassComplete
        | Error::LengthMismatch { .. }
        | Error::NonpositiveField { .. }
        | Error::InvalidBracket { .. }
        | Error::OutOfRange(_)
        | Error::StepTooLarge { .. }
        | Error::ConfigInvalid(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn field(values: Vec<f64>) -> Field {
    Field(DVector::from_vec(values))
}

fn list(f: &Field) -> Vec<f64> {
    f.as_slice().to_vec()
}

/// Uniform midpoint mesh on `[a, b]` with its discretized dispersal kernel.
#[pyclass(module = "nlsis", name = "Kernel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKernel {
    inner: mesh::Kernel,
}

#[pymethods]
impl PyKernel {
    /// `family` is "triangle" (uses `delta`) or "gaussian" (uses `sigma`, `cutoff`).
    #[new]
    #[pyo3(signature = (a, b, n, family = "triangle", delta = None, sigma = None, cutoff = None))]
    fn new(a: f64, b: f64, n: usize, family: &str, delta: Option<f64>, sigma: Option<f64>, cutoff: Option<f64>) -> PyResult<Self> {
        let missing = |name: &str| PyValueError::new_err(format!("{family} kernel needs `{name}`"));
        let spec = match family {
            "triangle" => KernelSpec::Triangle { delta: delta.ok_or_else(|| missing("delta"))? },
            "gaussian" => KernelSpec::Gaussian {
                sigma: sigma.ok_or_else(|| missing("sigma"))?,
                cutoff: cutoff.ok_or_else(|| missing("cutoff"))?,
            },
            other => return Err(PyValueError::new_err(format!("unknown kernel family `{other}`"))),
        };
        let m = mesh::Mesh::new(a, b, n).map_err(to_py)?;
        Ok(Self { inner: mesh::Kernel::new(&m, spec).map_err(to_py)? })
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.mesh().nodes().to_vec()
    }

    #[getter]
    fn weight(&self) -> f64 {
        self.inner.mesh().weight()
    }

    /// Quadrature row sums of the kernel matrix.
    #[getter]
    fn row_integral(&self) -> Vec<f64> {
        list(self.inner.row_integral())
    }

    /// Kernel matrix `K[i][j] = J(x_i - x_j) h` as nested lists.
    fn matrix(&self) -> Vec<Vec<f64>> {
        let k = self.inner.matrix();
        k.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// `d (K u - row_integral * u)`.
    #[pyo3(signature = (u, d = 1.0))]
    fn disperse(&self, u: Vec<f64>, d: f64) -> PyResult<Vec<f64>> {
        if u.len() != self.inner.len() {
            return Err(to_py(Error::LengthMismatch { expected: self.inner.len(), got: u.len() }));
        }
        let mut out = DVector::zeros(u.len());
        self.inner.disperse_into(d, &DVector::from_vec(u), &mut out);
        Ok(out.as_slice().to_vec())
    }

    fn integrate(&self, f: Vec<f64>) -> PyResult<f64> {
        self.inner.mesh().integrate(&field(f)).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let m = self.inner.mesh();
        format!("Kernel(a={}, b={}, n={}, {:?})", m.a(), m.b(), m.len(), self.inner.spec())
    }
}

fn rates(kernel: &PyKernel, beta: Vec<f64>, gamma: Vec<f64>) -> PyResult<RateFields> {
    let n = kernel.inner.len();
    for v in [&beta, &gamma] {
        if v.len() != n {
            return Err(to_py(Error::LengthMismatch { expected: n, got: v.len() }));
        }
    }
    RateFields::new(field(beta), field(gamma)).map_err(to_py)
}

/// Principal eigenvalue of the linearized infected operator and its
/// max-normalized eigenvector.
#[pyfunction]
fn lambda_p(py: Python<'_>, kernel: &PyKernel, d_i: f64, beta: Vec<f64>, gamma: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    let r = rates(kernel, beta, gamma)?;
    let (value, phi) = py.detach(|| spectral::lambda_p(&kernel.inner, d_i, &r)).map_err(to_py)?;
    Ok((value, list(&phi)))
}

/// All three reproduction-number routes plus `λ_p` and the limiting values.
#[pyfunction]
fn r0_routes<'py>(py: Python<'py>, kernel: &PyKernel, d_i: f64, beta: Vec<f64>, gamma: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let r = rates(kernel, beta, gamma)?;
    let rep = py.detach(|| spectral::r0_all_routes(&kernel.inner, d_i, &r)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("d_i", rep.d_i)?;
    d.set_item("lambda_p", rep.lambda_p)?;
    d.set_item("principal_exists", rep.principal_exists)?;
    d.set_item("mu_p", rep.mu_p)?;
    d.set_item("r0_weighted", rep.r0_weighted)?;
    d.set_item("r0_variational", rep.r0_variational)?;
    d.set_item("r0_nextgen", rep.r0_nextgen)?;
    d.set_item("limit_d0", rep.limit_d0)?;
    d.set_item("limit_dinf", rep.limit_dinf)?;
    d.set_item("r0_limit_d0", rep.r0_limit_d0)?;
    d.set_item("r0_limit_dinf", rep.r0_limit_dinf)?;
    Ok(d)
}

/// Infected diffusivity where `λ_p` changes sign inside `[d_lo, d_hi]`, or
/// `None` when there is no sign change.
#[pyfunction]
fn find_d_star(py: Python<'_>, kernel: &PyKernel, beta: Vec<f64>, gamma: Vec<f64>, d_lo: f64, d_hi: f64) -> PyResult<Option<f64>> {
    let r = rates(kernel, beta, gamma)?;
    let found = py.detach(|| spectral::find_d_star(&kernel.inner, &r, d_lo, d_hi)).map_err(to_py)?;
    Ok(match found {
        ThresholdSearch::Root { d_star, .. } => Some(d_star),
        ThresholdSearch::NoRoot { .. } => None,
    })
}

/// Decay rate of the susceptible dispersal toward its mean.
#[pyfunction]
fn alpha_gap(kernel: &PyKernel, d_s: f64) -> PyResult<f64> {
    dynamics::alpha_gap(&kernel.inner, d_s).map_err(to_py)
}

/// Constant `(S, I)` reached when both diffusivities grow without bound.
#[pyfunction]
fn limit_both_infinity(kernel: &PyKernel, beta: Vec<f64>, gamma: Vec<f64>, n_total: f64) -> PyResult<(f64, f64)> {
    let r = rates(kernel, beta, gamma)?;
    equilibria::limit_profile_both_infinity(&r, n_total, kernel.inner.mesh()).map_err(to_py)
}

/// `(S, I)` profiles in the limit of large susceptible diffusivity.
#[pyfunction]
fn limit_ds_infinity(py: Python<'_>, kernel: &PyKernel, d_i: f64, beta: Vec<f64>, gamma: Vec<f64>, n_total: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let r = rates(kernel, beta, gamma)?;
    let p = py.detach(|| equilibria::limit_profile_ds_infinity(&kernel.inner, d_i, &r, n_total)).map_err(to_py)?;
    Ok((list(&p.s), list(&p.i)))
}

/// `(S*, I*)` in the limit of large infected diffusivity; `I*` is a constant.
#[pyfunction]
fn limit_di_infinity(py: Python<'_>, kernel: &PyKernel, d_s: f64, beta: Vec<f64>, gamma: Vec<f64>, n_total: f64) -> PyResult<(Vec<f64>, f64)> {
    let r = rates(kernel, beta, gamma)?;
    let p = py.detach(|| equilibria::limit_profile_di_infinity(&kernel.inner, d_s, &r, n_total)).map_err(to_py)?;
    Ok((list(&p.s_star), p.i_star))
}

/// The full model: kernel, rates, both diffusivities and total population.
#[pyclass(module = "nlsis", name = "Model", frozen)]
struct PyModel {
    inner: ModelParams,
}

fn equilibrium_dict<'py>(py: Python<'py>, eq: &EquilibriumResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("S", list(&eq.s_tilde))?;
    d.set_item("I", list(&eq.i_tilde))?;
    d.set_item("k", eq.k)?;
    d.set_item(
        "kind",
        match eq.kind {
            EquilibriumKind::DiseaseFree => "disease_free",
            EquilibriumKind::Endemic => "endemic",
        },
    )?;
    d.set_item("iterations", eq.iterations)?;
    d.set_item("residual", eq.residual)?;
    Ok(d)
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(kernel: &PyKernel, beta: Vec<f64>, gamma: Vec<f64>, d_s: f64, d_i: f64, n_total: f64) -> PyResult<Self> {
        let r = rates(kernel, beta, gamma)?;
        let inner = ModelParams::new(kernel.inner.clone(), r, d_s, d_i, n_total).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn kernel(&self) -> PyKernel {
        PyKernel { inner: self.inner.kernel().clone() }
    }

    fn lambda_p(&self) -> PyResult<f64> {
        let p = &self.inner;
        spectral::lambda_p_value(p.kernel(), p.d_i(), p.rates()).map_err(to_py)
    }

    /// The endemic steady state when `λ_p < 0`, otherwise the disease-free one.
    fn equilibrium<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let eq = py.detach(|| equilibria::equilibrium(&self.inner)).map_err(to_py)?;
        equilibrium_dict(py, &eq)
    }

    fn disease_free<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        equilibrium_dict(py, &equilibria::disease_free(&self.inner))
    }

    /// Sup-norm of the steady-state equations at `(s, i)`.
    fn residual(&self, s: Vec<f64>, i: Vec<f64>) -> PyResult<f64> {
        equilibria::steady_state_residual(&self.inner, &field(s), &field(i)).map_err(to_py)
    }

    /// Integrates from `(s0, i0)` (or a seeded random state of the right mass)
    /// to `t_end`. Returns sample times, masses and distances plus the final
    /// fields.
    #[pyo3(signature = (t_end, dt = None, s0 = None, i0 = None, seed = 0))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        t_end: f64,
        dt: Option<f64>,
        s0: Option<Vec<f64>>,
        i0: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let p = &self.inner;
        let initial = match (s0, i0) {
            (Some(s), Some(i)) => State::new(field(s), field(i), 0.0).map_err(to_py)?,
            (None, None) => State::random(p.mesh(), p.n_total(), seed),
            _ => return Err(PyValueError::new_err("give both s0 and i0 or neither")),
        };
        let dt = dt.unwrap_or_else(|| dynamics::dt_max(p));
        let traj = py
            .detach(|| {
                let endemic = match equilibria::equilibrium(p)? {
                    eq if eq.kind == EquilibriumKind::Endemic => Some(eq),
                    _ => None,
                };
                let opts = IntegrateOptions { endemic, ..Default::default() };
                dynamics::integrate_to(p, &initial, t_end, dt, &opts)
            })
            .map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("t", traj.samples.iter().map(|s| s.t).collect::<Vec<_>>())?;
        d.set_item("mass", traj.samples.iter().map(|s| s.mass).collect::<Vec<_>>())?;
        d.set_item("dist_dfe", traj.samples.iter().map(|s| s.dist_dfe).collect::<Vec<_>>())?;
        d.set_item("dist_endemic", traj.samples.iter().map(|s| s.dist_endemic).collect::<Vec<_>>())?;
        d.set_item("S", list(&traj.final_state.s))?;
        d.set_item("I", list(&traj.final_state.i))?;
        d.set_item("steps", traj.steps)?;
        Ok(d)
    }

    /// "converged_dfe", "converged_endemic" or "undecided".
    #[pyo3(signature = (horizon, seed = 0))]
    fn classify(&self, py: Python<'_>, horizon: f64, seed: u64) -> PyResult<&'static str> {
        let p = &self.inner;
        let initial = State::random(p.mesh(), p.n_total(), seed);
        let c = py.detach(|| dynamics::classify_longtime(p, &initial, horizon)).map_err(to_py)?;
        Ok(match c.outcome {
            LongTime::ConvergedDfe => "converged_dfe",
            LongTime::ConvergedEndemic => "converged_endemic",
            LongTime::Undecided => "undecided",
        })
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("Model(n={}, d_s={}, d_i={}, n_total={})", p.mesh().len(), p.d_s(), p.d_i(), p.n_total())
    }
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

#[pymodule]
fn nlsis(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(lambda_p, m)?)?;
    m.add_function(wrap_pyfunction!(r0_routes, m)?)?;
    m.add_function(wrap_pyfunction!(find_d_star, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_gap, m)?)?;
    m.add_function(wrap_pyfunction!(limit_both_infinity, m)?)?;
    m.add_function(wrap_pyfunction!(limit_ds_infinity, m)?)?;
    m.add_function(wrap_pyfunction!(limit_di_infinity, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}
