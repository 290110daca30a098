//! Python bindings: model parameters, delay functionals, the interior
//! equilibrium, the method-of-steps integrator and Lyapunov diagnostics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use virosim::config::{DelayConfig, InitSpec, RunConfig};
use virosim::delay::DelaySpec;
use virosim::history::InitialFunction;
use virosim::integrator::integrate;
use virosim::invariants::{in_omega_c, omega_c_bounds, sample_trajectory};
use virosim::lyapunov::{Functional, LyapunovEval, QuadratureConfig};
use virosim::model::StatePoint;
use virosim::runner::{build_phi, resolve_delay};
use virosim::SimConfig;

fn err(e: virosim::Error) -> PyErr {
    match e {
        virosim::Error::ConfigParse { .. } | virosim::Error::InvalidParam { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Model rate constants; defaults are the reference set.
#[pyclass(name = "ModelParams", skip_from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: virosim::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (lam=10.0, d=0.1, k=0.5, k1=0.01, k2=0.05, delta=0.5, p=1.0, n=10.0,
                        c=3.0, q=1.0, beta=0.2, gamma=0.1, g=0.5, b=0.1, omega=0.1, h=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        lam: f64,
        d: f64,
        k: f64,
        k1: f64,
        k2: f64,
        delta: f64,
        p: f64,
        n: f64,
        c: f64,
        q: f64,
        beta: f64,
        gamma: f64,
        g: f64,
        b: f64,
        omega: f64,
        h: f64,
    ) -> PyResult<Self> {
        let inner = virosim::ModelParams {
            lambda: lam,
            d,
            k,
            k1,
            k2,
            delta,
            p,
            n,
            c,
            q,
            beta,
            gamma,
            g,
            b,
            omega,
            h,
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }
    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Delay functional selection.
#[pyclass(name = "Delay", skip_from_py_object)]
#[derive(Clone)]
struct PyDelay {
    inner: DelaySpec,
}

#[pymethods]
impl PyDelay {
    #[staticmethod]
    fn constant(h0: f64) -> Self {
        Self {
            inner: DelaySpec::Constant { h0 },
        }
    }

    #[staticmethod]
    #[pyo3(signature = (h0, a1, a2, center_t, center_v, etamin))]
    fn pointwise_quadratic(
        h0: f64,
        a1: f64,
        a2: f64,
        center_t: f64,
        center_v: f64,
        etamin: f64,
    ) -> Self {
        Self {
            inner: DelaySpec::PointwiseQuadratic {
                h0,
                a1,
                a2,
                center_t,
                center_v,
                etamin,
            },
        }
    }

    #[staticmethod]
    fn reciprocal(hmin: f64, hmax: f64, cv: f64) -> Self {
        Self {
            inner: DelaySpec::Reciprocal { hmin, hmax, cv },
        }
    }

    fn __repr__(&self) -> String {
        format!("Delay({})", self.inner.family_name())
    }
}

/// Interior equilibrium coordinates.
#[pyclass(name = "Equilibrium", skip_from_py_object)]
#[derive(Clone)]
struct PyEquilibrium {
    inner: virosim::Equilibrium,
    residual: f64,
}

#[pymethods]
impl PyEquilibrium {
    #[getter]
    fn that(&self) -> f64 {
        self.inner.that
    }
    #[getter]
    fn tstar_hat(&self) -> f64 {
        self.inner.tstar_hat
    }
    #[getter]
    fn vhat(&self) -> f64 {
        self.inner.vhat
    }
    #[getter]
    fn yhat(&self) -> f64 {
        self.inner.yhat
    }
    #[getter]
    fn ahat(&self) -> f64 {
        self.inner.ahat
    }
    #[getter]
    fn residual(&self) -> f64 {
        self.residual
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64, f64) {
        let s = self.inner.as_state();
        (s.t, s.tstar, s.v, s.y, s.a)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Computes the interior equilibrium; raises if H2 or H3 fails.
#[pyfunction]
fn equilibrium(params: &PyModelParams) -> PyResult<PyEquilibrium> {
    let eq = virosim::equilibrium::equilibrium(&params.inner).map_err(err)?;
    Ok(PyEquilibrium {
        residual: eq.residual(&params.inner),
        inner: eq,
    })
}

/// Invariant-box bounds as a dict (requires k2 > 0).
#[pyfunction]
fn invariant_bounds(
    py: Python<'_>,
    params: &PyModelParams,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let b = omega_c_bounds(&params.inner).map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("tmax", b.tmax)?;
    dict.set_item("tstarmax", b.tstarmax)?;
    dict.set_item("vmax", b.vmax)?;
    dict.set_item("combo_ty", b.combo_ty)?;
    dict.set_item("combo_va", b.combo_va)?;
    Ok(dict.unbind())
}

type TrajTuple = (Vec<f64>, Vec<(f64, f64, f64, f64, f64)>);

fn traj_to_py(traj: &virosim::Trajectory) -> TrajTuple {
    let times = traj.times().to_vec();
    let states = traj
        .states()
        .iter()
        .map(|s| (s.t, s.tstar, s.v, s.y, s.a))
        .collect();
    (times, states)
}

/// Integrates from a constant initial history; returns (times, states).
#[pyfunction]
#[pyo3(signature = (params, delay, init, t_end, dt, fp_tol=1e-12, fp_maxiter=25))]
fn simulate(
    params: &PyModelParams,
    delay: &PyDelay,
    init: (f64, f64, f64, f64, f64),
    t_end: f64,
    dt: f64,
    fp_tol: f64,
    fp_maxiter: usize,
) -> PyResult<TrajTuple> {
    let cfg = SimConfig {
        dt,
        t_end,
        fp_tol,
        fp_maxiter,
        output_stride: 1,
    };
    let phi = InitialFunction::constant(StatePoint::new(
        init.0, init.1, init.2, init.3, init.4,
    ));
    let traj = integrate(&params.inner, &delay.inner, &phi, &cfg).map_err(err)?;
    Ok(traj_to_py(&traj))
}

/// Integrates from the equilibrium shifted by `epsilon` in every coordinate.
#[pyfunction]
#[pyo3(signature = (params, delay, epsilon, t_end, dt))]
fn simulate_perturbed(
    params: &PyModelParams,
    delay: &PyDelay,
    epsilon: f64,
    t_end: f64,
    dt: f64,
) -> PyResult<TrajTuple> {
    let eq = virosim::equilibrium::equilibrium(&params.inner).map_err(err)?;
    let cfg = SimConfig {
        dt,
        t_end,
        ..SimConfig::default()
    };
    let phi = InitialFunction::constant(eq.as_state().add_scaled(
        StatePoint::new(1.0, 1.0, 1.0, 1.0, 1.0),
        epsilon,
    ));
    let traj = integrate(&params.inner, &delay.inner, &phi, &cfg).map_err(err)?;
    Ok(traj_to_py(&traj))
}

/// Lyapunov diagnostics along a perturbed run: rows of
/// `(t, U, D, S, dU_fd, eta, deta_fd)`.
#[pyfunction]
#[pyo3(signature = (params, delay, epsilon, t_end, dt, functional="u1", panels=64))]
#[allow(clippy::too_many_arguments)]
fn lyapunov_series(
    params: &PyModelParams,
    delay: &PyDelay,
    epsilon: f64,
    t_end: f64,
    dt: f64,
    functional: &str,
    panels: usize,
) -> PyResult<Vec<(f64, f64, f64, f64, f64, f64, f64)>> {
    let kind = match functional {
        "u1" => Functional::U1,
        "usdd" => Functional::Sdd,
        other => {
            return Err(PyValueError::new_err(format!(
                "functional must be 'u1' or 'usdd', got {other:?}"
            )))
        }
    };
    let eq = virosim::equilibrium::equilibrium(&params.inner).map_err(err)?;
    let cfg = SimConfig {
        dt,
        t_end,
        ..SimConfig::default()
    };
    let phi = InitialFunction::constant(eq.as_state().add_scaled(
        StatePoint::new(1.0, 1.0, 1.0, 1.0, 1.0),
        epsilon,
    ));
    let traj = integrate(&params.inner, &delay.inner, &phi, &cfg).map_err(err)?;
    let eval =
        LyapunovEval::new(&params.inner, &eq, &delay.inner, QuadratureConfig { panels })
            .map_err(err)?;
    let series = eval.sample_series(&traj, kind, 1).map_err(err)?;
    Ok(series
        .iter()
        .map(|s| (s.t, s.u, s.d, s.s, s.du_fd, s.eta, s.deta_fd))
        .collect())
}

/// Runs a seeded draw inside the invariant box and reports whether the
/// resulting trajectory stayed inside (slack 1e-8).
#[pyfunction]
#[pyo3(signature = (params, delay, seed, t_end, dt))]
fn invariance_run(
    params: &PyModelParams,
    delay: &PyDelay,
    seed: u64,
    t_end: f64,
    dt: f64,
) -> PyResult<bool> {
    let mut cfg = RunConfig {
        params: params.inner,
        ..RunConfig::default()
    };
    cfg.init = InitSpec::RandomOmegaC {
        seed,
        lipschitz_cap: 1.0,
    };
    cfg.delay = DelayConfig::Constant { h0: params.inner.h };
    cfg.sim.dt = dt;
    cfg.sim.t_end = t_end;
    let _ = resolve_delay(&cfg).map_err(err)?; // validates h0 against h
    let phi = build_phi(&cfg).map_err(err)?;
    let traj = integrate(&params.inner, &delay.inner, &phi, &cfg.sim).map_err(err)?;
    let bounds = omega_c_bounds(&params.inner).map_err(err)?;
    Ok(in_omega_c(&sample_trajectory(&traj, 1), &bounds, &params.inner, 1e-8).ok)
}

#[pymodule]
fn virosim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyDelay>()?;
    m.add_class::<PyEquilibrium>()?;
    m.add_function(wrap_pyfunction!(equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(invariant_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_perturbed, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_series, m)?)?;
    m.add_function(wrap_pyfunction!(invariance_run, m)?)?;
    Ok(())
}
