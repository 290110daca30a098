//! Method-of-steps integration with classical RK4, cubic Hermite dense output
//! and fixed-point resolution of delayed lookups that land inside the step
//! being computed.

use std::cell::Cell;

use crate::delay::{eval_delay, DelaySpec, Segment};
use crate::error::{Error, Result};
use crate::history::{hermite_step, InitialFunction, Trajectory};
use crate::model::{rhs_raw, ModelParams, StateDerivative, StatePoint};

/// Fixed-step integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Step size.
    pub dt: f64,
    /// Final time (integration runs on `[0, t_end]`).
    pub t_end: f64,
    /// Fixed-point tolerance for in-step (overlap) delayed lookups, relative.
    pub fp_tol: f64,
    /// Fixed-point iteration cap.
    pub fp_maxiter: usize,
    /// Knots per CSV row on export.
    pub output_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            t_end: 100.0,
            fp_tol: 1e-12,
            fp_maxiter: 25,
            output_stride: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParam {
                name: "sim.dt",
                value: self.dt,
                constraint: "strictly positive",
            });
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParam {
                name: "sim.t_end",
                value: self.t_end,
                constraint: "non-negative",
            });
        }
        if !(self.fp_tol > 0.0) {
            return Err(Error::InvalidParam {
                name: "sim.fp_tol",
                value: self.fp_tol,
                constraint: "strictly positive",
            });
        }
        if self.fp_maxiter < 1 {
            return Err(Error::InvalidParam {
                name: "sim.fp_maxiter",
                value: self.fp_maxiter as f64,
                constraint: "at least 1",
            });
        }
        Ok(())
    }

    /// Steps larger than `h/4` make delayed lookups routinely provisional;
    /// recommended, not enforced.
    pub fn step_size_warning(&self, h: f64) -> Option<String> {
        (self.dt > h / 4.0).then(|| {
            format!(
                "dt = {} exceeds h/4 = {}; delayed lookups will often hit the provisional step extension",
                self.dt,
                h / 4.0
            )
        })
    }
}

/// Completed history plus the provisional Hermite extension of the current step.
struct ExtensionView<'a> {
    traj: &'a Trajectory,
    t_start: f64,
    t_next: f64,
    y0: StatePoint,
    d0: StateDerivative,
    y1: StatePoint,
    d1: StateDerivative,
}

impl ExtensionView<'_> {
    fn state_at(&self, t: f64) -> StatePoint {
        if t <= self.t_start {
            self.traj.eval_unchecked(t)
        } else {
            hermite_step(
                self.t_start,
                self.t_next,
                &self.y0,
                &self.d0,
                &self.y1,
                &self.d1,
                t.min(self.t_next),
            )
        }
    }
}

/// Segment view at a stage time: `theta = 0` exposes the stage state, the past
/// comes from completed history or the provisional extension. A touch of the
/// provisional region is recorded so the step knows it must iterate.
struct StageSegment<'a, 'b> {
    ext: &'b ExtensionView<'a>,
    at: f64,
    now: StatePoint,
    touched: &'b Cell<bool>,
}

impl Segment for StageSegment<'_, '_> {
    fn value(&self, theta: f64) -> StatePoint {
        if theta >= 0.0 {
            return self.now;
        }
        let t = self.at + theta;
        if t > self.ext.t_start {
            self.touched.set(true);
        }
        self.ext.state_at(t)
    }
    fn max_delay(&self) -> f64 {
        self.ext.traj.max_delay()
    }
}

/// Initial function viewed as the history segment at `t = 0`.
pub struct InitialSegment<'a> {
    pub phi: &'a InitialFunction,
    pub h: f64,
}

impl Segment for InitialSegment<'_> {
    fn value(&self, theta: f64) -> StatePoint {
        self.phi.eval(theta.clamp(-self.h, 0.0))
    }
    fn max_delay(&self) -> f64 {
        self.h
    }
}

fn max_rel_diff(a: &StatePoint, b: &StatePoint) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Integrates the delay system on `[0, t_end]` by the method of steps.
///
/// Each classical RK4 stage reads its delayed pair `(T(s - tau), V(s - tau))`,
/// with `tau` evaluated on the stage's history segment, from the dense output.
/// When a lookup lands past the last completed knot the step is closed by
/// Picard iteration on its own Hermite extension until successive endpoints
/// agree to `fp_tol` in max-relative norm; running out of iterations is a
/// [`Error::StepFailure`], a non-finite state a [`Error::Blowup`].
pub fn integrate(
    params: &ModelParams,
    delay: &DelaySpec,
    phi: &InitialFunction,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    params.validate()?;
    cfg.validate()?;
    delay.validate(params.h)?;

    let h = params.h;
    let y0 = phi.eval(0.0);
    if !y0.is_finite() {
        return Err(Error::Blowup { t: 0.0 });
    }
    let seg0 = InitialSegment { phi, h };
    let tau0 = eval_delay(delay, &seg0)?;
    let u0 = phi.eval(-tau0);
    let dy0 = rhs_raw(&y0, u0.t, u0.v, params);
    let mut traj = Trajectory::with_initial(phi.clone(), 0.0, h, y0, dy0);

    let n_steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut y = y0;
    let mut dy = dy0;

    for i in 0..n_steps {
        let t = i as f64 * cfg.dt;
        let t1 = (i + 1) as f64 * cfg.dt;
        let dt = cfg.dt;

        let mut y1 = y.add_scaled(dy, dt); // Euler predictor
        let mut dy1 = dy;
        let mut converged = false;
        let mut residual = f64::INFINITY;

        for iter in 0..cfg.fp_maxiter {
            let ext = ExtensionView {
                traj: &traj,
                t_start: t,
                t_next: t1,
                y0: y,
                d0: dy,
                y1,
                d1: dy1,
            };
            let touched = Cell::new(false);

            let delayed = |s: f64, stage: StatePoint| -> Result<(f64, f64)> {
                if !stage.is_finite() {
                    return Err(Error::Blowup { t: s });
                }
                let seg = StageSegment {
                    ext: &ext,
                    at: s,
                    now: stage,
                    touched: &touched,
                };
                let tau = eval_delay(delay, &seg)?;
                if !tau.is_finite() {
                    return Err(Error::DelayRange(format!(
                        "delay evaluated to {tau} at t = {s}"
                    )));
                }
                let td = s - tau;
                if td > t {
                    touched.set(true);
                }
                let u = if tau == 0.0 { stage } else { ext.state_at(td) };
                Ok((u.t, u.v))
            };

            let pass = || -> Result<(StatePoint, StateDerivative)> {
                let (td, vd) = delayed(t, y)?;
                let k1 = rhs_raw(&y, td, vd, params);
                let mid = t + 0.5 * dt;
                let y_k2 = y.add_scaled(k1, 0.5 * dt);
                let (td, vd) = delayed(mid, y_k2)?;
                let k2 = rhs_raw(&y_k2, td, vd, params);
                let y_k3 = y.add_scaled(k2, 0.5 * dt);
                let (td, vd) = delayed(mid, y_k3)?;
                let k3 = rhs_raw(&y_k3, td, vd, params);
                let y_k4 = y.add_scaled(k3, dt);
                let (td, vd) = delayed(t1, y_k4)?;
                let k4 = rhs_raw(&y_k4, td, vd, params);
                let y1_new = y.add_scaled(
                    k1.add(k2.scaled(2.0)).add(k3.scaled(2.0)).add(k4),
                    dt / 6.0,
                );
                if !y1_new.is_finite() {
                    return Err(Error::Blowup { t: t1 });
                }
                let (td, vd) = delayed(t1, y1_new)?;
                let dy1_new = rhs_raw(&y1_new, td, vd, params);
                Ok((y1_new, dy1_new))
            };

            let (y1_new, dy1_new) = match pass() {
                Ok(res) => res,
                // a diverging overlap iteration, not the flow itself
                Err(_) if touched.get() || iter > 0 => {
                    return Err(Error::StepFailure {
                        t: t1,
                        residual,
                        iters: iter + 1,
                    });
                }
                Err(e) => return Err(e),
            };

            residual = max_rel_diff(&y1_new, &y1);
            y1 = y1_new;
            dy1 = dy1_new;

            if !touched.get() || residual < cfg.fp_tol {
                converged = true;
                break;
            }
        }

        if !converged {
            return Err(Error::StepFailure {
                t: t1,
                residual,
                iters: cfg.fp_maxiter,
            });
        }
        if !y1.is_finite() || !dy1.is_finite() {
            return Err(Error::Blowup { t: t1 });
        }
        traj.push_knot(t1, y1, dy1);
        y = y1;
        dy = dy1;
    }
    Ok(traj)
}

/// Residual of the compatibility condition `phi'(0) = F(phi)` that decides
/// whether the continuously-differentiable solution framework applies to a
/// run. The derivative is a one-sided finite difference with step `1e-6 h`.
pub fn check_compatibility(
    phi: &InitialFunction,
    params: &ModelParams,
    delay: &DelaySpec,
) -> Result<f64> {
    params.validate()?;
    delay.validate(params.h)?;
    let h = params.h;
    let step = 1e-6 * h;
    let at0 = phi.eval(0.0);
    let before = phi.eval(-step);
    let phidot = at0.add(before.scaled(-1.0)).scaled(1.0 / step);

    let seg = InitialSegment { phi, h };
    let tau = eval_delay(delay, &seg)?;
    let u = phi.eval(-tau);
    let f = rhs_raw(&at0, u.t, u.v, params);
    Ok(phidot.max_abs_diff(&f))
}
