//! Lyapunov functionals along trajectories and their dissipation
//! decompositions `dU/dt = -D + S`.
//!
//! Two functionals are evaluated: the constant-reference form whose history
//! integral runs over the fixed window `[t - eta(phi_hat), t]`, and the
//! state-dependent form whose window is `[t - eta(u_t), t]`. Both share the
//! same instantaneous terms built from `v(x) = x - 1 - ln x`.
//!
//! The `v`-term coefficients carry the equilibrium factors
//! (`Vhat`, `Yhat`, `Ahat`): with them the chain rule produces exactly the
//! dissipation form below, which is what the decomposition tests verify at
//! second order in the sampling step.

use crate::delay::{eval_delay, ConstantSegment, DelaySpec};
use crate::equilibrium::Equilibrium;
use crate::error::{Error, Result};
use crate::history::Trajectory;
use crate::model::{response_f_raw, ModelParams, StatePoint};

/// `v(x) = x - 1 - ln x`: non-negative on `(0, inf)`, zero only at `x = 1`.
pub fn v(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("v(x) needs x > 0, got {x}")));
    }
    Ok(v_raw(x))
}

#[inline]
fn v_raw(x: f64) -> f64 {
    x - 1.0 - x.ln()
}

/// History-integral quadrature settings (composite Simpson).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureConfig {
    pub panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { panels: 64 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.panels < 4 || self.panels % 2 != 0 {
            return Err(Error::InvalidParam {
                name: "quadrature.panels",
                value: self.panels as f64,
                constraint: "even and at least 4",
            });
        }
        Ok(())
    }
}

/// Which functional a diagnostic series evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// Constant-reference window `[t - eta(phi_hat), t]`.
    U1,
    /// State-dependent window `[t - eta(u_t), t]`.
    Sdd,
}

/// One diagnostic sample along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub t: f64,
    pub u: f64,
    /// Dissipation term, non-negative.
    pub d: f64,
    /// Sign-indefinite term.
    pub s: f64,
    /// Centered finite difference of `u` over adjacent knots.
    pub du_fd: f64,
    /// Delay value at the sample.
    pub eta: f64,
    /// Centered finite difference of the delay over adjacent knots.
    pub deta_fd: f64,
}

/// Evaluator carrying the model, equilibrium and delay context.
pub struct LyapunovEval<'a> {
    params: &'a ModelParams,
    eq: Equilibrium,
    delay: &'a DelaySpec,
    delay_hat: f64,
    qcfg: QuadratureConfig,
    e: f64,
    f_hat: f64,
    coef_v: f64,
    coef_y: f64,
    coef_a: f64,
    coef_i: f64,
    bracket_c: f64,
}

impl<'a> LyapunovEval<'a> {
    pub fn new(
        params: &'a ModelParams,
        eq: &Equilibrium,
        delay: &'a DelaySpec,
        qcfg: QuadratureConfig,
    ) -> Result<Self> {
        qcfg.validate()?;
        delay.validate(params.h)?;
        let seg = ConstantSegment {
            state: eq.as_state(),
            h: params.h,
        };
        let delay_hat = eval_delay(delay, &seg)?;
        let e = params.survival();
        let f_hat = eq.f_hat(params);
        let w = params.delta + params.p * eq.yhat;
        Ok(Self {
            params,
            eq: *eq,
            delay,
            delay_hat,
            qcfg,
            e,
            f_hat,
            coef_v: w / (params.n * params.delta) * eq.vhat,
            coef_y: params.p / params.beta * eq.yhat,
            coef_a: params.q / (params.n * params.g) * (1.0 + params.p * eq.yhat / params.delta)
                * eq.ahat,
            coef_i: w * eq.tstar_hat,
            bracket_c: eq.that / (1.0 + params.k1 * eq.that + params.k2 * eq.vhat),
        })
    }

    /// Delay evaluated on the constant equilibrium segment.
    pub fn delay_hat(&self) -> f64 {
        self.delay_hat
    }

    pub fn equilibrium(&self) -> &Equilibrium {
        &self.eq
    }

    /// Delay at the trajectory's history segment at time `t`.
    pub fn eta_at(&self, traj: &Trajectory, t: f64) -> Result<f64> {
        eval_delay(self.delay, &traj.segment_at(t)?)
    }

    /// First summand `(T - That - int_{That}^{T} f_hat / f(theta, Vhat) dtheta) e^{-omega h}`.
    ///
    /// The integrand is `C (1 + k2 Vhat) / theta + C k1` with
    /// `C = That / (1 + k1 That + k2 Vhat)`, so the integral has the closed
    /// form `C (1 + k2 Vhat) ln(T/That) + C k1 (T - That)`.
    fn first_bracket(&self, t_cells: f64) -> Result<f64> {
        if !(t_cells > 0.0) {
            return Err(Error::Domain(format!(
                "first Lyapunov summand needs T > 0, got {t_cells}"
            )));
        }
        let p = self.params;
        let integral = self.bracket_c
            * ((1.0 + p.k2 * self.eq.vhat) * (t_cells / self.eq.that).ln()
                + p.k1 * (t_cells - self.eq.that));
        Ok((t_cells - self.eq.that - integral) * self.e)
    }

    /// The five instantaneous summands.
    fn pointwise_terms(&self, s: &StatePoint) -> Result<f64> {
        let eq = &self.eq;
        Ok(self.first_bracket(s.t)?
            + eq.tstar_hat * v(s.tstar / eq.tstar_hat)?
            + self.coef_v * v(s.v / eq.vhat)?
            + self.coef_y * v(s.y / eq.yhat)?
            + self.coef_a * v(s.a / eq.ahat)?)
    }

    /// Composite Simpson of `v(f(T(theta), V(theta)) / f_hat)` over `[a, b]`.
    fn history_integral(&self, traj: &Trajectory, a: f64, b: f64) -> Result<f64> {
        let n = self.qcfg.panels;
        let w = (b - a) / n as f64;
        let mut acc = 0.0;
        for j in 0..=n {
            let theta = (a + w * j as f64).min(b); // rounding must not leave the domain
            let u = traj.eval(theta)?;
            let ratio = response_f_raw(u.t, u.v, self.params) / self.f_hat;
            let coeff = if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += coeff * v(ratio)?;
        }
        Ok(acc * w / 3.0)
    }

    /// Functional with the constant-reference history window.
    pub fn u1(&self, traj: &Trajectory, t: f64) -> Result<f64> {
        let s = traj.eval(t)?;
        Ok(self.pointwise_terms(&s)?
            + self.coef_i * self.history_integral(traj, t - self.delay_hat, t)?)
    }

    /// Functional with the state-dependent history window.
    pub fn u_sdd(&self, traj: &Trajectory, t: f64) -> Result<f64> {
        let s = traj.eval(t)?;
        let eta = self.eta_at(traj, t)?;
        Ok(self.pointwise_terms(&s)? + self.coef_i * self.history_integral(traj, t - eta, t)?)
    }

    /// Dissipation term with the delayed response read at `t - delayed_at`.
    fn d_general(&self, traj: &Trajectory, t: f64, delayed_at: f64) -> Result<f64> {
        let p = self.params;
        let eq = &self.eq;
        let s = traj.eval(t)?;
        let ud = traj.eval(t - delayed_at)?;
        let f_d = response_f_raw(ud.t, ud.v, p);
        let f_t_vhat = response_f_raw(s.t, eq.vhat, p);
        let f_t_v = response_f_raw(s.t, s.v, p);
        if !(s.t > 0.0 && s.tstar > 0.0 && s.v > 0.0) {
            return Err(Error::Domain(format!(
                "dissipation term needs positive T, T*, V at t = {t}"
            )));
        }

        let quad_t = (s.t - eq.that).powi(2) * self.e * p.d * (1.0 + p.k2 * eq.vhat)
            / (s.t * (1.0 + p.k1 * eq.that + p.k2 * eq.vhat));
        let quad_v = (s.v - eq.vhat).powi(2) * self.coef_i * p.k2 * (1.0 + p.k1 * s.t)
            / (eq.vhat
                * (1.0 + p.k1 * s.t + p.k2 * eq.vhat)
                * (1.0 + p.k1 * s.t + p.k2 * s.v));
        let v_terms = v(self.f_hat / f_t_vhat)?
            + v(s.tstar * eq.vhat / (eq.tstar_hat * s.v))?
            + v((s.v / eq.vhat) * f_t_vhat / f_t_v)?
            + v((eq.tstar_hat / s.tstar) * f_d / self.f_hat)?;
        Ok(quad_t + quad_v + self.coef_i * v_terms)
    }

    /// Dissipation of the constant-reference decomposition.
    pub fn d1(&self, traj: &Trajectory, t: f64) -> Result<f64> {
        self.d_general(traj, t, self.delay_hat)
    }

    /// Dissipation of the state-dependent decomposition.
    pub fn d_sdd(&self, traj: &Trajectory, t: f64) -> Result<f64> {
        let eta = self.eta_at(traj, t)?;
        self.d_general(traj, t, eta)
    }

    /// Sign-indefinite term of the constant-reference decomposition:
    /// the delayed-response mismatch between the state-dependent and the
    /// equilibrium delay.
    pub fn s1(&self, traj: &Trajectory, t: f64) -> Result<f64> {
        let s = traj.eval(t)?;
        if !(s.tstar > 0.0) {
            return Err(Error::Domain(format!("S term needs T* > 0 at t = {t}")));
        }
        let eta = self.eta_at(traj, t)?;
        let u_eta = traj.eval(t - eta)?;
        let u_hat = traj.eval(t - self.delay_hat)?;
        let f_eta = response_f_raw(u_eta.t, u_eta.v, self.params);
        let f_hat_delay = response_f_raw(u_hat.t, u_hat.v, self.params);
        Ok(self.e * (1.0 - self.eq.tstar_hat / s.tstar) * (f_eta - f_hat_delay))
    }

    /// Sign-indefinite term of the state-dependent decomposition: the moving
    /// history window contributes its boundary value times the delay's rate
    /// of change, `(delta + p Yhat) Tstar_hat v(f(t - eta)/f_hat) deta/dt`.
    pub fn s_sdd(&self, traj: &Trajectory, t: f64, deta_dt: f64) -> Result<f64> {
        let eta = self.eta_at(traj, t)?;
        let ud = traj.eval(t - eta)?;
        let ratio = response_f_raw(ud.t, ud.v, self.params) / self.f_hat;
        Ok(self.coef_i * v(ratio)? * deta_dt)
    }

    /// Diagnostic series over the trajectory knots from `t0 + h` on, thinned
    /// by `stride`. Finite differences use the immediate knot neighbors.
    pub fn sample_series(
        &self,
        traj: &Trajectory,
        functional: Functional,
        stride: usize,
    ) -> Result<Vec<LyapunovSample>> {
        let stride = stride.max(1);
        let times = traj.times();
        let n = times.len();
        if n < 3 {
            return Ok(Vec::new());
        }
        let t_min = traj.t0() + traj.max_delay();
        let i_first = times.partition_point(|&t| t < t_min).max(1);
        if i_first + 1 >= n {
            return Ok(Vec::new());
        }

        // u and eta at every knot in the closed range [i_first - 1, n - 1]
        let mut u_vals = vec![0.0; n];
        let mut etas = vec![0.0; n];
        for i in (i_first - 1)..n {
            let t = times[i];
            etas[i] = self.eta_at(traj, t)?;
            u_vals[i] = match functional {
                Functional::U1 => self.u1(traj, t)?,
                Functional::Sdd => self.u_sdd(traj, t)?,
            };
        }

        let mut out = Vec::new();
        let mut i = i_first;
        while i + 1 < n {
            let t = times[i];
            let span = times[i + 1] - times[i - 1];
            let du_fd = (u_vals[i + 1] - u_vals[i - 1]) / span;
            let deta_fd = (etas[i + 1] - etas[i - 1]) / span;
            let (d, s) = match functional {
                Functional::U1 => (self.d1(traj, t)?, self.s1(traj, t)?),
                Functional::Sdd => (self.d_sdd(traj, t)?, self.s_sdd(traj, t, deta_fd)?),
            };
            out.push(LyapunovSample {
                t,
                u: u_vals[i],
                d,
                s,
                du_fd,
                eta: etas[i],
                deta_fd,
            });
            i += stride;
        }
        Ok(out)
    }
}

/// Both sides of the saturation identity relating the response ratios to the
/// explicit quadratic remainder in `V`:
/// `V/Vhat - f(T,V)/f(T,Vhat) + 1 - (V/Vhat) f(T,Vhat)/f(T,V)`
/// against `(V - Vhat)^2 k2 (1 + k1 T) / (Vhat (1+k1 T+k2 Vhat)(1+k1 T+k2 V))`.
pub fn identity_bd(
    t_cells: f64,
    virions: f64,
    params: &ModelParams,
    eq: &Equilibrium,
) -> (f64, f64) {
    let vh = eq.vhat;
    if params.k2 == 0.0 {
        // response linear in V: the ratio terms telescope to zero exactly
        let lhs = virions / vh - virions / vh + 1.0 - 1.0;
        return (lhs, 0.0);
    }
    let f_tv = response_f_raw(t_cells, virions, params);
    let f_tvh = response_f_raw(t_cells, vh, params);
    let lhs = virions / vh - f_tv / f_tvh + 1.0 - (virions / vh) * f_tvh / f_tv;
    let rhs = (virions - vh).powi(2) * params.k2 * (1.0 + params.k1 * t_cells)
        / (vh * (1.0 + params.k1 * t_cells + params.k2 * vh)
            * (1.0 + params.k1 * t_cells + params.k2 * virions));
    (lhs, rhs)
}

/// Both sides of the logarithm split: `ln` of the delayed-response ratio
/// against the sum of the four logarithms it telescopes into.
pub fn log_split_check(
    t: f64,
    traj: &Trajectory,
    params: &ModelParams,
    eq: &Equilibrium,
    delay_hat: f64,
) -> Result<(f64, f64)> {
    let s = traj.eval(t)?;
    let ud = traj.eval(t - delay_hat)?;
    let f_hat = eq.f_hat(params);
    let f_d = response_f_raw(ud.t, ud.v, params);
    let f_tv = response_f_raw(s.t, s.v, params);
    let f_tvh = response_f_raw(s.t, eq.vhat, params);
    let args = [
        f_hat / f_tvh,
        s.tstar * eq.vhat / (eq.tstar_hat * s.v),
        (s.v / eq.vhat) * f_tvh / f_tv,
        (eq.tstar_hat / s.tstar) * f_d / f_hat,
    ];
    for a in args {
        if !(a > 0.0) {
            return Err(Error::Domain(format!("log split needs positive ratios, got {a}")));
        }
    }
    if !(f_d > 0.0 && f_tv > 0.0) {
        return Err(Error::Domain("log split needs positive responses".into()));
    }
    let lhs = (f_d / f_tv).ln();
    let rhs = args.iter().map(|a| a.ln()).sum();
    Ok((lhs, rhs))
}

/// Upper bounds for `sup |df/dT|` and `sup |df/dV|` over a rectangle, by grid
/// sampling of the closed-form partials with a 1.05 safety factor.
pub fn lipschitz_f_bounds(
    params: &ModelParams,
    t_range: (f64, f64),
    v_range: (f64, f64),
) -> (f64, f64) {
    lipschitz_f_bounds_grid(params, t_range, v_range, 256)
}

/// Grid-resolution-exposed variant, for refinement self-consistency checks.
pub fn lipschitz_f_bounds_grid(
    params: &ModelParams,
    t_range: (f64, f64),
    v_range: (f64, f64),
    grid: usize,
) -> (f64, f64) {
    let grid = grid.max(2);
    let (mut sup_t, mut sup_v) = (0.0_f64, 0.0_f64);
    for i in 0..=grid {
        let t = t_range.0 + (t_range.1 - t_range.0) * i as f64 / grid as f64;
        for j in 0..=grid {
            let v = v_range.0 + (v_range.1 - v_range.0) * j as f64 / grid as f64;
            let den = 1.0 + params.k1 * t + params.k2 * v;
            let df_dt = params.k * v * (1.0 + params.k2 * v) / (den * den);
            let df_dv = params.k * t * (1.0 + params.k1 * t) / (den * den);
            sup_t = sup_t.max(df_dt.abs());
            sup_v = sup_v.max(df_dv.abs());
        }
    }
    (sup_t * 1.05, sup_v * 1.05)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::equilibrium;
    use crate::history::InitialFunction;
    use crate::integrator::{integrate, SimConfig};

    fn setup() -> (ModelParams, Equilibrium) {
        let p = ModelParams::p0();
        let eq = equilibrium(&p).unwrap();
        (p, eq)
    }

    fn pq_delay(eq: &Equilibrium) -> DelaySpec {
        DelaySpec::PointwiseQuadratic {
            h0: 0.5,
            a1: 0.01,
            a2: 0.01,
            center_t: eq.that,
            center_v: eq.vhat,
            etamin: 0.05,
        }
    }

    fn perturbed_run(p: &ModelParams, eq: &Equilibrium, delay: &DelaySpec, t_end: f64) -> Trajectory {
        let phi = InitialFunction::constant(eq.as_state().add_scaled(
            StatePoint::new(1.0, 1.0, 1.0, 1.0, 1.0),
            1e-2,
        ));
        let cfg = SimConfig {
            t_end,
            ..SimConfig::default()
        };
        integrate(p, delay, &phi, &cfg).unwrap()
    }

    #[test]
    fn v_examples() {
        assert_eq!(v(1.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((v(e).unwrap() - (e - 2.0)).abs() < 1e-15);
        assert!(v(0.0).is_err());
        assert!(v(-2.0).is_err());
    }

    /// Two-sided quadratic envelope of v near 1. The display in the source
    /// material orders the sides the other way; the true pointwise ordering,
    /// fixed here by direct evaluation, has `(x-1)^2 / (2 (1+delta))` below
    /// and `(x-1)^2 / (2 (1-delta))` above.
    #[test]
    fn v_quadratic_bracketing() {
        let delta = 0.1;
        for i in 0..100 {
            let x = 0.9001 + 0.1998 * i as f64 / 99.0;
            let vx = v(x).unwrap();
            let lo = (x - 1.0).powi(2) / (2.0 * (1.0 + delta));
            let hi = (x - 1.0).powi(2) / (2.0 * (1.0 - delta));
            assert!(lo <= vx + 1e-16 && vx <= hi + 1e-16, "x = {x}");
        }
    }

    #[test]
    fn u1_vanishes_at_equilibrium() {
        let (p, eq) = setup();
        let delay = pq_delay(&eq);
        let phi = InitialFunction::constant(eq.as_state());
        let cfg = SimConfig {
            t_end: 3.0,
            ..SimConfig::default()
        };
        let traj = integrate(&p, &delay, &phi, &cfg).unwrap();
        let eval = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig::default()).unwrap();
        assert_eq!(eval.delay_hat(), 0.5); // quadratic centered at the equilibrium
        for t in [1.0, 2.0, 3.0] {
            assert!(eval.u1(&traj, t).unwrap().abs() < 1e-10);
            assert!(eval.d1(&traj, t).unwrap().abs() < 1e-10);
            assert!(eval.s1(&traj, t).unwrap().abs() < 1e-10);
            assert!(eval.u_sdd(&traj, t).unwrap().abs() < 1e-10);
            assert!(eval.d_sdd(&traj, t).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn u1_positive_off_equilibrium() {
        let (p, eq) = setup();
        let delay = pq_delay(&eq);
        let traj = perturbed_run(&p, &eq, &delay, 2.0);
        let eval = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig::default()).unwrap();
        assert!(eval.u1(&traj, 1.0).unwrap() > 0.0);
        assert!(eval.d1(&traj, 1.0).unwrap() > 0.0);
    }

    /// Closed-form antiderivative of the first summand against a Simpson
    /// oracle on the same integrand.
    #[test]
    fn first_bracket_matches_quadrature() {
        let (p, eq) = setup();
        let delay = pq_delay(&eq);
        let eval = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig::default()).unwrap();
        let f_hat = eq.f_hat(&p);
        for t_cells in [10.0, 30.0, 61.0, 62.5, 90.0] {
            let n = 2000;
            let w = (t_cells - eq.that) / n as f64;
            let mut acc = 0.0;
            for j in 0..=n {
                let theta = eq.that + w * j as f64;
                let coeff = if j == 0 || j == n {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += coeff * f_hat / response_f_raw(theta, eq.vhat, &p);
            }
            let integral = acc * w / 3.0;
            let oracle = (t_cells - eq.that - integral) * p.survival();
            let got = eval.first_bracket(t_cells).unwrap();
            assert!(
                (got - oracle).abs() < 1e-9 * oracle.abs().max(1e-6),
                "T = {t_cells}: {got} vs {oracle}"
            );
            assert!(got >= -1e-12, "first bracket must be non-negative");
        }
    }

    #[test]
    fn quadrature_self_convergence() {
        let (p, eq) = setup();
        let delay = pq_delay(&eq);
        let traj = perturbed_run(&p, &eq, &delay, 3.0);
        let coarse = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig { panels: 64 }).unwrap();
        let fine = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig { panels: 128 }).unwrap();
        let a = coarse.u1(&traj, 2.0).unwrap();
        let b = fine.u1(&traj, 2.0).unwrap();
        assert!(((a - b) / b.abs().max(1e-12)).abs() < 1e-8);
    }

    #[test]
    fn s1_zero_for_constant_delay() {
        let (p, eq) = setup();
        let delay = DelaySpec::constant(p.h);
        let traj = perturbed_run(&p, &eq, &delay, 3.0);
        let eval = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig::default()).unwrap();
        for t in [1.5, 2.0, 2.5] {
            assert_eq!(eval.s1(&traj, t).unwrap(), 0.0);
        }
    }

    /// With a constant delay the state-dependent functional reduces to the
    /// constant-reference one.
    #[test]
    fn sdd_reduces_to_u1_for_constant_delay() {
        let (p, eq) = setup();
        let delay = DelaySpec::constant(p.h);
        let traj = perturbed_run(&p, &eq, &delay, 4.0);
        let eval = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig::default()).unwrap();
        for t in [1.5, 2.5, 3.5] {
            let a = eval.u1(&traj, t).unwrap();
            let b = eval.u_sdd(&traj, t).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            assert_eq!(eval.s_sdd(&traj, t, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn d1_k2_zero_drops_quadratic_v_term() {
        // with k2 = 0 the second quadratic summand vanishes identically:
        // recompute the remaining terms by hand and compare
        let mut p = ModelParams::p0();
        p.k2 = 0.0;
        let eq = equilibrium(&p).unwrap();
        let delay = DelaySpec::constant(p.h);
        let phi = InitialFunction::constant(eq.as_state().add_scaled(
            StatePoint::new(1.0, 0.05, 0.02, 0.5, 0.5),
            1.0,
        ));
        let cfg = SimConfig {
            t_end: 3.0,
            ..SimConfig::default()
        };
        let traj = integrate(&p, &delay, &phi, &cfg).unwrap();
        let eval = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig::default()).unwrap();
        let t = 2.0;
        let s = traj.eval(t).unwrap();
        let ud = traj.eval(t - eval.delay_hat()).unwrap();
        let f_hat = eq.f_hat(&p);
        let w = p.delta + p.p * eq.yhat;
        let quad_t = (s.t - eq.that).powi(2) * p.survival() * p.d
            / (s.t * (1.0 + p.k1 * eq.that));
        let v_terms = v(f_hat / response_f_raw(s.t, eq.vhat, &p)).unwrap()
            + v(s.tstar * eq.vhat / (eq.tstar_hat * s.v)).unwrap()
            + v((s.v / eq.vhat) * response_f_raw(s.t, eq.vhat, &p) / response_f_raw(s.t, s.v, &p))
                .unwrap()
            + v((eq.tstar_hat / s.tstar) * response_f_raw(ud.t, ud.v, &p) / f_hat).unwrap();
        let manual = quad_t + w * eq.tstar_hat * v_terms;
        let got = eval.d1(&traj, t).unwrap();
        assert!((got - manual).abs() < 1e-12 * manual.abs().max(1.0));
    }

    #[test]
    fn identity_bd_examples() {
        let (p, eq) = setup();
        // V = Vhat: both sides vanish
        let (lhs, rhs) = identity_bd(40.0, eq.vhat, &p, &eq);
        assert!(lhs.abs() < 1e-14 && rhs.abs() < 1e-14);
        // k2 = 0: both sides vanish for all T, V
        let mut p2 = p;
        p2.k2 = 0.0;
        let (lhs, rhs) = identity_bd(40.0, 7.0, &p2, &eq);
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn log_split_at_equilibrium_and_random() {
        let (p, eq) = setup();
        let delay = pq_delay(&eq);
        let phi = InitialFunction::constant(eq.as_state());
        let cfg = SimConfig {
            t_end: 2.0,
            ..SimConfig::default()
        };
        let traj = integrate(&p, &delay, &phi, &cfg).unwrap();
        let (lhs, rhs) = log_split_check(1.5, &traj, &p, &eq, 0.5).unwrap();
        assert!(lhs.abs() < 1e-12 && rhs.abs() < 1e-12);

        let traj2 = perturbed_run(&p, &eq, &delay, 3.0);
        let (lhs, rhs) = log_split_check(2.0, &traj2, &p, &eq, 0.5).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_bounds_cases() {
        let mut p = ModelParams::p0();
        p.k = 0.0;
        assert_eq!(lipschitz_f_bounds(&p, (0.0, 10.0), (0.0, 10.0)), (0.0, 0.0));

        let mut p = ModelParams::p0();
        p.k1 = 0.0;
        p.k2 = 0.0;
        let (l1, l2) = lipschitz_f_bounds(&p, (0.0, 2.0), (0.0, 3.0));
        // bilinear partials k V and k T peak at the far corner
        assert!(l1 >= 3.0 * p.k && l1 <= 3.0 * p.k * 1.05 + 1e-12);
        assert!(l2 >= 2.0 * p.k && l2 <= 2.0 * p.k * 1.05 + 1e-12);

        // doubling the grid changes the P0 box value by < 1%
        let p = ModelParams::p0();
        let a = lipschitz_f_bounds_grid(&p, (0.0, 100.0), (0.0, 3016.0), 256);
        let b = lipschitz_f_bounds_grid(&p, (0.0, 100.0), (0.0, 3016.0), 512);
        assert!((a.0 - b.0).abs() / b.0 < 0.01);
        assert!((a.1 - b.1).abs() / b.1 < 0.01);
    }

    /// Pointwise-quadratic delays depend only on the current state, so the
    /// delay difference obeys the quadratic envelope; combined with the
    /// response and trajectory Lipschitz constants this bounds the
    /// sign-indefinite term.
    #[test]
    fn s1_bound_from_lipschitz_estimates() {
        let (p, eq) = setup();
        let delay = pq_delay(&eq);
        let traj = perturbed_run(&p, &eq, &delay, 6.0);
        let eval = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig::default()).unwrap();
        let c_eta = delay.c_eta_bound().unwrap();
        let (l1, l2) = lipschitz_f_bounds(&p, (0.0, 100.0), (0.0, 3100.0));
        // trajectory slope estimates over the window
        let (mut lt, mut lv) = (0.0_f64, 0.0_f64);
        for w in traj.times().windows(2).zip(traj.states().windows(2)) {
            let (ts, ys) = w;
            let dt = ts[1] - ts[0];
            lt = lt.max((ys[1].t - ys[0].t).abs() / dt);
            lv = lv.max((ys[1].v - ys[0].v).abs() / dt);
        }
        let (lt, lv) = (lt * 1.05, lv * 1.05);
        let e = p.survival();
        let mut t = 2.0;
        while t <= 5.0 {
            let s = traj.eval(t).unwrap();
            let s1 = eval.s1(&traj, t).unwrap();
            let bound = e
                * (1.0 - eq.tstar_hat / s.tstar).abs()
                * (l1 * lt + l2 * lv)
                * c_eta
                * ((s.t - eq.that).powi(2) + (s.v - eq.vhat).powi(2));
            assert!(
                s1.abs() <= bound + 1e-15,
                "t = {t}: |S1| = {} vs bound {bound}",
                s1.abs()
            );
            t += 0.05;
        }
    }

    /// Series bookkeeping: D stays non-negative, eta matches the delay
    /// family, and the CSV fields are finite.
    #[test]
    fn sample_series_shape() {
        let (p, eq) = setup();
        let delay = pq_delay(&eq);
        let traj = perturbed_run(&p, &eq, &delay, 4.0);
        let eval = LyapunovEval::new(&p, &eq, &delay, QuadratureConfig::default()).unwrap();
        for kind in [Functional::U1, Functional::Sdd] {
            let series = eval.sample_series(&traj, kind, 1).unwrap();
            assert!(!series.is_empty());
            assert!(series[0].t >= 1.0);
            for s in &series {
                assert!(s.d >= 0.0);
                assert!((0.05..=1.0).contains(&s.eta));
                assert!(s.u.is_finite() && s.s.is_finite() && s.du_fd.is_finite());
                // a vanishing dissipation pins the state ratios at one
                if s.d < 1e-10 {
                    let u = traj.eval(s.t).unwrap();
                    assert!((u.t / eq.that - 1.0).abs() < 1e-5);
                    assert!((u.v / eq.vhat - 1.0).abs() < 1e-5);
                    assert!((u.tstar / eq.tstar_hat - 1.0).abs() < 1e-5);
                }
            }
        }
    }
}
