//! Forward-invariant set membership, absorbing-set entry, a Gronwall-type
//! runtime bound and the integral-representation cross-check of the
//! integrator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::delay::{eval_delay, DelaySpec};
use crate::error::{Error, Result};
use crate::history::{InitialFunction, Trajectory};
use crate::model::{response_f_raw, ModelParams, StatePoint};

/// Upper bounds of the invariant box: componentwise caps on `T`, `T*`, `V`
/// plus caps on the combinations `T* + (p/beta) Y` and `V + (q/g) A`.
/// Defined only for `k2 > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantBounds {
    pub tmax: f64,
    pub tstarmax: f64,
    pub vmax: f64,
    pub combo_ty: f64,
    pub combo_va: f64,
}

/// Builds the invariant box bounds from the model parameters.
pub fn omega_c_bounds(params: &ModelParams) -> Result<InvariantBounds> {
    params.validate()?;
    if !(params.k2 > 0.0) {
        return Err(Error::NeedsSaturation {
            what: "invariant box bounds",
        });
    }
    let e = params.survival();
    let tmax = params.lambda / params.d;
    let tstarmax = params.k * params.lambda * e / (params.d * params.k2 * params.delta);
    let vmax = params.n * params.k * params.lambda * e / (params.c * params.d * params.k2);
    let combo_ty = params.k.powi(2) * params.lambda.powi(2) * (e * e)
        / (params.d.powi(2) * params.c * params.k2 * params.delta.min(params.gamma));
    let combo_va = params.n * params.k * params.lambda * e
        / (params.d * params.k2 * params.c.min(params.b));
    Ok(InvariantBounds {
        tmax,
        tstarmax,
        vmax,
        combo_ty,
        combo_va,
    })
}

/// Which membership condition a sample violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    NonNegativeT,
    NonNegativeTstar,
    NonNegativeV,
    NonNegativeY,
    NonNegativeA,
    UpperT,
    UpperTstar,
    UpperV,
    ComboTy,
    ComboVa,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::NonNegativeT => "T >= 0",
            Condition::NonNegativeTstar => "Tstar >= 0",
            Condition::NonNegativeV => "V >= 0",
            Condition::NonNegativeY => "Y >= 0",
            Condition::NonNegativeA => "A >= 0",
            Condition::UpperT => "T <= lambda/d",
            Condition::UpperTstar => "Tstar <= cap",
            Condition::UpperV => "V <= cap",
            Condition::ComboTy => "Tstar + (p/beta) Y <= cap",
            Condition::ComboVa => "V + (q/g) A <= cap",
        }
    }
}

/// First failing sample of a membership sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub condition: Condition,
    /// Amount by which the condition is exceeded (positive).
    pub margin: f64,
}

/// Result of a membership check over sampled function values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipReport {
    pub ok: bool,
    pub first_violation: Option<Violation>,
}

/// Checks every sample against the box conditions within `slack`.
/// Lower bounds are `>= -slack`, upper bounds `<= bound + slack`.
pub fn in_omega_c(
    samples: &[(f64, StatePoint)],
    bounds: &InvariantBounds,
    params: &ModelParams,
    slack: f64,
) -> MembershipReport {
    for &(t, s) in samples {
        let combo_ty = s.tstar + params.p / params.beta * s.y;
        let combo_va = s.v + params.q / params.g * s.a;
        let checks = [
            (Condition::NonNegativeT, -s.t),
            (Condition::NonNegativeTstar, -s.tstar),
            (Condition::NonNegativeV, -s.v),
            (Condition::NonNegativeY, -s.y),
            (Condition::NonNegativeA, -s.a),
            (Condition::UpperT, s.t - bounds.tmax),
            (Condition::UpperTstar, s.tstar - bounds.tstarmax),
            (Condition::UpperV, s.v - bounds.vmax),
            (Condition::ComboTy, combo_ty - bounds.combo_ty),
            (Condition::ComboVa, combo_va - bounds.combo_va),
        ];
        for (condition, excess) in checks {
            if excess > slack {
                return MembershipReport {
                    ok: false,
                    first_violation: Some(Violation {
                        t,
                        condition,
                        margin: excess,
                    }),
                };
            }
        }
    }
    MembershipReport {
        ok: true,
        first_violation: None,
    }
}

/// Knot samples of a trajectory, ready for membership sweeps.
pub fn sample_trajectory(traj: &Trajectory, stride: usize) -> Vec<(f64, StatePoint)> {
    let stride = stride.max(1);
    traj.times()
        .iter()
        .zip(traj.states())
        .enumerate()
        .filter(|(i, _)| i % stride == 0)
        .map(|(_, (&t, &s))| (t, s))
        .collect()
}

/// Samples of an initial function on `[-h, 0]`.
pub fn sample_initial(phi: &InitialFunction, h: f64, n: usize) -> Vec<(f64, StatePoint)> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let theta = -h + h * i as f64 / (n - 1) as f64;
            (theta, phi.eval(theta))
        })
        .collect()
}

/// Multiplier applied to the stationary-balance magnitudes when capping the
/// random initial draws. The box corners admitted by the combination bounds
/// put the immune decay rates three to four orders of magnitude above what a
/// fixed explicit step can follow, so sampling concentrates on the
/// dynamically meaningful part of the box.
const SCALE_MULT: f64 = 5.0;

/// Deterministic piecewise-linear initial function inside the invariant box.
///
/// Values are drawn per breakpoint, each coordinate capped by both its box
/// bound and `SCALE_MULT` times a stationary-balance magnitude; consecutive
/// breakpoints differ by at most `lipschitz_cap * dtheta` in every coordinate
/// (a zero cap yields constant functions). Same seed, same function.
pub fn sample_initial_in_omega_c(
    params: &ModelParams,
    bounds: &InvariantBounds,
    seed: u64,
    lipschitz_cap: f64,
) -> InitialFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = params.h;
    let breaks = 8usize;

    // hypothesis-free magnitude scales: production/removal balances
    let tstar_scale = params.gamma / params.beta;
    let v_scale = params.b / params.g;
    let y_scale =
        ((params.lambda * params.survival() / tstar_scale - params.delta) / params.p).max(1.0);
    let a_scale =
        ((params.n * params.delta * tstar_scale / v_scale - params.c) / params.q).max(1.0);

    let caps = [
        bounds.tmax,
        bounds.tstarmax.min(SCALE_MULT * tstar_scale),
        bounds.vmax.min(SCALE_MULT * v_scale),
        SCALE_MULT * y_scale,
        SCALE_MULT * a_scale,
    ];

    let dtheta = h / breaks as f64;
    let max_move = lipschitz_cap * dtheta;
    let mut theta = Vec::with_capacity(breaks + 1);
    let mut values = Vec::with_capacity(breaks + 1);
    let mut prev: Option<[f64; 5]> = None;
    for j in 0..=breaks {
        theta.push(-h + j as f64 * dtheta);
        let mut x = [0.0_f64; 5];
        for (i, xi) in x.iter_mut().enumerate() {
            let (lo, hi) = match prev {
                None => (0.0, caps[i]),
                Some(p) => ((p[i] - max_move).max(0.0), (p[i] + max_move).min(caps[i])),
            };
            *xi = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        // combination constraints: shrink the immune coordinates if needed
        let y_room = (params.beta / params.p) * (bounds.combo_ty - x[1]);
        let a_room = (params.g / params.q) * (bounds.combo_va - x[2]);
        x[3] = x[3].min(y_room.max(0.0));
        x[4] = x[4].min(a_room.max(0.0));
        values.push(StatePoint::from_array(x));
        prev = Some(x);
    }
    InitialFunction::piecewise_linear(theta, values).expect("breakpoints are ascending")
}

/// Deterministic initial function outside the invariant box for absorbing-set
/// studies: `T`, `T*`, `V` profiles wander in `[bound, 2 bound]` and end at
/// exactly twice their bounds at `theta = 0`. The immune coordinates start at
/// zero: any CTL or antibody mass combined with the box-scale infected and
/// virus loads drives growth rates far beyond what a fixed explicit step can
/// follow, and zero immune mass is itself invariant.
pub fn sample_initial_outside(
    params: &ModelParams,
    bounds: &InvariantBounds,
    seed: u64,
) -> InitialFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0abc_f00d);
    let h = params.h;
    let breaks = 8usize;
    let caps = [bounds.tmax, bounds.tstarmax, bounds.vmax];
    let mut theta = Vec::with_capacity(breaks + 1);
    let mut values = Vec::with_capacity(breaks + 1);
    for j in 0..=breaks {
        theta.push(-h + j as f64 * h / breaks as f64);
        let mut x = [0.0_f64; 5];
        for (i, &cap) in caps.iter().enumerate() {
            x[i] = if j == breaks {
                2.0 * cap
            } else {
                rng.random_range(cap..2.0 * cap)
            };
        }
        values.push(StatePoint::from_array(x));
    }
    InitialFunction::piecewise_linear(theta, values).expect("breakpoints are ascending")
}

/// Gronwall-type runtime bound on a sampled scalar path.
///
/// Valid when the caller knows `dl/dt <= c1 - c2 l` holds along the path.
/// Checks both the invariant-level claim (start below `c1/c2` implies staying
/// below) and the explicit exponential envelope from the start value.
pub fn gronwall_check(trace: &[(f64, f64)], c1: f64, c2: f64) -> bool {
    if trace.is_empty() || !(c2 > 0.0) {
        return false;
    }
    let ratio = c1 / c2;
    let tol = 1e-9;
    let (t0, l0) = trace[0];
    let invariant_ok = l0 > ratio || trace.iter().all(|&(_, l)| l <= ratio + tol);
    let envelope_ok = trace
        .iter()
        .all(|&(t, l)| l <= (l0 - ratio) * (-c2 * (t - t0)).exp() + ratio + tol);
    invariant_ok && envelope_ok
}

/// First knot time after which the box conditions, with upper bounds enlarged
/// by `epsilon`, hold for the remainder of the run. `None` if never.
pub fn absorbing_time(
    traj: &Trajectory,
    bounds: &InvariantBounds,
    params: &ModelParams,
    epsilon: f64,
) -> Option<f64> {
    let enlarged = InvariantBounds {
        tmax: bounds.tmax + epsilon,
        tstarmax: bounds.tstarmax + epsilon,
        vmax: bounds.vmax + epsilon,
        combo_ty: bounds.combo_ty + epsilon,
        combo_va: bounds.combo_va + epsilon,
    };
    let times = traj.times();
    let states = traj.states();
    let mut entry = None;
    for i in (0..times.len()).rev() {
        let report = in_omega_c(&[(times[i], states[i])], &enlarged, params, 1e-9);
        if report.ok {
            entry = Some(times[i]);
        } else {
            break;
        }
    }
    entry
}

/// Entry-time prediction from the exponential envelopes of the Gronwall
/// cascade, for runs started no higher than twice each bound. The slack
/// allocation reserves part of each level's margin for the limit shift
/// inherited from upstream levels.
pub fn absorbing_envelope_prediction(
    params: &ModelParams,
    bounds: &InvariantBounds,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    let b = bounds;
    let (d, delta, c) = (params.d, params.delta, params.c);
    let m_ty = params.delta.min(params.gamma);
    let m_va = params.c.min(params.b);
    let ndelta = params.n * params.delta;

    // slack for V's own bound, sized so the combo-TY level inherits <= eps/5
    let e3 = epsilon.min(0.2 * epsilon * b.vmax / b.combo_ty);
    // slack for Tstar: feeds both V (rate N delta / c) and combo-VA levels
    let e2 = epsilon
        .min(0.5 * e3 * c / ndelta)
        .min(0.5 * epsilon * b.tstarmax / b.combo_va);
    // slack for T: feeds Tstar and combo-TY
    let e1 = epsilon
        .min(0.5 * e2 * b.tmax / b.tstarmax)
        .min(0.2 * epsilon * b.tmax / b.combo_ty);

    // level 1: T from at most 2 tmax, unconditional inequality
    let t1 = ((b.tmax / e1).ln() / d).max(0.0);
    // level 2: valid once delayed T is settled; sup 2 tstarmax throughout
    let l2 = b.tstarmax * (1.0 + e1 / b.tmax);
    let s2 = b.tstarmax + e2 - l2;
    if s2 <= 0.0 {
        return Err(Error::Domain(
            "envelope slack allocation failed for Tstar".into(),
        ));
    }
    let t2 = t1 + params.h + ((2.0 * b.tstarmax - l2).max(s2) / s2).ln() / delta;
    // level 3: V, sup 2 vmax
    let l3 = b.vmax * (1.0 + e2 / b.tstarmax);
    let s3 = b.vmax + e3 - l3;
    if s3 <= 0.0 {
        return Err(Error::Domain("envelope slack allocation failed for V".into()));
    }
    let t3 = t2 + ((2.0 * b.vmax - l3).max(s3) / s3).ln() / c;
    // level 4: combo T* + (p/beta) Y, sup 4x its bound, needs delayed T and V
    let l4 = b.combo_ty * (1.0 + e1 / b.tmax) * (1.0 + e3 / b.vmax);
    let s4 = b.combo_ty + epsilon - l4;
    if s4 <= 0.0 {
        return Err(Error::Domain(
            "envelope slack allocation failed for the T*/Y combination".into(),
        ));
    }
    let t4 = t1.max(t3) + params.h + ((4.0 * b.combo_ty - l4).max(s4) / s4).ln() / m_ty;
    // level 5: combo V + (q/g) A, sup 2x its bound
    let l5 = b.combo_va * (1.0 + e2 / b.tstarmax);
    let s5 = b.combo_va + epsilon - l5;
    if s5 <= 0.0 {
        return Err(Error::Domain(
            "envelope slack allocation failed for the V/A combination".into(),
        ));
    }
    let t5 = t2 + ((2.0 * b.combo_va - l5).max(s5) / s5).ln() / m_va;

    Ok(t1.max(t2).max(t3).max(t4).max(t5))
}

/// Recomputes `T*`, `V`, `Y`, `A` from their integral representations (the
/// variation-of-constants forms of the four kinetic equations) at `n_checks`
/// checkpoint times, and returns the maximal relative deviation from the
/// integrator's values. The delayed infection argument uses the same delay
/// functional as the run. An independent route: exponential kernels come from
/// cumulative trapezoid integrals of the rate coefficients, the outer
/// convolution from composite Simpson on the dense output.
pub fn oracle_integral_representation(
    traj: &Trajectory,
    params: &ModelParams,
    delay: &DelaySpec,
    panels: usize,
    n_checks: usize,
) -> Result<f64> {
    let times = traj.times();
    let states = traj.states();
    let n = times.len();
    if n < 3 {
        return Err(Error::Domain(
            "trajectory too short for integral-representation checkpoints".into(),
        ));
    }
    let panels = panels.max(4) + panels % 2;
    let n_checks = n_checks.max(1);

    // cumulative trapezoid of the four rate integrands over the knots
    let mut g_ts = vec![0.0; n]; // integral of delta + p Y
    let mut g_v = vec![0.0; n]; // integral of c + q A
    let mut g_y = vec![0.0; n]; // integral of beta T* - gamma
    let mut g_a = vec![0.0; n]; // integral of g V - b
    for i in 1..n {
        let dt = times[i] - times[i - 1];
        let (s0, s1) = (&states[i - 1], &states[i]);
        g_ts[i] = g_ts[i - 1]
            + 0.5 * dt * ((params.delta + params.p * s0.y) + (params.delta + params.p * s1.y));
        g_v[i] =
            g_v[i - 1] + 0.5 * dt * ((params.c + params.q * s0.a) + (params.c + params.q * s1.a));
        g_y[i] = g_y[i - 1]
            + 0.5
                * dt
                * ((params.beta * s0.tstar - params.gamma)
                    + (params.beta * s1.tstar - params.gamma));
        g_a[i] = g_a[i - 1]
            + 0.5 * dt * ((params.g * s0.v - params.b) + (params.g * s1.v - params.b));
    }
    let interp = |grid: &[f64], t: f64| -> f64 {
        // linear interpolation of a cumulative integral between knots
        let i = times.partition_point(|&x| x <= t).clamp(1, n - 1) - 1;
        let w = (t - times[i]) / (times[i + 1] - times[i]);
        grid[i] + w * (grid[i + 1] - grid[i])
    };

    // delayed response along the run
    let f_delayed = |tau: f64| -> Result<f64> {
        let seg = traj.segment_at(tau)?;
        let eta = eval_delay(delay, &seg)?;
        let u = traj.eval(tau - eta)?;
        Ok(response_f_raw(u.t, u.v, params))
    };

    let simpson = |f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64| -> Result<f64> {
        let w = (b - a) / panels as f64;
        let mut acc = 0.0;
        for j in 0..=panels {
            let x = (a + w * j as f64).min(b); // rounding must not leave the domain
            let coeff = if j == 0 || j == panels {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += coeff * f(x)?;
        }
        Ok(acc * w / 3.0)
    };

    let y0 = &states[0];
    let survival = params.survival();
    let mut worst = 0.0_f64;
    for j in 1..=n_checks {
        let idx = (j * (n - 1)) / n_checks;
        let t = times[idx];
        let here = &states[idx];
        let gt = g_ts[idx];
        let tstar_re = y0.tstar * (-gt).exp()
            + survival
                * simpson(
                    &|tau| Ok(f_delayed(tau)? * (-(gt - interp(&g_ts, tau))).exp()),
                    0.0,
                    t,
                )?;
        let gv = g_v[idx];
        let v_re = y0.v * (-gv).exp()
            + params.n
                * params.delta
                * simpson(
                    &|tau| Ok(traj.eval(tau)?.tstar * (-(gv - interp(&g_v, tau))).exp()),
                    0.0,
                    t,
                )?;
        let y_re = y0.y * g_y[idx].exp();
        let a_re = y0.a * g_a[idx].exp();

        for (re, direct) in [
            (tstar_re, here.tstar),
            (v_re, here.v),
            (y_re, here.y),
            (a_re, here.a),
        ] {
            worst = worst.max((re - direct).abs() / direct.abs().max(1e-6));
        }
    }
    Ok(worst)
}
