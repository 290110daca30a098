//! Catalog of state-dependent delay functionals `eta : C([-h,0]; R^5) -> [0, h]`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::StatePoint;

/// Read-only view of a history segment `theta in [-h, 0] -> u(t + theta)`.
///
/// This is what delay functionals are evaluated on. `max_delay` returns `h`,
/// the left extent of the segment.
pub trait Segment {
    fn value(&self, theta: f64) -> StatePoint;
    fn max_delay(&self) -> f64;
}

/// Segment that is constant in time; the natural view of an equilibrium.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSegment {
    pub state: StatePoint,
    pub h: f64,
}

impl Segment for ConstantSegment {
    fn value(&self, _theta: f64) -> StatePoint {
        self.state
    }
    fn max_delay(&self) -> f64 {
        self.h
    }
}

/// Shared evaluator signature for user-supplied delays.
pub type DelayEvalFn = Arc<dyn Fn(&dyn Segment) -> f64 + Send + Sync>;

/// User-supplied delay evaluator. Must be a pure function of the segment.
#[derive(Clone)]
pub struct CustomDelay {
    pub name: String,
    pub eval: DelayEvalFn,
}

impl fmt::Debug for CustomDelay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDelay").field("name", &self.name).finish()
    }
}

/// Delay functional families.
///
/// The pointwise-quadratic family reads only the current values of `T` and `V`
/// (components 1 and 3 at `theta = 0`); its clamp floor `etamin > 0` makes the
/// positivity hypothesis on the delay hold unconditionally. The reciprocal
/// family is smooth with genuine state dependence, strictly positive and
/// bounded. Custom evaluators are sampled, never certified.
#[derive(Debug, Clone)]
pub enum DelaySpec {
    Constant {
        h0: f64,
    },
    PointwiseQuadratic {
        h0: f64,
        a1: f64,
        a2: f64,
        center_t: f64,
        center_v: f64,
        etamin: f64,
    },
    Reciprocal {
        hmin: f64,
        hmax: f64,
        cv: f64,
    },
    Custom(CustomDelay),
}

impl DelaySpec {
    pub fn constant(h0: f64) -> Self {
        DelaySpec::Constant { h0 }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            DelaySpec::Constant { .. } => "constant",
            DelaySpec::PointwiseQuadratic { .. } => "pointwise_quadratic",
            DelaySpec::Reciprocal { .. } => "reciprocal",
            DelaySpec::Custom(_) => "custom",
        }
    }

    /// Checks the family invariants against the model's maximal delay `h`.
    pub fn validate(&self, h: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::DelayRange(msg));
        match *self {
            DelaySpec::Constant { h0 } => {
                if !(h0 > 0.0 && h0 <= h) {
                    return fail(format!("constant delay h0 = {h0} must satisfy 0 < h0 <= {h}"));
                }
            }
            DelaySpec::PointwiseQuadratic {
                h0,
                a1,
                a2,
                etamin,
                ..
            } => {
                if !(etamin > 0.0 && etamin <= h0 && h0 <= h) {
                    return fail(format!(
                        "pointwise quadratic needs 0 < etamin <= h0 <= h, got etamin = {etamin}, h0 = {h0}, h = {h}"
                    ));
                }
                if !(a1 >= 0.0 && a2 >= 0.0) {
                    return fail(format!("curvatures must be non-negative, got a1 = {a1}, a2 = {a2}"));
                }
            }
            DelaySpec::Reciprocal { hmin, hmax, cv } => {
                if !(hmin > 0.0 && hmin <= hmax && hmax <= h) {
                    return fail(format!(
                        "reciprocal needs 0 < hmin <= hmax <= h, got hmin = {hmin}, hmax = {hmax}, h = {h}"
                    ));
                }
                if !(cv >= 0.0) {
                    return fail(format!("cv must be non-negative, got {cv}"));
                }
            }
            DelaySpec::Custom(_) => {}
        }
        Ok(())
    }

    /// Curvature bound `c_eta = max(a1, a2)` of the pointwise-quadratic family.
    ///
    /// Valid when the family is centered at the equilibrium: clamping is
    /// 1-Lipschitz, so the clamped delay inherits the quadratic envelope
    /// `|eta - h0| <= c_eta ((T - That)^2 + (V - Vhat)^2)`.
    pub fn c_eta_bound(&self) -> Result<f64> {
        match *self {
            DelaySpec::PointwiseQuadratic { a1, a2, .. } => Ok(a1.max(a2)),
            _ => Err(Error::UnsupportedFamily {
                family: self.family_name(),
                why: "curvature bound is defined for the pointwise quadratic family",
            }),
        }
    }
}

/// Evaluates the delay functional on a history segment. Output lies in
/// `[0, segment.max_delay()]` for every catalog family.
pub fn eval_delay(spec: &DelaySpec, segment: &dyn Segment) -> Result<f64> {
    let h = segment.max_delay();
    match spec {
        DelaySpec::Constant { h0 } => Ok(*h0),
        DelaySpec::PointwiseQuadratic {
            h0,
            a1,
            a2,
            center_t,
            center_v,
            etamin,
        } => {
            let now = segment.value(0.0);
            let raw = h0 + a1 * (now.t - center_t).powi(2) + a2 * (now.v - center_v).powi(2);
            Ok(raw.clamp(*etamin, h))
        }
        DelaySpec::Reciprocal { hmin, hmax, cv } => {
            let now = segment.value(0.0);
            Ok(hmin + (hmax - hmin) / (1.0 + cv * now.v))
        }
        DelaySpec::Custom(custom) => {
            let raw = (custom.eval)(segment);
            if !raw.is_finite() {
                return Err(Error::DelayRange(format!(
                    "custom delay {:?} returned non-finite value {raw}",
                    custom.name
                )));
            }
            // reject gross violations, absorb rounding wobble by clamping
            let tol = 1e-9 * h.max(1.0);
            if raw < -tol || raw > h + tol {
                return Err(Error::DelayRange(format!(
                    "custom delay {:?} returned {raw} outside [0, {h}]",
                    custom.name
                )));
            }
            Ok(raw.clamp(0.0, h))
        }
    }
}

/// Checks the positivity hypothesis on the delay: `eta(psi) > 0` for every
/// non-negative segment with `psi^2(0) = psi^3(0) = 0`.
///
/// Catalog families answer analytically. Custom evaluators are probed on
/// `samples` seeded random piecewise-linear segments with the infected and
/// virus components vanishing at `theta = 0`; a sampling check, not a proof.
pub fn check_h1(spec: &DelaySpec, h: f64, samples: usize) -> bool {
    match spec {
        DelaySpec::Constant { h0 } => *h0 > 0.0,
        DelaySpec::PointwiseQuadratic { etamin, .. } => *etamin > 0.0,
        DelaySpec::Reciprocal { hmin, .. } => *hmin > 0.0,
        DelaySpec::Custom(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x4831);
            for _ in 0..samples.max(1) {
                let left = StatePoint::new(
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                );
                let right = StatePoint::new(rng.random_range(0.0..100.0), 0.0, 0.0, rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                let seg = LinearSegment { left, right, h };
                match eval_delay(spec, &seg) {
                    Ok(v) if v > 0.0 => {}
                    _ => return false,
                }
            }
            true
        }
    }
}

/// Segment interpolating linearly between a value at `theta = -h` and one at
/// `theta = 0`; used by the sampling check.
struct LinearSegment {
    left: StatePoint,
    right: StatePoint,
    h: f64,
}

impl Segment for LinearSegment {
    fn value(&self, theta: f64) -> StatePoint {
        let s = (theta + self.h) / self.h;
        self.left.add(self.right.add(self.left.scaled(-1.0)).scaled(s))
    }
    fn max_delay(&self) -> f64 {
        self.h
    }
}
