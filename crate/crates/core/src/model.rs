//! Model parameters, state vector and the delayed right-hand side.

use crate::error::{Error, Result};

/// Rate constants of the five-variable infection model.
///
/// All rates are per unit time; `n` (burst size) is a dimensionless count and
/// `h` is the maximal delay. `k1`/`k2` are the saturation constants of the
/// Beddington–DeAngelis response; both zero recovers mass-action incidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Uninfected cell production rate.
    pub lambda: f64,
    /// Uninfected cell death rate.
    pub d: f64,
    /// Infection rate constant.
    pub k: f64,
    /// Response saturation in T.
    pub k1: f64,
    /// Response saturation in V.
    pub k2: f64,
    /// Infected cell death rate.
    pub delta: f64,
    /// CTL killing rate.
    pub p: f64,
    /// Burst size (virions per infected cell).
    pub n: f64,
    /// Virus clearance rate.
    pub c: f64,
    /// Antibody neutralization rate.
    pub q: f64,
    /// CTL activation rate.
    pub beta: f64,
    /// CTL decay rate.
    pub gamma: f64,
    /// Antibody activation rate.
    pub g: f64,
    /// Antibody decay rate.
    pub b: f64,
    /// Pre-production death exponent.
    pub omega: f64,
    /// Maximal delay.
    pub h: f64,
}

impl ModelParams {
    /// Reference parameter set shipped as the default configuration.
    ///
    /// Chosen so that both equilibrium hypotheses H2 and H3 hold (checked by
    /// the equilibrium module); it is a config default, not literature data.
    pub fn p0() -> Self {
        Self {
            lambda: 10.0,
            d: 0.1,
            k: 0.5,
            k1: 0.01,
            k2: 0.05,
            delta: 0.5,
            p: 1.0,
            n: 10.0,
            c: 3.0,
            q: 1.0,
            beta: 0.2,
            gamma: 0.1,
            g: 0.5,
            b: 0.1,
            omega: 0.1,
            h: 1.0,
        }
    }

    /// Checks positivity constraints.
    ///
    /// `k1`, `k2` may be zero (bilinear incidence). `k = 0` is also accepted:
    /// it decouples the T equation, which several diagnostics rely on, even
    /// though the interior equilibrium then no longer exists.
    pub fn validate(&self) -> Result<()> {
        let strictly_positive = [
            ("lambda", self.lambda),
            ("d", self.d),
            ("delta", self.delta),
            ("p", self.p),
            ("N", self.n),
            ("c", self.c),
            ("q", self.q),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("g", self.g),
            ("b", self.b),
            ("omega", self.omega),
            ("h", self.h),
        ];
        for (name, value) in strictly_positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParam {
                    name,
                    value,
                    constraint: "strictly positive",
                });
            }
        }
        for (name, value) in [("k", self.k), ("k1", self.k1), ("k2", self.k2)] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidParam {
                    name,
                    value,
                    constraint: "non-negative",
                });
            }
        }
        Ok(())
    }

    /// `e^{-omega h}`, the survival factor of cells infected one delay ago.
    #[inline]
    pub fn survival(&self) -> f64 {
        (-self.omega * self.h).exp()
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::p0()
    }
}

/// Instantaneous state `(T, T*, V, Y, A)`.
///
/// Non-negativity is a property of solutions, not of the type: perturbation
/// studies construct states freely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePoint {
    /// Uninfected target cells.
    pub t: f64,
    /// Infected cells.
    pub tstar: f64,
    /// Free virus.
    pub v: f64,
    /// CTL response.
    pub y: f64,
    /// Antibody response.
    pub a: f64,
}

/// Rates of change of the five coordinates.
pub type StateDerivative = StatePoint;

impl StatePoint {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0, 0.0);

    pub const fn new(t: f64, tstar: f64, v: f64, y: f64, a: f64) -> Self {
        Self { t, tstar, v, y, a }
    }

    pub fn from_array(x: [f64; 5]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.t, self.tstar, self.v, self.y, self.a]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Componentwise `max |self - other|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Max-norm of the coordinates.
    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn min_coord(&self) -> f64 {
        self.to_array().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(
            self.t * s,
            self.tstar * s,
            self.v * s,
            self.y * s,
            self.a * s,
        )
    }

    pub fn add(self, other: Self) -> Self {
        Self::new(
            self.t + other.t,
            self.tstar + other.tstar,
            self.v + other.v,
            self.y + other.y,
            self.a + other.a,
        )
    }

    /// `self + dt * rate`, the basic integrator update.
    pub fn add_scaled(self, rate: Self, dt: f64) -> Self {
        self.add(rate.scaled(dt))
    }
}

/// Beddington–DeAngelis functional response `f(T, V) = kTV / (1 + k1 T + k2 V)`.
///
/// Reduces to mass-action `kTV` for `k1 = k2 = 0`; non-negative and bounded by
/// `k T / k2` (for `k2 > 0`) on the non-negative quadrant.
pub fn response_f(t_cells: f64, virions: f64, params: &ModelParams) -> Result<f64> {
    if !t_cells.is_finite() {
        return Err(Error::NonFinite {
            what: "T",
            value: t_cells,
        });
    }
    if !virions.is_finite() {
        return Err(Error::NonFinite {
            what: "V",
            value: virions,
        });
    }
    Ok(response_f_raw(t_cells, virions, params))
}

/// `response_f` without the finiteness checks, for integrator-internal use.
#[inline]
pub(crate) fn response_f_raw(t_cells: f64, virions: f64, params: &ModelParams) -> f64 {
    params.k * t_cells * virions / (1.0 + params.k1 * t_cells + params.k2 * virions)
}

/// Right-hand side of the delay system at the current state, with the delayed
/// infection arguments `(T(t - eta), V(t - eta))` supplied by the caller.
pub fn rhs(
    now: &StatePoint,
    delayed_t: f64,
    delayed_v: f64,
    params: &ModelParams,
) -> Result<StateDerivative> {
    if !now.is_finite() {
        return Err(Error::NonFinite {
            what: "state",
            value: f64::NAN,
        });
    }
    if !delayed_t.is_finite() {
        return Err(Error::NonFinite {
            what: "delayed T",
            value: delayed_t,
        });
    }
    if !delayed_v.is_finite() {
        return Err(Error::NonFinite {
            what: "delayed V",
            value: delayed_v,
        });
    }
    Ok(rhs_raw(now, delayed_t, delayed_v, params))
}

#[inline]
pub(crate) fn rhs_raw(
    now: &StatePoint,
    delayed_t: f64,
    delayed_v: f64,
    params: &ModelParams,
) -> StateDerivative {
    let f_now = response_f_raw(now.t, now.v, params);
    let f_delayed = response_f_raw(delayed_t, delayed_v, params);
    StateDerivative {
        t: params.lambda - params.d * now.t - f_now,
        tstar: params.survival() * f_delayed - params.delta * now.tstar - params.p * now.y * now.tstar,
        v: params.n * params.delta * now.tstar - params.c * now.v - params.q * now.a * now.v,
        y: params.beta * now.tstar * now.y - params.gamma * now.y,
        a: params.g * now.a * now.v - params.b * now.a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn p0_is_valid() {
        ModelParams::p0().validate().unwrap();
    }

    #[test]
    fn rejects_nonpositive_rates() {
        let mut p = ModelParams::p0();
        p.lambda = -1.0;
        assert!(matches!(
            p.validate(),
            Err(Error::InvalidParam { name: "lambda", .. })
        ));
        let mut p = ModelParams::p0();
        p.k2 = -0.1;
        assert!(p.validate().is_err());
        // k = 0 is the permitted no-infection degenerate
        let mut p = ModelParams::p0();
        p.k = 0.0;
        p.validate().unwrap();
    }

    #[test]
    fn response_zero_numerator() {
        let p = ModelParams::p0();
        assert_eq!(response_f(5.0, 0.0, &p).unwrap(), 0.0);
        assert_eq!(response_f(0.0, 7.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn response_direct_substitution() {
        let mut p = ModelParams::p0();
        p.k = 1.0;
        p.k1 = 1.0;
        p.k2 = 1.0;
        let got = response_f(1.0, 1.0, &p).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn response_bilinear_special_case() {
        let mut p = ModelParams::p0();
        p.k = 0.5;
        p.k1 = 0.0;
        p.k2 = 0.0;
        let got = response_f(2.0, 3.0, &p).unwrap();
        assert!((got - 3.0).abs() < 1e-15);
    }

    #[test]
    fn response_saturation_bound_in_v() {
        // with T <= lambda/d fixed, f(T, V) <= k*lambda/(d*k2) for all V
        let p = ModelParams::p0();
        let t = p.lambda / p.d;
        let bound = p.k * p.lambda / (p.d * p.k2);
        let mut sup = 0.0_f64;
        let mut v = 0.0;
        while v <= 1e6 {
            sup = sup.max(response_f(t, v, &p).unwrap());
            v += 250.0;
        }
        assert!(sup < bound, "sup {sup} vs bound {bound}");
        assert!(sup > 0.9 * bound, "grid should approach the bound");
    }

    #[test]
    fn response_rejects_non_finite() {
        let p = ModelParams::p0();
        assert!(response_f(f64::NAN, 1.0, &p).is_err());
        assert!(response_f(1.0, f64::INFINITY, &p).is_err());
    }

    #[test]
    fn rhs_infection_free_state() {
        let p = ModelParams::p0();
        let s = StatePoint::new(p.lambda / p.d, 0.0, 0.0, 0.0, 0.0);
        let dy = rhs(&s, p.lambda / p.d, 0.0, &p).unwrap();
        assert_eq!(dy.max_abs(), 0.0);
    }

    #[test]
    fn rhs_at_origin_produces_cells() {
        let p = ModelParams::p0();
        let dy = rhs(&StatePoint::ZERO, 0.0, 0.0, &p).unwrap();
        assert_eq!(dy.t, p.lambda);
        assert_eq!(dy.tstar, 0.0);
        assert_eq!(dy.v, 0.0);
        assert_eq!(dy.y, 0.0);
        assert_eq!(dy.a, 0.0);
    }

    /// With k1 = k2 = 0 the system must agree with a hand-coded bilinear
    /// evaluator on random non-negative states.
    #[test]
    fn rhs_reduces_to_bilinear_system() {
        let mut p = ModelParams::p0();
        p.k1 = 0.0;
        p.k2 = 0.0;
        let e = p.survival();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = StatePoint::new(
                rng.random_range(0.0..100.0),
                rng.random_range(0.0..50.0),
                rng.random_range(0.0..200.0),
                rng.random_range(0.0..30.0),
                rng.random_range(0.0..30.0),
            );
            let (td, vd) = (rng.random_range(0.0..100.0), rng.random_range(0.0..200.0));
            let got = rhs(&s, td, vd, &p).unwrap();
            let expect = StateDerivative {
                t: p.lambda - p.d * s.t - p.k * s.t * s.v,
                tstar: e * (p.k * td * vd) - p.delta * s.tstar - p.p * s.y * s.tstar,
                v: p.n * p.delta * s.tstar - p.c * s.v - p.q * s.a * s.v,
                y: p.beta * s.tstar * s.y - p.gamma * s.y,
                a: p.g * s.a * s.v - p.b * s.a,
            };
            assert!(got.max_abs_diff(&expect) == 0.0);
        }
    }

    /// Finite-difference Jacobian entries stay bounded on a compact box.
    #[test]
    fn rhs_locally_lipschitz_sanity() {
        let p = ModelParams::p0();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eps = 1e-6;
        for _ in 0..200 {
            let base = StatePoint::new(
                rng.random_range(0.1..100.0),
                rng.random_range(0.1..50.0),
                rng.random_range(0.1..100.0),
                rng.random_range(0.1..30.0),
                rng.random_range(0.1..30.0),
            );
            let f0 = rhs(&base, base.t, base.v, &p).unwrap().to_array();
            for i in 0..5 {
                let mut arr = base.to_array();
                arr[i] += eps;
                let s = StatePoint::from_array(arr);
                let f1 = rhs(&s, s.t, s.v, &p).unwrap().to_array();
                for j in 0..5 {
                    let deriv = (f1[j] - f0[j]) / eps;
                    assert!(deriv.is_finite() && deriv.abs() < 1e4);
                }
            }
        }
    }

    proptest::proptest! {
        /// f is non-negative on the non-negative quadrant; zero on the axes.
        #[test]
        fn response_non_negative(t in 0.0..1e6f64, v in 0.0..1e6f64) {
            let p = ModelParams::p0();
            let val = response_f(t, v, &p).unwrap();
            proptest::prop_assert!(val >= 0.0);
        }
    }
}
