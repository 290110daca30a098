//! Dense-output trajectory storage: piecewise cubic Hermite representation
//! with history evaluation on `[t0 - h, t_last]`.

use std::io::Write;
use std::sync::Arc;

use crate::delay::Segment;
use crate::error::{Error, Result};
use crate::model::{StateDerivative, StatePoint};

/// Initial function `phi` on `[-h, 0]`, stored as supplied.
#[derive(Clone)]
pub enum InitialFunction {
    Constant(StatePoint),
    /// Breakpoints ascending from `-h` to `0`, linearly interpolated.
    PiecewiseLinear {
        theta: Vec<f64>,
        values: Vec<StatePoint>,
    },
    Callable(Arc<dyn Fn(f64) -> StatePoint + Send + Sync>),
}

impl std::fmt::Debug for InitialFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialFunction::Constant(s) => f.debug_tuple("Constant").field(s).finish(),
            InitialFunction::PiecewiseLinear { theta, .. } => f
                .debug_struct("PiecewiseLinear")
                .field("breakpoints", &theta.len())
                .finish(),
            InitialFunction::Callable(_) => f.write_str("Callable"),
        }
    }
}

impl InitialFunction {
    pub fn constant(state: StatePoint) -> Self {
        InitialFunction::Constant(state)
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(f64) -> StatePoint + Send + Sync + 'static,
    {
        InitialFunction::Callable(Arc::new(f))
    }

    pub fn piecewise_linear(theta: Vec<f64>, values: Vec<StatePoint>) -> Result<Self> {
        if theta.len() != values.len() || theta.len() < 2 {
            return Err(Error::Domain(
                "piecewise-linear initial function needs matching breakpoint/value lists of length >= 2".into(),
            ));
        }
        if theta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "piecewise-linear breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(InitialFunction::PiecewiseLinear { theta, values })
    }

    /// Value at `theta`; arguments outside the breakpoint span clamp to the ends.
    pub fn eval(&self, theta: f64) -> StatePoint {
        match self {
            InitialFunction::Constant(s) => *s,
            InitialFunction::Callable(f) => f(theta),
            InitialFunction::PiecewiseLinear { theta: ts, values } => {
                if theta <= ts[0] {
                    return values[0];
                }
                if theta >= *ts.last().unwrap() {
                    return *values.last().unwrap();
                }
                let i = ts.partition_point(|&x| x <= theta) - 1;
                let s = (theta - ts[i]) / (ts[i + 1] - ts[i]);
                values[i].add(values[i + 1].add(values[i].scaled(-1.0)).scaled(s))
            }
        }
    }
}

/// Dense-output solution record.
///
/// Knots carry the state and the right-hand-side value at each accepted step;
/// between knots the trajectory is the cubic Hermite interpolant, before `t0`
/// it is the initial function. Knot times are strictly increasing.
pub struct Trajectory {
    t0: f64,
    max_delay: f64,
    phi: InitialFunction,
    times: Vec<f64>,
    states: Vec<StatePoint>,
    derivs: Vec<StateDerivative>,
}

impl Trajectory {
    pub(crate) fn with_initial(
        phi: InitialFunction,
        t0: f64,
        max_delay: f64,
        y0: StatePoint,
        dy0: StateDerivative,
    ) -> Self {
        Self {
            t0,
            max_delay,
            phi,
            times: vec![t0],
            states: vec![y0],
            derivs: vec![dy0],
        }
    }

    /// Builds a trajectory from explicit knots; mostly useful for tests and
    /// offline analysis of externally produced solutions.
    pub fn from_knots(
        phi: InitialFunction,
        t0: f64,
        max_delay: f64,
        knots: Vec<(f64, StatePoint, StateDerivative)>,
    ) -> Result<Self> {
        if knots.is_empty() || knots[0].0 != t0 {
            return Err(Error::Domain("first knot must sit at t0".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Domain("knot times must be strictly increasing".into()));
        }
        if !(max_delay > 0.0) {
            return Err(Error::Domain("max delay must be positive".into()));
        }
        let mut traj = Self::with_initial(phi, t0, max_delay, knots[0].1, knots[0].2);
        for (t, y, dy) in knots.into_iter().skip(1) {
            traj.push_knot(t, y, dy);
        }
        Ok(traj)
    }

    pub(crate) fn push_knot(&mut self, t: f64, y: StatePoint, dy: StateDerivative) {
        debug_assert!(t > *self.times.last().unwrap());
        self.times.push(t);
        self.states.push(y);
        self.derivs.push(dy);
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StatePoint] {
        &self.states
    }

    pub fn derivs(&self) -> &[StateDerivative] {
        &self.derivs
    }

    pub fn initial_function(&self) -> &InitialFunction {
        &self.phi
    }

    /// Solution value at `t in [t0 - h, t_end]`.
    ///
    /// Exact at knots; the initial function before `t0`; cubic Hermite between
    /// knots.
    pub fn eval(&self, t: f64) -> Result<StatePoint> {
        let lo = self.t0 - self.max_delay;
        let hi = self.t_end();
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfDomain { t, lo, hi });
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> StatePoint {
        if t <= self.t0 {
            return self.phi.eval(t - self.t0);
        }
        let i = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(exact) => return self.states[exact],
            Err(ins) => (ins - 1).min(self.times.len() - 2),
        };
        hermite(
            self.times[i],
            self.times[i + 1],
            &self.states[i],
            &self.derivs[i],
            &self.states[i + 1],
            &self.derivs[i + 1],
            t,
        )
    }

    /// History-segment accessor at time `t in [t0, t_end]`: maps
    /// `theta in [-h, 0]` to `eval(t + theta)`.
    pub fn segment_at(&self, t: f64) -> Result<TrajectorySegment<'_>> {
        if !(t >= self.t0 && t <= self.t_end()) {
            return Err(Error::OutOfDomain {
                t,
                lo: self.t0,
                hi: self.t_end(),
            });
        }
        Ok(TrajectorySegment { traj: self, at: t })
    }

    /// Writes `t,T,Tstar,V,Y,A` rows for every `stride`-th knot at full
    /// precision (17 significant digits).
    pub fn write_csv<W: Write>(&self, w: &mut W, stride: usize) -> std::io::Result<()> {
        let stride = stride.max(1);
        writeln!(w, "t,T,Tstar,V,Y,A")?;
        for (i, t) in self.times.iter().enumerate() {
            if i % stride != 0 {
                continue;
            }
            let s = &self.states[i];
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_full(*t),
                fmt_full(s.t),
                fmt_full(s.tstar),
                fmt_full(s.v),
                fmt_full(s.y),
                fmt_full(s.a)
            )?;
        }
        Ok(())
    }
}

/// Full-precision decimal formatting: 17 significant digits round-trips f64.
pub fn fmt_full(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Cubic Hermite interpolant matching values and derivatives at both ends.
#[allow(clippy::too_many_arguments)]
fn hermite(
    t0: f64,
    t1: f64,
    y0: &StatePoint,
    d0: &StateDerivative,
    y1: &StatePoint,
    d1: &StateDerivative,
    t: f64,
) -> StatePoint {
    let dt = t1 - t0;
    let s = (t - t0) / dt;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    y0.scaled(h00)
        .add(d0.scaled(h10 * dt))
        .add(y1.scaled(h01))
        .add(d1.scaled(h11 * dt))
}

/// Hermite evaluation on a single provisional step, shared with the integrator.
pub(crate) fn hermite_step(
    t0: f64,
    t1: f64,
    y0: &StatePoint,
    d0: &StateDerivative,
    y1: &StatePoint,
    d1: &StateDerivative,
    t: f64,
) -> StatePoint {
    hermite(t0, t1, y0, d0, y1, d1, t)
}

/// View of a trajectory's history at a fixed time.
pub struct TrajectorySegment<'a> {
    traj: &'a Trajectory,
    at: f64,
}

impl Segment for TrajectorySegment<'_> {
    fn value(&self, theta: f64) -> StatePoint {
        let theta = theta.clamp(-self.traj.max_delay, 0.0);
        self.traj.eval_unchecked(self.at + theta)
    }
    fn max_delay(&self) -> f64 {
        self.traj.max_delay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic_traj(step: f64) -> Trajectory {
        // y(t) = t^3 in every coordinate, dy = 3 t^2, on [0, 2]
        let mut knots = Vec::new();
        let mut t = 0.0_f64;
        while t <= 2.0 + 1e-12 {
            let y = StatePoint::new(t.powi(3), t.powi(3), t.powi(3), t.powi(3), t.powi(3));
            let dy = StatePoint::new(
                3.0 * t * t,
                3.0 * t * t,
                3.0 * t * t,
                3.0 * t * t,
                3.0 * t * t,
            );
            knots.push((t, y, dy));
            t += step;
        }
        Trajectory::from_knots(InitialFunction::constant(StatePoint::ZERO), 0.0, 1.0, knots)
            .unwrap()
    }

    #[test]
    fn exact_at_knots() {
        let traj = cubic_traj(0.25);
        for &t in traj.times() {
            let idx = traj.times().iter().position(|&x| x == t).unwrap();
            assert_eq!(traj.eval(t).unwrap(), traj.states()[idx]);
        }
    }

    #[test]
    fn constant_initial_function_before_t0() {
        let c = StatePoint::new(1.0, 2.0, 3.0, 4.0, 5.0);
        let traj = Trajectory::from_knots(
            InitialFunction::constant(c),
            0.0,
            1.0,
            vec![(0.0, c, StatePoint::ZERO), (1.0, c, StatePoint::ZERO)],
        )
        .unwrap();
        for t in [-1.0, -0.5, -0.25, 0.0] {
            assert_eq!(traj.eval(t).unwrap(), c);
        }
    }

    /// Cubic Hermite reproduces cubics exactly; oracle is direct polynomial
    /// evaluation at midpoints.
    #[test]
    fn reproduces_cubic_polynomials() {
        let traj = cubic_traj(0.25);
        let mut t = 0.125;
        while t < 2.0 {
            let got = traj.eval(t).unwrap().t;
            let want = t.powi(3);
            assert!(
                (got - want).abs() <= 1e-13 * want.abs().max(1e-3),
                "t = {t}: {got} vs {want}"
            );
            t += 0.25;
        }
    }

    /// Interpolation error on sin t is O(dt^4): halving the spacing shrinks
    /// the max midpoint error by roughly 16.
    #[test]
    fn fourth_order_interpolation() {
        let build = |step: f64| {
            let mut knots = Vec::new();
            let mut t = 0.0_f64;
            while t <= 3.0 + 1e-12 {
                let y = StatePoint::new(t.sin(), 0.0, 0.0, 0.0, 0.0);
                let dy = StatePoint::new(t.cos(), 0.0, 0.0, 0.0, 0.0);
                knots.push((t, y, dy));
                t += step;
            }
            Trajectory::from_knots(InitialFunction::constant(StatePoint::ZERO), 0.0, 1.0, knots)
                .unwrap()
        };
        let max_err = |traj: &Trajectory, step: f64| {
            let mut worst = 0.0_f64;
            let mut t = step / 2.0;
            while t < 3.0 {
                worst = worst.max((traj.eval(t).unwrap().t - t.sin()).abs());
                t += step;
            }
            worst
        };
        let coarse = max_err(&build(0.1), 0.1);
        let fine = max_err(&build(0.05), 0.05);
        let factor = coarse / fine;
        assert!(
            (12.0..=20.0).contains(&factor),
            "error reduction factor {factor}"
        );
    }

    #[test]
    fn continuity_at_knots() {
        let traj = cubic_traj(0.25);
        for &t in &traj.times()[1..traj.times().len() - 1] {
            let eps = 1e-9;
            let left = traj.eval(t - eps).unwrap().t;
            let right = traj.eval(t + eps).unwrap().t;
            let here = traj.eval(t).unwrap().t;
            assert!((left - here).abs() < 1e-7);
            assert!((right - here).abs() < 1e-7);
        }
    }

    #[test]
    fn eval_is_pure() {
        let traj = cubic_traj(0.25);
        let a = traj.eval(0.7351).unwrap();
        let b = traj.eval(0.7351).unwrap();
        assert_eq!(a.to_array(), b.to_array());
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let traj = cubic_traj(0.25);
        assert!(matches!(traj.eval(-1.5), Err(Error::OutOfDomain { .. })));
        assert!(matches!(traj.eval(2.6), Err(Error::OutOfDomain { .. })));
        assert!(traj.segment_at(-0.1).is_err());
        assert!(traj.segment_at(2.3).is_err());
    }

    #[test]
    fn segment_accessor_definition_chain() {
        use crate::delay::{eval_delay, DelaySpec, Segment};
        let traj = cubic_traj(0.125);
        let seg = traj.segment_at(1.5).unwrap();
        // theta = 0 is the current value
        assert_eq!(seg.value(0.0).to_array(), traj.eval(1.5).unwrap().to_array());
        // constant delay lookup equals direct evaluation at t - h0
        let spec = DelaySpec::constant(0.75);
        let tau = eval_delay(&spec, &seg).unwrap();
        assert_eq!(
            seg.value(-tau).to_array(),
            traj.eval(1.5 - 0.75).unwrap().to_array()
        );
        // theta = -h at t = t0 is the left endpoint of the initial function
        let seg0 = traj.segment_at(0.0).unwrap();
        assert_eq!(
            seg0.value(-1.0).to_array(),
            traj.initial_function().eval(-1.0).to_array()
        );
    }

    #[test]
    fn from_knots_rejects_disorder() {
        let c = StatePoint::ZERO;
        let bad = Trajectory::from_knots(
            InitialFunction::constant(c),
            0.0,
            1.0,
            vec![(0.0, c, c), (0.5, c, c), (0.5, c, c)],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn csv_has_header_and_stride() {
        let traj = cubic_traj(0.5);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,T,Tstar,V,Y,A");
        // knots at 0, 0.5, ..., 2.0 -> stride 2 keeps 0, 1.0, 2.0
        assert_eq!(lines.len(), 1 + 3);
        assert!(lines[1].starts_with("0.0000000000000000e0,"));
    }
}
