//! Subcommand implementations behind the command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};

use rayon::prelude::*;

use crate::config::{set_numeric_key, InitSpec, RunConfig};
use crate::delay::{check_h1, eval_delay, ConstantSegment, DelaySpec};
use crate::equilibrium::{self, Equilibrium};
use crate::error::{Error, Result};
use crate::history::{fmt_full, InitialFunction};
use crate::integrator::{check_compatibility, integrate};
use crate::invariants::{
    absorbing_envelope_prediction, absorbing_time, gronwall_check, in_omega_c, omega_c_bounds,
    sample_initial, sample_initial_in_omega_c, sample_initial_outside, sample_trajectory,
};
use crate::lyapunov::{
    identity_bd, log_split_check, v, Functional, LyapunovEval, QuadratureConfig,
};
use crate::model::{ModelParams, StatePoint};

/// Resolves the configured delay into a concrete functional, computing the
/// equilibrium only when quadratic centers need it.
pub fn resolve_delay(cfg: &RunConfig) -> Result<DelaySpec> {
    let needs_eq = matches!(
        cfg.delay,
        crate::config::DelayConfig::PointwiseQuadratic {
            center_t: None,
            ..
        } | crate::config::DelayConfig::PointwiseQuadratic {
            center_v: None,
            ..
        }
    );
    let center = if needs_eq {
        let eq = equilibrium::equilibrium(&cfg.params)?;
        Some((eq.that, eq.vhat))
    } else {
        None
    };
    let spec = cfg.delay.to_spec(center)?;
    spec.validate(cfg.params.h)?;
    Ok(spec)
}

/// Builds the initial function selected by the configuration.
pub fn build_phi(cfg: &RunConfig) -> Result<InitialFunction> {
    match &cfg.init {
        InitSpec::Constant(state) => Ok(InitialFunction::constant(*state)),
        InitSpec::RandomOmegaC {
            seed,
            lipschitz_cap,
        } => {
            let bounds = omega_c_bounds(&cfg.params)?;
            Ok(sample_initial_in_omega_c(
                &cfg.params,
                &bounds,
                *seed,
                *lipschitz_cap,
            ))
        }
        InitSpec::EquilibriumPerturbation { epsilon } => {
            let eq = equilibrium::equilibrium(&cfg.params)?;
            Ok(InitialFunction::constant(eq.as_state().add_scaled(
                StatePoint::new(1.0, 1.0, 1.0, 1.0, 1.0),
                *epsilon,
            )))
        }
    }
}

fn open_out(path: Option<&str>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

/// `simulate`: integrate and emit the trajectory CSV. A zero final time emits
/// the header only.
pub fn run_simulate(cfg: &RunConfig, out: Option<&str>) -> Result<()> {
    let out_path = out.or(cfg.output.as_deref());
    let mut w = open_out(out_path)?;
    if cfg.sim.t_end == 0.0 {
        writeln!(w, "t,T,Tstar,V,Y,A")?;
        return Ok(());
    }
    if let Some(warning) = cfg.sim.step_size_warning(cfg.params.h) {
        eprintln!("warning: {warning}");
    }
    let delay = resolve_delay(cfg)?;
    let phi = build_phi(cfg)?;
    let traj = integrate(&cfg.params, &delay, &phi, &cfg.sim)?;
    traj.write_csv(&mut w, cfg.sim.output_stride)?;
    Ok(())
}

/// `equilibrium`: print coordinates, hypothesis verdicts with both sides, and
/// the stationary residual; optionally a CSV row.
pub fn run_equilibrium(cfg: &RunConfig, out: Option<&str>) -> Result<()> {
    let p = &cfg.params;
    let (h2l, h2r) = equilibrium::h2_sides(p);
    let that = equilibrium::solve_that(p);
    let (h3l, h3r) = equilibrium::h3_sides(p, that);
    let h2 = equilibrium::check_h2(p);
    let h3 = equilibrium::check_h3(p, that);
    println!("H2: N delta gamma g > beta c b   : {h2l:.6} > {h2r:.6} -> {h2}");
    println!("H3: lambda > d That + (delta gamma / beta) e^(omega h) : {h3l:.6} > {h3r:.6} -> {h3}");

    let eq = equilibrium::equilibrium(p)?;
    let residual = eq.residual(p);
    println!("interior equilibrium:");
    println!("  That     = {:.12}", eq.that);
    println!("  Tstarhat = {:.12}", eq.tstar_hat);
    println!("  Vhat     = {:.12}", eq.vhat);
    println!("  Yhat     = {:.12}", eq.yhat);
    println!("  Ahat     = {:.12}", eq.ahat);
    println!("stationary residual |rhs|_inf = {residual:.3e}");

    if let Some(path) = out.or(cfg.output.as_deref()) {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "That,Tstarhat,Vhat,Yhat,Ahat,h2_lhs,h2_rhs,h2,h3_lhs,h3_rhs,h3,residual"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_full(eq.that),
            fmt_full(eq.tstar_hat),
            fmt_full(eq.vhat),
            fmt_full(eq.yhat),
            fmt_full(eq.ahat),
            fmt_full(h2l),
            fmt_full(h2r),
            h2,
            fmt_full(h3l),
            fmt_full(h3r),
            h3,
            fmt_full(residual)
        )?;
    }
    Ok(())
}

/// `lyapunov`: diagnostics CSV `t,U,D,S,dU_fd,eta,deta_fd` along a run.
pub fn run_lyapunov(cfg: &RunConfig, functional: Functional, out: Option<&str>) -> Result<()> {
    let delay = resolve_delay(cfg)?;
    let phi = build_phi(cfg)?;
    let eq = equilibrium::equilibrium(&cfg.params)?;
    let traj = integrate(&cfg.params, &delay, &phi, &cfg.sim)?;
    let eval = LyapunovEval::new(
        &cfg.params,
        &eq,
        &delay,
        QuadratureConfig { panels: cfg.panels },
    )?;
    let series = eval.sample_series(&traj, functional, cfg.sim.output_stride)?;
    let mut w = open_out(out.or(cfg.output.as_deref()))?;
    writeln!(w, "t,U,D,S,dU_fd,eta,deta_fd")?;
    for s in series {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt_full(s.t),
            fmt_full(s.u),
            fmt_full(s.d),
            fmt_full(s.s),
            fmt_full(s.du_fd),
            fmt_full(s.eta),
            fmt_full(s.deta_fd)
        )?;
    }
    Ok(())
}

struct CheckRow {
    name: &'static str,
    pass: bool,
    detail: String,
    /// Informational rows never fail the suite.
    flag_only: bool,
}

impl CheckRow {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        Self {
            name,
            pass,
            detail,
            flag_only: false,
        }
    }
}

/// `verify`: run the invariant suite, print a pass/fail table, return overall
/// success.
pub fn run_verify(cfg: &RunConfig) -> Result<bool> {
    let p = &cfg.params;
    let mut rows: Vec<CheckRow> = Vec::new();

    let (h2l, h2r) = equilibrium::h2_sides(p);
    rows.push(CheckRow::new(
        "H2 holds",
        h2l > h2r,
        format!("{h2l:.4} > {h2r:.4}"),
    ));
    let that = equilibrium::solve_that(p);
    let (h3l, h3r) = equilibrium::h3_sides(p, that);
    rows.push(CheckRow::new(
        "H3 holds",
        h3l > h3r,
        format!("{h3l:.4} > {h3r:.4}"),
    ));
    let eq = equilibrium::equilibrium(p)?;
    let residual = eq.residual(p);
    rows.push(CheckRow::new(
        "stationary residual < 1e-9",
        residual < 1e-9,
        format!("{residual:.3e}"),
    ));

    let bounds = omega_c_bounds(p)?;
    let inside = in_omega_c(&[(0.0, eq.as_state())], &bounds, p, 0.0).ok;
    rows.push(CheckRow {
        name: "equilibrium inside invariant box",
        pass: true,
        detail: if inside {
            "inside".into()
        } else {
            "OUTSIDE (flag only)".into()
        },
        flag_only: true,
    });

    let delay_families = [
        DelaySpec::constant(p.h),
        DelaySpec::PointwiseQuadratic {
            h0: p.h / 2.0,
            a1: 0.01,
            a2: 0.01,
            center_t: eq.that,
            center_v: eq.vhat,
            etamin: 0.05 * p.h,
        },
        DelaySpec::Reciprocal {
            hmin: 0.2 * p.h,
            hmax: p.h,
            cv: 1.0,
        },
    ];

    // forward invariance and non-negativity over seeded starts
    let mut sim = cfg.sim;
    sim.t_end = 50.0;
    let mut invariant_ok = true;
    let mut nonneg_ok = true;
    let mut worst_detail = String::from("all runs inside");
    let mut gronwall_ok = true;
    'outer: for delay in &delay_families {
        for seed in 0..10u64 {
            let phi = sample_initial_in_omega_c(p, &bounds, seed, 1.0);
            if !in_omega_c(&sample_initial(&phi, p.h, 64), &bounds, p, 0.0).ok {
                invariant_ok = false;
                worst_detail = format!("seed {seed}: initial function outside");
                break 'outer;
            }
            let traj = integrate(p, delay, &phi, &sim)?;
            let report = in_omega_c(&sample_trajectory(&traj, 1), &bounds, p, 1e-8);
            if !report.ok {
                invariant_ok = false;
                let viol = report.first_violation.unwrap();
                worst_detail = format!(
                    "{} seed {seed}: {} violated at t = {:.3} by {:.3e}",
                    delay.family_name(),
                    viol.condition.name(),
                    viol.t,
                    viol.margin
                );
                break 'outer;
            }
            let min_coord = traj
                .states()
                .iter()
                .map(|s| s.min_coord())
                .fold(f64::INFINITY, f64::min);
            if min_coord < -1e-12 {
                nonneg_ok = false;
            }
            let trace: Vec<(f64, f64)> = traj
                .times()
                .iter()
                .zip(traj.states())
                .map(|(&t, s)| (t, s.t))
                .collect();
            if !gronwall_check(&trace, p.lambda, p.d) {
                gronwall_ok = false;
            }
        }
    }
    rows.push(CheckRow::new(
        "forward invariance (3 families x 10 seeds, t = 50)",
        invariant_ok,
        worst_detail,
    ));
    rows.push(CheckRow::new(
        "non-negativity along runs",
        nonneg_ok,
        "coordinates >= -1e-12".into(),
    ));
    rows.push(CheckRow::new(
        "Gronwall envelope on T",
        gronwall_ok,
        format!("c1/c2 = {:.3}", p.lambda / p.d),
    ));

    // absorbing entry from outside starts
    let eps = 1e-3;
    let prediction = absorbing_envelope_prediction(p, &bounds, eps)?;
    let mut absorb_ok = true;
    let mut absorb_detail = String::new();
    let mut sim_abs = cfg.sim;
    sim_abs.t_end = 40.0;
    for seed in 0..3u64 {
        let phi = sample_initial_outside(p, &bounds, seed);
        let traj = integrate(p, &delay_families[0], &phi, &sim_abs)?;
        match absorbing_time(&traj, &bounds, p, eps) {
            Some(entry) if entry <= 1.1 * prediction => {
                absorb_detail = format!("entry by {entry:.2}, envelope predicts {prediction:.1}");
            }
            Some(entry) => {
                absorb_ok = false;
                absorb_detail = format!("entry {entry:.2} after prediction {prediction:.1}");
            }
            None => {
                absorb_ok = false;
                absorb_detail = "never entered".into();
            }
        }
        if !absorb_ok {
            break;
        }
    }
    rows.push(CheckRow::new(
        "absorbing entry within envelope prediction",
        absorb_ok,
        absorb_detail,
    ));

    // two-route integral representation
    let delay = resolve_delay(cfg)?;
    let mut sim_two = cfg.sim;
    sim_two.dt = 2e-3;
    sim_two.t_end = 5.0;
    let phi = InitialFunction::constant(eq.as_state().add_scaled(
        StatePoint::new(1.0, 1.0, 1.0, 1.0, 1.0),
        1e-2,
    ));
    let traj = integrate(p, &delay, &phi, &sim_two)?;
    let dev =
        crate::invariants::oracle_integral_representation(&traj, p, &delay, 256, 20)?;
    rows.push(CheckRow::new(
        "integral representation deviation < 1e-3",
        dev < 1e-3,
        format!("{dev:.3e}"),
    ));

    // algebraic identities on random positive states
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let mut id_ok = true;
    let mut worst_id = 0.0_f64;
    for _ in 0..1000 {
        let t = rng.random_range(1e-3..bounds.tmax);
        let vv = rng.random_range(1e-3..bounds.vmax);
        let (lhs, rhs) = identity_bd(t, vv, p, &eq);
        let err = (lhs - rhs).abs() / lhs.abs().max(1.0);
        worst_id = worst_id.max(err);
        if err >= 1e-12 {
            id_ok = false;
        }
    }
    rows.push(CheckRow::new(
        "saturation identity < 1e-12",
        id_ok,
        format!("worst {worst_id:.3e}"),
    ));

    let (ll, lr) = log_split_check(2.0 * p.h, &traj, p, &eq, 0.5 * p.h)?;
    rows.push(CheckRow::new(
        "log split identity < 1e-12",
        (ll - lr).abs() < 1e-12,
        format!("|lhs - rhs| = {:.3e}", (ll - lr).abs()),
    ));

    let mut vb_ok = true;
    for i in 0..100 {
        let x = 0.9001 + 0.1998 * i as f64 / 99.0;
        let vx = v(x)?;
        let lo = (x - 1.0).powi(2) / 2.2;
        let hi = (x - 1.0).powi(2) / 1.8;
        if !(lo <= vx + 1e-16 && vx <= hi + 1e-16) {
            vb_ok = false;
        }
    }
    rows.push(CheckRow::new(
        "v quadratic envelope (delta = 0.1)",
        vb_ok,
        "lower 1/(2(1+d)), upper 1/(2(1-d))".into(),
    ));

    if let DelaySpec::PointwiseQuadratic {
        h0,
        center_t,
        center_v,
        ..
    } = &delay
    {
        let c_eta = delay.c_eta_bound()?;
        let mut grid_ok = true;
        for i in 0..=100 {
            for j in 0..=100 {
                let t = bounds.tmax * i as f64 / 100.0;
                let vv = bounds.vmax * j as f64 / 100.0;
                let seg = ConstantSegment {
                    state: StatePoint::new(t, 0.0, vv, 0.0, 0.0),
                    h: p.h,
                };
                let eta = eval_delay(&delay, &seg)?;
                let envelope = c_eta * ((t - center_t).powi(2) + (vv - center_v).powi(2));
                if (eta - h0).abs() > envelope + 1e-12 {
                    grid_ok = false;
                }
            }
        }
        rows.push(CheckRow::new(
            "delay curvature envelope on grid",
            grid_ok,
            format!("c_eta = {c_eta}"),
        ));
    }

    rows.push(CheckRow::new(
        "positivity hypothesis of the delay",
        check_h1(&delay, p.h, 100),
        delay.family_name().to_string(),
    ));

    let phi0 = build_phi(cfg)?;
    let compat = check_compatibility(&phi0, p, &delay)?;

    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut all_pass = true;
    for row in &rows {
        let verdict = if row.flag_only {
            "INFO"
        } else if row.pass {
            "PASS"
        } else {
            all_pass = false;
            "FAIL"
        };
        println!("{verdict}  {:width$}  {}", row.name, row.detail);
    }
    println!(
        "note: compatibility residual |phi'(0) - F(phi)|_inf = {compat:.3e} for the configured start"
    );
    Ok(all_pass)
}

/// Sweep request: every key receives the same swept value.
#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub keys: Vec<String>,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

struct SweepRow {
    value: f64,
    u_monotone: bool,
    max_increase: f64,
    final_dist: f64,
}

/// `sweep`: rerun the configured experiment across a parameter range and
/// report, per value, whether the Lyapunov functional decreases and how far
/// the endpoint sits from the equilibrium. Runs are independent and execute
/// in parallel; the report is ordered by the swept value.
pub fn run_sweep(
    cfg: &RunConfig,
    args: &SweepArgs,
    functional: Functional,
    out: Option<&str>,
) -> Result<()> {
    if args.steps < 1 {
        return Err(Error::Domain("sweep needs at least one step".into()));
    }
    let values: Vec<f64> = (0..args.steps)
        .map(|i| {
            if args.steps == 1 {
                args.from
            } else {
                args.from + (args.to - args.from) * i as f64 / (args.steps - 1) as f64
            }
        })
        .collect();

    let rows: Vec<Result<SweepRow>> = values
        .par_iter()
        .map(|&value| -> Result<SweepRow> {
            let mut local = cfg.clone();
            for key in &args.keys {
                set_numeric_key(&mut local, key, value)?;
            }
            let delay = resolve_delay(&local)?;
            let phi = build_phi(&local)?;
            let eq = equilibrium::equilibrium(&local.params)?;
            let traj = integrate(&local.params, &delay, &phi, &local.sim)?;
            let eval = LyapunovEval::new(
                &local.params,
                &eq,
                &delay,
                QuadratureConfig {
                    panels: local.panels,
                },
            )?;
            let series = eval.sample_series(&traj, functional, 1)?;
            let start = 2.0 * local.params.h;
            let mut max_increase = 0.0_f64;
            let mut prev: Option<f64> = None;
            for s in series.iter().filter(|s| s.t >= start) {
                if let Some(pu) = prev {
                    max_increase = max_increase.max(s.u - pu);
                }
                prev = Some(s.u);
            }
            let final_dist = traj
                .states()
                .last()
                .unwrap()
                .max_abs_diff(&eq.as_state());
            Ok(SweepRow {
                value,
                u_monotone: max_increase <= 1e-9,
                max_increase,
                final_dist,
            })
        })
        .collect();

    let mut w = open_out(out.or(cfg.output.as_deref()))?;
    writeln!(w, "key,value,u_monotone,max_increase,final_dist")?;
    let key_name = args.keys.join("+");
    for row in rows {
        let row = row?;
        writeln!(
            w,
            "{},{},{},{},{}",
            key_name,
            fmt_full(row.value),
            row.u_monotone,
            fmt_full(row.max_increase),
            fmt_full(row.final_dist)
        )?;
    }
    Ok(())
}

/// Exit-status mapping shared by the binary: 0 pass, 1 failed checks or
/// runtime failures, 2 usage and configuration errors.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::ConfigParse { .. }
        | Error::InvalidParam { .. }
        | Error::Io(_)
        | Error::UnsupportedFamily { .. }
        | Error::NeedsSaturation { .. } => 2,
        _ => 1,
    }
}

/// Equilibrium report data reused by library callers.
pub fn equilibrium_report(params: &ModelParams) -> Result<(Equilibrium, f64)> {
    let eq = equilibrium::equilibrium(params)?;
    let residual = eq.residual(params);
    Ok((eq, residual))
}
