//! Run configuration: strict flat `section.key = value` documents.
//!
//! Unknown keys, duplicate keys, malformed numbers and sign-constraint
//! violations are parse errors carrying the offending line number. Every key
//! has a default; the empty document is the reference configuration.

use std::collections::HashMap;

use crate::delay::DelaySpec;
use crate::error::{Error, Result};
use crate::integrator::SimConfig;
use crate::model::{ModelParams, StatePoint};

/// Delay-family selection with per-family parameters. Pointwise-quadratic
/// centers default to the equilibrium when left unset.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayConfig {
    Constant {
        h0: f64,
    },
    PointwiseQuadratic {
        h0: f64,
        a1: f64,
        a2: f64,
        etamin: f64,
        center_t: Option<f64>,
        center_v: Option<f64>,
    },
    Reciprocal {
        hmin: f64,
        hmax: f64,
        cv: f64,
    },
}

impl DelayConfig {
    pub fn family_name(&self) -> &'static str {
        match self {
            DelayConfig::Constant { .. } => "constant",
            DelayConfig::PointwiseQuadratic { .. } => "pointwise_quadratic",
            DelayConfig::Reciprocal { .. } => "reciprocal",
        }
    }

    /// Concrete delay functional; `eq_center` fills unset quadratic centers.
    pub fn to_spec(&self, eq_center: Option<(f64, f64)>) -> Result<DelaySpec> {
        Ok(match *self {
            DelayConfig::Constant { h0 } => DelaySpec::Constant { h0 },
            DelayConfig::PointwiseQuadratic {
                h0,
                a1,
                a2,
                etamin,
                center_t,
                center_v,
            } => {
                let (ct, cv) = match (center_t, center_v, eq_center) {
                    (Some(t), Some(v), _) => (t, v),
                    (t, v, Some((et, ev))) => (t.unwrap_or(et), v.unwrap_or(ev)),
                    _ => {
                        return Err(Error::Domain(
                            "pointwise-quadratic centers unset and no equilibrium available"
                                .into(),
                        ))
                    }
                };
                DelaySpec::PointwiseQuadratic {
                    h0,
                    a1,
                    a2,
                    center_t: ct,
                    center_v: cv,
                    etamin,
                }
            }
            DelayConfig::Reciprocal { hmin, hmax, cv } => DelaySpec::Reciprocal { hmin, hmax, cv },
        })
    }
}

/// Initial-condition selection.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// Constant history at the given state.
    Constant(StatePoint),
    /// Seeded piecewise-linear draw inside the invariant box.
    RandomOmegaC { seed: u64, lipschitz_cap: f64 },
    /// Constant history at the equilibrium shifted by `epsilon` in every
    /// coordinate.
    EquilibriumPerturbation { epsilon: f64 },
}

impl InitSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            InitSpec::Constant(_) => "constant",
            InitSpec::RandomOmegaC { .. } => "random_omega_c",
            InitSpec::EquilibriumPerturbation { .. } => "equilibrium_perturbation",
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub delay: DelayConfig,
    pub sim: SimConfig,
    pub init: InitSpec,
    /// History-integral quadrature panels.
    pub panels: usize,
    /// Output path; subcommands may override via `--out`.
    pub output: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = ModelParams::p0();
        Self {
            params,
            delay: DelayConfig::Constant { h0: params.h },
            sim: SimConfig::default(),
            init: InitSpec::EquilibriumPerturbation { epsilon: 1e-2 },
            panels: 64,
            output: None,
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::ConfigParse {
        line,
        msg: msg.into(),
    }
}

struct Raw {
    line: usize,
    value: String,
}

/// Positivity class of a numeric key.
#[derive(Clone, Copy, PartialEq)]
enum Sign {
    Positive,
    NonNegative,
    Any,
}

const MODEL_KEYS: &[(&str, Sign)] = &[
    ("model.lambda", Sign::Positive),
    ("model.d", Sign::Positive),
    ("model.k", Sign::NonNegative),
    ("model.k1", Sign::NonNegative),
    ("model.k2", Sign::NonNegative),
    ("model.delta", Sign::Positive),
    ("model.p", Sign::Positive),
    ("model.N", Sign::Positive),
    ("model.c", Sign::Positive),
    ("model.q", Sign::Positive),
    ("model.beta", Sign::Positive),
    ("model.gamma", Sign::Positive),
    ("model.g", Sign::Positive),
    ("model.b", Sign::Positive),
    ("model.omega", Sign::Positive),
    ("model.h", Sign::Positive),
];

/// Key reference for `--help` output: name, default, description.
pub fn describe_keys() -> Vec<(&'static str, &'static str, &'static str)> {
    vec![
        ("model.lambda", "10.0", "cell production rate (> 0)"),
        ("model.d", "0.1", "uninfected death rate (> 0)"),
        ("model.k", "0.5", "infection rate constant (>= 0)"),
        ("model.k1", "0.01", "response saturation in T (>= 0)"),
        ("model.k2", "0.05", "response saturation in V (>= 0)"),
        ("model.delta", "0.5", "infected death rate (> 0)"),
        ("model.p", "1.0", "CTL killing rate (> 0)"),
        ("model.N", "10.0", "burst size (> 0)"),
        ("model.c", "3.0", "virus clearance rate (> 0)"),
        ("model.q", "1.0", "antibody neutralization rate (> 0)"),
        ("model.beta", "0.2", "CTL activation rate (> 0)"),
        ("model.gamma", "0.1", "CTL decay rate (> 0)"),
        ("model.g", "0.5", "antibody activation rate (> 0)"),
        ("model.b", "0.1", "antibody decay rate (> 0)"),
        ("model.omega", "0.1", "pre-production death exponent (> 0)"),
        ("model.h", "1.0", "maximal delay (> 0)"),
        (
            "delay.family",
            "constant",
            "constant | pointwise_quadratic | reciprocal",
        ),
        ("delay.h0", "model.h (constant), model.h/2 (quadratic)", "base delay"),
        ("delay.a1", "0.01", "quadratic curvature in T (>= 0)"),
        ("delay.a2", "0.01", "quadratic curvature in V (>= 0)"),
        ("delay.etamin", "0.1 * h0", "quadratic clamp floor (> 0)"),
        ("delay.center_t", "equilibrium That", "quadratic center in T"),
        ("delay.center_v", "equilibrium Vhat", "quadratic center in V"),
        ("delay.hmin", "0.2 * model.h", "reciprocal minimum (> 0)"),
        ("delay.hmax", "model.h", "reciprocal maximum"),
        ("delay.cv", "1.0", "reciprocal V sensitivity (>= 0)"),
        ("sim.dt", "0.01", "step size (> 0)"),
        ("sim.t_end", "100.0", "final time (>= 0)"),
        ("sim.fp_tol", "1e-12", "overlap fixed-point tolerance (> 0)"),
        ("sim.fp_maxiter", "25", "overlap iteration cap (>= 1)"),
        ("sim.output_stride", "1", "knots per CSV row (>= 1)"),
        (
            "init.kind",
            "equilibrium_perturbation",
            "constant | random_omega_c | equilibrium_perturbation",
        ),
        ("init.T", "(required for constant)", "constant initial T"),
        ("init.Tstar", "(required for constant)", "constant initial Tstar"),
        ("init.V", "(required for constant)", "constant initial V"),
        ("init.Y", "(required for constant)", "constant initial Y"),
        ("init.A", "(required for constant)", "constant initial A"),
        ("init.epsilon", "0.01", "perturbation size (> 0)"),
        ("init.seed", "0", "draw seed (integer >= 0)"),
        ("init.lipschitz_cap", "1.0", "max initial slope in each coordinate (>= 0)"),
        ("quadrature.panels", "64", "history-integral Simpson panels (even, >= 4)"),
        ("output.path", "(none)", "default output file"),
    ]
}

fn known_key(key: &str) -> bool {
    describe_keys().iter().any(|(k, _, _)| *k == key)
}

/// Parses a configuration document. Strict: unknown or duplicate keys and
/// constraint violations are errors with line numbers; anything omitted takes
/// its default.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut raw: HashMap<String, Raw> = HashMap::new();
    for (idx, line_text) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match line_text.split_once('#') {
            Some((before, _)) => before,
            None => line_text,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, "expected `section.key = value`"))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !known_key(&key) {
            return Err(parse_err(line, format!("unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(parse_err(line, format!("empty value for `{key}`")));
        }
        if raw
            .insert(key.clone(), Raw { line, value })
            .is_some()
        {
            return Err(parse_err(line, format!("duplicate key `{key}`")));
        }
    }

    let get_f64 = |raw: &HashMap<String, Raw>, key: &str, sign: Sign| -> Result<Option<f64>> {
        match raw.get(key) {
            None => Ok(None),
            Some(r) => {
                let v: f64 = r
                    .value
                    .parse()
                    .map_err(|_| parse_err(r.line, format!("`{key}`: not a number: {}", r.value)))?;
                if !v.is_finite() {
                    return Err(parse_err(r.line, format!("`{key}` must be finite")));
                }
                match sign {
                    Sign::Positive if !(v > 0.0) => {
                        Err(parse_err(r.line, format!("`{key}` must be strictly positive")))
                    }
                    Sign::NonNegative if !(v >= 0.0) => {
                        Err(parse_err(r.line, format!("`{key}` must be non-negative")))
                    }
                    _ => Ok(Some(v)),
                }
            }
        }
    };
    let get_usize = |raw: &HashMap<String, Raw>, key: &str, min: usize| -> Result<Option<usize>> {
        match raw.get(key) {
            None => Ok(None),
            Some(r) => {
                let v: usize = r
                    .value
                    .parse()
                    .map_err(|_| parse_err(r.line, format!("`{key}`: not an integer: {}", r.value)))?;
                if v < min {
                    return Err(parse_err(r.line, format!("`{key}` must be at least {min}")));
                }
                Ok(Some(v))
            }
        }
    };

    // model section
    let mut params = ModelParams::p0();
    for &(key, sign) in MODEL_KEYS {
        if let Some(v) = get_f64(&raw, key, sign)? {
            let field = key.strip_prefix("model.").unwrap();
            *model_field_mut(&mut params, field).unwrap() = v;
        }
    }

    // delay section
    let family = match raw.get("delay.family") {
        None => "constant".to_string(),
        Some(r) => r.value.clone(),
    };
    let family_line = raw.get("delay.family").map(|r| r.line).unwrap_or(0);
    let allowed: &[&str] = match family.as_str() {
        "constant" => &["delay.family", "delay.h0"],
        "pointwise_quadratic" => &[
            "delay.family",
            "delay.h0",
            "delay.a1",
            "delay.a2",
            "delay.etamin",
            "delay.center_t",
            "delay.center_v",
        ],
        "reciprocal" => &["delay.family", "delay.hmin", "delay.hmax", "delay.cv"],
        other => {
            return Err(parse_err(
                family_line,
                format!("unknown delay family `{other}`"),
            ))
        }
    };
    for key in raw.keys().filter(|k| k.starts_with("delay.")) {
        if !allowed.contains(&key.as_str()) {
            let line = raw[key].line;
            return Err(parse_err(
                line,
                format!("key `{key}` does not apply to delay family `{family}`"),
            ));
        }
    }
    let delay = match family.as_str() {
        "constant" => DelayConfig::Constant {
            h0: get_f64(&raw, "delay.h0", Sign::Positive)?.unwrap_or(params.h),
        },
        "pointwise_quadratic" => {
            let h0 = get_f64(&raw, "delay.h0", Sign::Positive)?.unwrap_or(params.h / 2.0);
            DelayConfig::PointwiseQuadratic {
                h0,
                a1: get_f64(&raw, "delay.a1", Sign::NonNegative)?.unwrap_or(0.01),
                a2: get_f64(&raw, "delay.a2", Sign::NonNegative)?.unwrap_or(0.01),
                etamin: get_f64(&raw, "delay.etamin", Sign::Positive)?.unwrap_or(0.1 * h0),
                center_t: get_f64(&raw, "delay.center_t", Sign::Any)?,
                center_v: get_f64(&raw, "delay.center_v", Sign::Any)?,
            }
        }
        "reciprocal" => DelayConfig::Reciprocal {
            hmin: get_f64(&raw, "delay.hmin", Sign::Positive)?.unwrap_or(0.2 * params.h),
            hmax: get_f64(&raw, "delay.hmax", Sign::Positive)?.unwrap_or(params.h),
            cv: get_f64(&raw, "delay.cv", Sign::NonNegative)?.unwrap_or(1.0),
        },
        _ => unreachable!(),
    };

    // sim section
    let sim = SimConfig {
        dt: get_f64(&raw, "sim.dt", Sign::Positive)?.unwrap_or(1e-2),
        t_end: get_f64(&raw, "sim.t_end", Sign::NonNegative)?.unwrap_or(100.0),
        fp_tol: get_f64(&raw, "sim.fp_tol", Sign::Positive)?.unwrap_or(1e-12),
        fp_maxiter: get_usize(&raw, "sim.fp_maxiter", 1)?.unwrap_or(25),
        output_stride: get_usize(&raw, "sim.output_stride", 1)?.unwrap_or(1),
    };

    // init section
    let kind = match raw.get("init.kind") {
        None => "equilibrium_perturbation".to_string(),
        Some(r) => r.value.clone(),
    };
    let kind_line = raw.get("init.kind").map(|r| r.line).unwrap_or(0);
    let allowed: &[&str] = match kind.as_str() {
        "constant" => &[
            "init.kind",
            "init.T",
            "init.Tstar",
            "init.V",
            "init.Y",
            "init.A",
        ],
        "random_omega_c" => &["init.kind", "init.seed", "init.lipschitz_cap"],
        "equilibrium_perturbation" => &["init.kind", "init.epsilon"],
        other => {
            return Err(parse_err(
                kind_line,
                format!("unknown init kind `{other}`"),
            ))
        }
    };
    for key in raw.keys().filter(|k| k.starts_with("init.")) {
        if !allowed.contains(&key.as_str()) {
            let line = raw[key].line;
            return Err(parse_err(
                line,
                format!("key `{key}` does not apply to init kind `{kind}`"),
            ));
        }
    }
    let init = match kind.as_str() {
        "constant" => {
            let mut vals = [0.0; 5];
            for (i, key) in ["init.T", "init.Tstar", "init.V", "init.Y", "init.A"]
                .iter()
                .enumerate()
            {
                vals[i] = get_f64(&raw, key, Sign::NonNegative)?.ok_or_else(|| {
                    parse_err(kind_line, format!("init.kind = constant requires `{key}`"))
                })?;
            }
            InitSpec::Constant(StatePoint::from_array(vals))
        }
        "random_omega_c" => InitSpec::RandomOmegaC {
            seed: match raw.get("init.seed") {
                None => 0,
                Some(r) => r.value.parse().map_err(|_| {
                    parse_err(r.line, format!("`init.seed`: not an integer: {}", r.value))
                })?,
            },
            lipschitz_cap: get_f64(&raw, "init.lipschitz_cap", Sign::NonNegative)?.unwrap_or(1.0),
        },
        "equilibrium_perturbation" => InitSpec::EquilibriumPerturbation {
            epsilon: get_f64(&raw, "init.epsilon", Sign::Positive)?.unwrap_or(1e-2),
        },
        _ => unreachable!(),
    };

    let panels = get_usize(&raw, "quadrature.panels", 4)?.unwrap_or(64);
    if panels % 2 != 0 {
        let line = raw.get("quadrature.panels").map(|r| r.line).unwrap_or(0);
        return Err(parse_err(line, "`quadrature.panels` must be even"));
    }
    let output = raw.get("output.path").map(|r| r.value.clone());

    let cfg = RunConfig {
        params,
        delay,
        sim,
        init,
        panels,
        output,
    };
    cfg.params.validate()?;
    cfg.sim.validate()?;
    Ok(cfg)
}

fn model_field_mut<'a>(params: &'a mut ModelParams, field: &str) -> Option<&'a mut f64> {
    Some(match field {
        "lambda" => &mut params.lambda,
        "d" => &mut params.d,
        "k" => &mut params.k,
        "k1" => &mut params.k1,
        "k2" => &mut params.k2,
        "delta" => &mut params.delta,
        "p" => &mut params.p,
        "N" => &mut params.n,
        "c" => &mut params.c,
        "q" => &mut params.q,
        "beta" => &mut params.beta,
        "gamma" => &mut params.gamma,
        "g" => &mut params.g,
        "b" => &mut params.b,
        "omega" => &mut params.omega,
        "h" => &mut params.h,
        _ => return None,
    })
}

/// Canonical text form; `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    let p = &cfg.params;
    for (key, val) in [
        ("model.lambda", p.lambda),
        ("model.d", p.d),
        ("model.k", p.k),
        ("model.k1", p.k1),
        ("model.k2", p.k2),
        ("model.delta", p.delta),
        ("model.p", p.p),
        ("model.N", p.n),
        ("model.c", p.c),
        ("model.q", p.q),
        ("model.beta", p.beta),
        ("model.gamma", p.gamma),
        ("model.g", p.g),
        ("model.b", p.b),
        ("model.omega", p.omega),
        ("model.h", p.h),
    ] {
        kv(key, format!("{val:?}"));
    }
    kv("delay.family", cfg.delay.family_name().to_string());
    match cfg.delay {
        DelayConfig::Constant { h0 } => kv("delay.h0", format!("{h0:?}")),
        DelayConfig::PointwiseQuadratic {
            h0,
            a1,
            a2,
            etamin,
            center_t,
            center_v,
        } => {
            kv("delay.h0", format!("{h0:?}"));
            kv("delay.a1", format!("{a1:?}"));
            kv("delay.a2", format!("{a2:?}"));
            kv("delay.etamin", format!("{etamin:?}"));
            if let Some(t) = center_t {
                kv("delay.center_t", format!("{t:?}"));
            }
            if let Some(v) = center_v {
                kv("delay.center_v", format!("{v:?}"));
            }
        }
        DelayConfig::Reciprocal { hmin, hmax, cv } => {
            kv("delay.hmin", format!("{hmin:?}"));
            kv("delay.hmax", format!("{hmax:?}"));
            kv("delay.cv", format!("{cv:?}"));
        }
    }
    kv("sim.dt", format!("{:?}", cfg.sim.dt));
    kv("sim.t_end", format!("{:?}", cfg.sim.t_end));
    kv("sim.fp_tol", format!("{:?}", cfg.sim.fp_tol));
    kv("sim.fp_maxiter", cfg.sim.fp_maxiter.to_string());
    kv("sim.output_stride", cfg.sim.output_stride.to_string());
    kv("init.kind", cfg.init.kind_name().to_string());
    match cfg.init {
        InitSpec::Constant(s) => {
            kv("init.T", format!("{:?}", s.t));
            kv("init.Tstar", format!("{:?}", s.tstar));
            kv("init.V", format!("{:?}", s.v));
            kv("init.Y", format!("{:?}", s.y));
            kv("init.A", format!("{:?}", s.a));
        }
        InitSpec::RandomOmegaC {
            seed,
            lipschitz_cap,
        } => {
            kv("init.seed", seed.to_string());
            kv("init.lipschitz_cap", format!("{lipschitz_cap:?}"));
        }
        InitSpec::EquilibriumPerturbation { epsilon } => {
            kv("init.epsilon", format!("{epsilon:?}"));
        }
    }
    kv("quadrature.panels", cfg.panels.to_string());
    if let Some(path) = &cfg.output {
        kv("output.path", path.clone());
    }
    out
}

/// Sets a numeric key on an existing configuration; the sweep driver applies
/// the swept value through this.
pub fn set_numeric_key(cfg: &mut RunConfig, key: &str, value: f64) -> Result<()> {
    let bad = |msg: String| Err(Error::Domain(msg));
    if let Some(field) = key.strip_prefix("model.") {
        match model_field_mut(&mut cfg.params, field) {
            Some(slot) => {
                *slot = value;
                return cfg.params.validate();
            }
            None => return bad(format!("unknown model key `{key}`")),
        }
    }
    match (key, &mut cfg.delay) {
        ("delay.h0", DelayConfig::Constant { h0 })
        | ("delay.h0", DelayConfig::PointwiseQuadratic { h0, .. }) => {
            *h0 = value;
            return Ok(());
        }
        ("delay.a1", DelayConfig::PointwiseQuadratic { a1, .. }) => {
            *a1 = value;
            return Ok(());
        }
        ("delay.a2", DelayConfig::PointwiseQuadratic { a2, .. }) => {
            *a2 = value;
            return Ok(());
        }
        ("delay.etamin", DelayConfig::PointwiseQuadratic { etamin, .. }) => {
            *etamin = value;
            return Ok(());
        }
        ("delay.hmin", DelayConfig::Reciprocal { hmin, .. }) => {
            *hmin = value;
            return Ok(());
        }
        ("delay.hmax", DelayConfig::Reciprocal { hmax, .. }) => {
            *hmax = value;
            return Ok(());
        }
        ("delay.cv", DelayConfig::Reciprocal { cv, .. }) => {
            *cv = value;
            return Ok(());
        }
        _ => {}
    }
    match key {
        "sim.dt" => cfg.sim.dt = value,
        "sim.t_end" => cfg.sim.t_end = value,
        "sim.fp_tol" => cfg.sim.fp_tol = value,
        "init.epsilon" => {
            if let InitSpec::EquilibriumPerturbation { epsilon } = &mut cfg.init {
                *epsilon = value;
            } else {
                return bad("init.epsilon applies to equilibrium_perturbation".into());
            }
        }
        "init.lipschitz_cap" => {
            if let InitSpec::RandomOmegaC { lipschitz_cap, .. } = &mut cfg.init {
                *lipschitz_cap = value;
            } else {
                return bad("init.lipschitz_cap applies to random_omega_c".into());
            }
        }
        _ => {
            return bad(format!(
                "key `{key}` is not sweepable for this configuration"
            ))
        }
    }
    cfg.sim.validate()
}
