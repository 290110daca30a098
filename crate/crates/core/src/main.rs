use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use virosim::config::{describe_keys, parse_config, InitSpec, RunConfig};
use virosim::lyapunov::Functional;
use virosim::runner;

#[derive(Parser)]
#[command(
    name = "virosim",
    about = "Within-host viral dynamics with state-dependent intracellular delay: \
             simulation, equilibrium and Lyapunov stability diagnostics",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat `section.key = value`; omit for defaults).
    #[arg(long, value_name = "PATH")]
    config: Option<String>,
    /// Output file (defaults to `output.path` from the config, else stdout).
    #[arg(long, value_name = "PATH")]
    out: Option<String>,
    /// Override `init.seed` (random initial conditions only).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override `sim.t_end`.
    #[arg(long = "t-end", value_name = "X")]
    t_end: Option<f64>,
    /// Override `sim.dt`.
    #[arg(long, value_name = "X")]
    dt: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FunctionalArg {
    U1,
    Usdd,
}

impl From<FunctionalArg> for Functional {
    fn from(f: FunctionalArg) -> Self {
        match f {
            FunctionalArg::U1 => Functional::U1,
            FunctionalArg::Usdd => Functional::Sdd,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the delay system and write the trajectory CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Print the interior equilibrium, hypothesis verdicts and residual.
    Equilibrium {
        #[command(flatten)]
        common: Common,
    },
    /// Emit Lyapunov diagnostics `t,U,D,S,dU_fd,eta,deta_fd` along a run.
    Lyapunov {
        #[command(flatten)]
        common: Common,
        /// Which functional to evaluate.
        #[arg(long, value_enum, default_value = "u1")]
        functional: FunctionalArg,
    },
    /// Run the invariant suite and print a pass/fail table.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Rerun the experiment across a parameter range (comma-separated keys
    /// all receive the swept value) and report Lyapunov-decrease verdicts.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config key(s) to sweep, e.g. `delay.a1,delay.a2`.
        #[arg(long = "sweep-key", value_name = "KEY", required = true)]
        sweep_key: String,
        #[arg(long = "sweep-from", value_name = "A", required = true, allow_hyphen_values = true)]
        sweep_from: f64,
        #[arg(long = "sweep-to", value_name = "B", required = true, allow_hyphen_values = true)]
        sweep_to: f64,
        #[arg(long = "sweep-steps", value_name = "N", default_value = "20")]
        sweep_steps: usize,
        #[arg(long, value_enum, default_value = "u1")]
        functional: FunctionalArg,
    },
}

fn keys_help() -> String {
    let mut s = String::from("Config keys (flat `section.key = value`, `#` comments):\n");
    for (key, default, desc) in describe_keys() {
        s.push_str(&format!("  {key:24} default {default:<28} {desc}\n"));
    }
    s.push_str("\nExit status: 0 all checks passed, 1 a check or run failed, 2 usage error.\n");
    s
}

fn load_config(common: &Common) -> virosim::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(t_end) = common.t_end {
        cfg.sim.t_end = t_end;
    }
    if let Some(dt) = common.dt {
        cfg.sim.dt = dt;
    }
    if let Some(seed) = common.seed {
        match &mut cfg.init {
            InitSpec::RandomOmegaC { seed: s, .. } => *s = seed,
            _ => eprintln!(
                "warning: --seed has no effect for init.kind = {}",
                cfg.init.kind_name()
            ),
        }
    }
    cfg.sim.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> virosim::Result<bool> {
    match cli.cmd {
        Cmd::Simulate { common } => {
            let cfg = load_config(&common)?;
            runner::run_simulate(&cfg, common.out.as_deref())?;
            Ok(true)
        }
        Cmd::Equilibrium { common } => {
            let cfg = load_config(&common)?;
            runner::run_equilibrium(&cfg, common.out.as_deref())?;
            Ok(true)
        }
        Cmd::Lyapunov { common, functional } => {
            let cfg = load_config(&common)?;
            runner::run_lyapunov(&cfg, functional.into(), common.out.as_deref())?;
            Ok(true)
        }
        Cmd::Verify { common } => {
            let cfg = load_config(&common)?;
            runner::run_verify(&cfg)
        }
        Cmd::Sweep {
            common,
            sweep_key,
            sweep_from,
            sweep_to,
            sweep_steps,
            functional,
        } => {
            let cfg = load_config(&common)?;
            let args = runner::SweepArgs {
                keys: sweep_key.split(',').map(|s| s.trim().to_string()).collect(),
                from: sweep_from,
                to: sweep_to,
                steps: sweep_steps,
            };
            runner::run_sweep(&cfg, &args, functional.into(), common.out.as_deref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(keys_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(runner::exit_code_for(&err) as u8)
        }
    }
}
