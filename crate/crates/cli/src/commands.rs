use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use smpc_core::ot::entropic_objective;
use smpc_core::preset::double_integrator;
use smpc_core::{
    continuous_gramian, exact_assignment, gibbs_kernel, reachability_gramian, sinkhorn_solve, zoh_discretize,
    AgentGains, ContinuousAgent, CostMatrix, DMatrix, DiscreteAgent, Error as CoreError, KernelDomain, LinearAgent,
    ScalingState, SinkhornParams,
};

use crate::config::{config_error, ConfigError, DomainSpec, ExperimentConfig, IterSpec, ModeSpec, Preset};
use crate::experiment::{build_instance, run_all};
use crate::output::{read_matrix_csv, summary_table, write_matrix_csv, write_runs};

/// Exit status for invalid input.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numeric failures (singular Gramians, non-convergence, divergence).
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "smpc", version, about = "Sinkhorn MPC experiments for populations of linear agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run closed-loop simulations and write trajectories and summaries.
    Simulate(SimulateArgs),
    /// Solve an entropic OT problem for a cost matrix in CSV.
    Sinkhorn(SinkhornArgs),
    /// Solve the linear assignment problem for a cost matrix in CSV.
    Assign(AssignArgs),
    /// Print Gramians and closed-loop data for an agent model.
    Gramian(GramianArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON experiment config; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace agents, targets and initial box with a named instance.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of agents (line targets only).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Discrete horizon in steps.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Continuous horizon in time units.
    #[arg(long)]
    pub horizon_time: Option<f64>,
    /// Sinkhorn iterations per step; repeat for a sweep.
    #[arg(long = "s")]
    pub s: Vec<usize>,
    /// Add a run that solves Sinkhorn to convergence at every step.
    #[arg(long)]
    pub converge: bool,
    /// Add the exact-assignment baseline run.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, value_enum)]
    pub mode: Option<ModeSpec>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the effective config as JSON and exit without running.
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long)]
    pub no_svg: bool,
    /// Run sweep members concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct SinkhornArgs {
    /// Square nonnegative cost matrix, comma-separated, no header.
    pub cost: PathBuf,
    /// Regularization; 0 solves the assignment problem instead.
    #[arg(long)]
    pub epsilon: f64,
    /// Bound on the L1 marginal violation.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Plain iterations before damped Newton steps start.
    #[arg(long)]
    pub newton_after: Option<usize>,
    #[arg(long, value_enum, default_value = "log")]
    pub domain: DomainSpec,
    /// Write the coupling matrix here as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    pub cost: PathBuf,
}

#[derive(Debug, Args)]
pub struct GramianArgs {
    /// Named model; ignored when --a and --b are given.
    #[arg(long, value_enum, default_value = "double-integrator")]
    pub preset: GramianPreset,
    /// Position dimension of the double integrator.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Row-major A as JSON, e.g. '[[0,1],[0,0]]'.
    #[arg(long, requires = "b")]
    pub a: Option<String>,
    #[arg(long, requires = "a")]
    pub b: Option<String>,
    /// Treat --a/--b as a sampled model instead of discretizing them.
    #[arg(long)]
    pub discrete_matrices: bool,
    #[arg(long, value_enum, default_value = "continuous")]
    pub mode: ModeSpec,
    /// T_h for continuous models, τ_h (steps) for discrete ones.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Sampling period used to discretize continuous matrices.
    #[arg(long, default_value_t = smpc_core::preset::SAMPLING_PERIOD)]
    pub period: f64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum GramianPreset {
    DoubleIntegrator,
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Maps an error chain to [`EXIT_CONFIG`] or [`EXIT_NUMERIC`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>()
            || cause.is::<serde_json::Error>()
            || cause.is::<csv::Error>()
            || cause.is::<std::io::Error>()
        {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e.root() {
                CoreError::InvalidArgument(_) | CoreError::DimensionMismatch(_) | CoreError::InfeasibleTarget { .. } => {
                    EXIT_CONFIG
                }
                _ => EXIT_NUMERIC,
            };
        }
    }
    EXIT_NUMERIC
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Sinkhorn(a) => sinkhorn(a),
        Command::Assign(a) => assign(a),
        Command::Gramian(a) => gramian(a),
    }
}

/// Config file (or defaults) with the command-line overrides applied.
pub fn effective_config(a: &SimulateArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    match (a.preset, a.n) {
        (Some(p), n) => cfg.apply_preset(p, n),
        (None, Some(n)) => cfg.set_agent_count(n)?,
        (None, None) => {}
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(t) = a.tau {
        cfg.tau_h = t;
    }
    if let Some(t) = a.horizon_time {
        cfg.t_h = t;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if !a.s.is_empty() || a.converge {
        cfg.sweep = a.s.iter().map(|&s| IterSpec::Fixed(s)).collect();
        if a.converge {
            cfg.sweep.push(IterSpec::CONVERGE);
        }
    }
    if a.baseline {
        cfg.baseline = true;
    }
    if let Some(o) = &a.out {
        cfg.output.dir = o.clone();
    }
    if a.no_svg {
        cfg.output.svg = false;
    }
    if a.parallel {
        cfg.parallel = true;
    }
    if cfg.sweep.iter().any(|s| *s == IterSpec::Fixed(0)) {
        return Err(config_error("Sinkhorn iterations per step must be positive"));
    }
    Ok(cfg)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = effective_config(&a)?;
    if a.dump_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let runs = run_all(&cfg)?;
    let targets = build_instance(&cfg)?.targets.targets().to_vec();
    let dirs = write_runs(&cfg, &targets, &runs)?;
    print!("{}", summary_table(&runs));
    for d in dirs {
        log::info!("wrote {}", d.display());
    }
    Ok(())
}

fn load_cost(path: &PathBuf) -> Result<CostMatrix> {
    Ok(CostMatrix::new(read_matrix_csv(path)?)?)
}

fn sinkhorn(a: SinkhornArgs) -> Result<()> {
    if a.epsilon == 0.0 {
        return assign(AssignArgs { cost: a.cost });
    }
    let cost = load_cost(&a.cost)?;
    let domain = match a.domain {
        DomainSpec::Log => KernelDomain::Log,
        DomainSpec::Linear => KernelDomain::Linear,
    };
    let kernel = gibbs_kernel(&cost, a.epsilon, domain)?;
    let params = SinkhornParams {
        tol: a.tol,
        max_iter: a.max_iter,
        newton_after: a.newton_after,
    };
    let sol = sinkhorn_solve(&kernel, &ScalingState::uniform(cost.n()), &params)?;
    if let Some(out) = &a.out {
        write_matrix_csv(out, sol.coupling.matrix())?;
    }
    let report = json!({
        "n": cost.n(),
        "epsilon": a.epsilon,
        "iterations": sol.iterations,
        "violation": sol.coupling.marginal_violation(),
        "entropic_cost": entropic_objective(&cost, &sol.coupling, a.epsilon),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn assign(a: AssignArgs) -> Result<()> {
    let cost = load_cost(&a.cost)?;
    let result = exact_assignment(&cost);
    let report = json!({ "sigma": result.sigma, "cost": result.cost });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse_matrix(text: &str, what: &str) -> Result<DMatrix<f64>> {
    let v: Vec<Vec<f64>> = serde_json::from_str(text).with_context(|| format!("parsing --{what}"))?;
    let c = v.first().map_or(0, |r| r.len());
    if v.is_empty() || c == 0 || v.iter().any(|r| r.len() != c) {
        return Err(config_error(format!("--{what} must be a non-empty rectangular array of rows")));
    }
    Ok(DMatrix::from_fn(v.len(), c, |i, j| v[i][j]))
}

fn gains_json(g: &AgentGains) -> serde_json::Value {
    json!({
        "gramian": rows(&g.gramian),
        "weight": rows(&g.weight),
        "feedback": rows(&g.feedback),
        "closed_loop": rows(&g.closed_loop),
        "rho": g.rho,
        "condition": g.condition,
    })
}

fn gramian(a: GramianArgs) -> Result<()> {
    let (continuous, discrete): (Option<ContinuousAgent>, Option<DiscreteAgent>) = match (&a.a, &a.b) {
        (Some(am), Some(bm)) => {
            let (am, bm) = (parse_matrix(am, "a")?, parse_matrix(bm, "b")?);
            if a.discrete_matrices {
                (None, Some(DiscreteAgent::new(am, bm, a.period)?))
            } else {
                (Some(ContinuousAgent::new(am, bm)?), None)
            }
        }
        _ => match a.preset {
            GramianPreset::DoubleIntegrator => (Some(double_integrator(a.dim)?), None),
        },
    };
    let result = match a.mode {
        ModeSpec::Continuous => {
            let agent = continuous.ok_or_else(|| config_error("discrete matrices need --mode discrete"))?;
            let t_h = a.horizon.unwrap_or(1.0);
            continuous_gramian(&agent, t_h).map(|g| {
                let mut v = gains_json(&g);
                v["mode"] = json!("continuous");
                v["horizon"] = json!(t_h);
                v
            })
        }
        ModeSpec::Discrete => {
            let agent = match (continuous, discrete) {
                (_, Some(d)) => d,
                (Some(c), None) => zoh_discretize(&c, a.period)?,
                (None, None) => unreachable!(),
            };
            let tau = a.horizon.unwrap_or(50.0);
            if !(tau >= 1.0 && tau.fract() == 0.0) {
                return Err(config_error(format!("discrete horizon must be a positive integer, got {tau}")));
            }
            reachability_gramian(&agent, tau as usize).map(|g| {
                let mut v = gains_json(&g);
                v["mode"] = json!("discrete");
                v["horizon"] = json!(tau as usize);
                v["period"] = json!(agent.sampling_period());
                v["a"] = json!(rows(agent.a()));
                v["b"] = json!(rows(agent.b()));
                v
            })
        }
    };
    match result {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(())
        }
        Err(CoreError::NearSingularGramian { condition }) => {
            eprintln!("warning: Gramian is singular to working precision (condition number {condition:e}); the pair is not controllable over this horizon");
            Err(CoreError::NearSingularGramian { condition }.into())
        }
        Err(e) => Err(e.into()),
    }
}
