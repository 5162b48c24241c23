//! Turns an [`ExperimentConfig`] into simulator inputs, runs every requested
//! controller and condenses each trajectory into a [`Summary`].

use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smpc_core::preset::{double_integrator, grid_targets, line_targets, seeded_box};
use smpc_core::sim::CONTINUOUS_NEWTON_AFTER;
use smpc_core::{
    accumulated_cost, continuous_gramian, reachability_gramian, simulate_continuous, simulate_sinkhorn_mpc,
    simulate_unregularized_mpc, stationarity_residual, ultimate_bound_certificate, zoh_discretize, ContinuousAgent,
    DMatrix, DVector, DiscreteAgent, KernelDomain, LinearAgent, LyapunovReport, SimConfig, SinkhornIters,
    SinkhornParams, TargetSet, Trajectory,
};

use crate::config::{
    config_error, AgentSpec, DomainSpec, ExperimentConfig, InitialSpec, IterSpec, Matrices, ModeSpec, TargetSpec,
};

/// Per-step slack of the Lyapunov monotonicity check, relative to `1 + |E|`.
pub const LYAPUNOV_SLACK: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum Agents {
    Continuous(Vec<ContinuousAgent>),
    Discrete(Vec<DiscreteAgent>),
}

/// Everything a simulator needs, built and validated from a config.
#[derive(Debug, Clone)]
pub struct Instance {
    pub agents: Agents,
    pub targets: TargetSet,
    pub initial: Vec<DVector<f64>>,
}

impl Instance {
    pub fn state_dim(&self) -> usize {
        self.targets.targets()[0].len()
    }
}

/// One controller run of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Sinkhorn(IterSpec),
    /// Exact assignment at every sampling instant.
    Baseline,
    Continuous,
}

impl RunKind {
    pub fn label(&self) -> String {
        match self {
            RunKind::Sinkhorn(s) => s.label(),
            RunKind::Baseline => "baseline".into(),
            RunKind::Continuous => "continuous".into(),
        }
    }
}

/// Scalar diagnostics of one run, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub mode: ModeSpec,
    pub n_agents: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Time between recorded states.
    pub dt: f64,
    pub steps: usize,
    /// `Σ_{k,i} dt ‖u_i[k]‖²`.
    pub accumulated_cost: f64,
    /// `max_i min_j ‖x_i[K] − x_j^d‖_∞` at the final state.
    pub final_target_gap: f64,
    /// Continuous runs: largest stationarity residual at the final state.
    /// Discrete runs: `max_i ‖x_i[K] − x_i^tmp[K−1]‖`.
    pub final_residual: f64,
    /// `max_k (E[k+1] − E[k])`, continuous runs only.
    pub lyapunov_max_increase: Option<f64>,
    /// First step where `E` rises by more than the slack, continuous runs only.
    pub lyapunov_first_violation: Option<usize>,
    /// Whether every agent ends inside its ultimate bound, discrete runs only.
    pub bound_holds: Option<bool>,
    /// First step from which all agents stay inside their bounds.
    pub bound_settle_step: Option<usize>,
    /// Largest per-agent bound.
    pub bound_max: Option<f64>,
    pub sinkhorn_iterations_total: usize,
    pub sinkhorn_iterations_max: usize,
}

pub struct RunOutput {
    pub kind: RunKind,
    pub trajectory: Trajectory,
    pub summary: Summary,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(config_error(format!("{what} must be a non-empty rectangular array of rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn build_agent(m: &Matrices, cfg: &ExperimentConfig) -> Result<Result<ContinuousAgent, DiscreteAgent>> {
    let a = matrix(&m.a, "A")?;
    let b = matrix(&m.b, "B")?;
    if m.discrete {
        if cfg.mode == ModeSpec::Continuous {
            return Err(config_error("discrete matrices given for a continuous run"));
        }
        Ok(Err(DiscreteAgent::new(a, b, cfg.sampling_period)?))
    } else {
        Ok(Ok(ContinuousAgent::new(a, b)?))
    }
}

fn build_agents(cfg: &ExperimentConfig, n: usize) -> Result<Agents> {
    let models: Vec<Result<ContinuousAgent, DiscreteAgent>> = match &cfg.agents {
        AgentSpec::DoubleIntegrator { dim } => vec![Ok(double_integrator(*dim)?); n],
        AgentSpec::Shared(m) => vec![build_agent(m, cfg)?; n],
        AgentSpec::PerAgent { agents } => {
            if agents.len() != n {
                return Err(config_error(format!("{} agent models for {n} targets", agents.len())));
            }
            agents.iter().map(|m| build_agent(m, cfg)).collect::<Result<_>>()?
        }
    };
    Ok(match cfg.mode {
        ModeSpec::Continuous => Agents::Continuous(models.into_iter().map(|m| m.expect("checked above")).collect()),
        ModeSpec::Discrete => Agents::Discrete(
            models
                .into_iter()
                .map(|m| match m {
                    Ok(c) => zoh_discretize(&c, cfg.sampling_period),
                    Err(d) => Ok(d),
                })
                .collect::<smpc_core::Result<_>>()?,
        ),
    })
}

fn build_targets(spec: &TargetSpec) -> Vec<DVector<f64>> {
    match spec {
        TargetSpec::Line { count, lo, hi } => line_targets(*count, *lo, *hi),
        TargetSpec::Grid { rows, cols, lo, hi } => grid_targets(*rows, *cols, *lo, *hi),
        TargetSpec::Explicit { points } => points.iter().map(|p| vector(p)).collect(),
    }
}

fn check_dims(points: &[DVector<f64>], dim: usize, what: &str) -> Result<()> {
    match points.iter().position(|p| p.len() != dim) {
        Some(k) => Err(config_error(format!(
            "{what} {k} has {} components, agents have {dim} states",
            points[k].len()
        ))),
        None => Ok(()),
    }
}

/// Builds agents, targets (with equilibrium inputs) and initial states.
pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    if cfg.steps == 0 {
        return Err(config_error("steps must be positive"));
    }
    let targets = build_targets(&cfg.targets);
    let n = targets.len();
    if n == 0 {
        return Err(config_error("target set is empty"));
    }
    let agents = build_agents(cfg, n)?;
    let dim = match &agents {
        Agents::Continuous(a) => a[0].state_dim(),
        Agents::Discrete(a) => a[0].state_dim(),
    };
    check_dims(&targets, dim, "target")?;

    let initial = match &cfg.initial {
        InitialSpec::Box { lo, hi } => {
            if lo.len() != dim || hi.len() != dim {
                return Err(config_error(format!("initial box corners must have {dim} components")));
            }
            seeded_box(cfg.seed, n, &vector(lo), &vector(hi))?
        }
        InitialSpec::Explicit { points } => {
            if points.len() != n {
                return Err(config_error(format!("{} initial states for {n} agents", points.len())));
            }
            points.iter().map(|p| vector(p)).collect()
        }
    };
    check_dims(&initial, dim, "initial state")?;

    let targets = match &agents {
        Agents::Continuous(a) => TargetSet::new(a, targets)?,
        Agents::Discrete(a) => TargetSet::new(a, targets)?,
    };
    Ok(Instance {
        agents,
        targets,
        initial,
    })
}

/// Controller runs requested by a config, in output order.
pub fn planned_runs(cfg: &ExperimentConfig) -> Vec<RunKind> {
    match cfg.mode {
        ModeSpec::Continuous => vec![RunKind::Continuous],
        ModeSpec::Discrete => {
            let mut runs: Vec<_> = cfg.ordered_sweep().into_iter().map(RunKind::Sinkhorn).collect();
            if cfg.baseline {
                runs.push(RunKind::Baseline);
            }
            runs
        }
    }
}

/// `None` in the config starts Newton steps after the default count, zero disables them.
fn sinkhorn_params(cfg: &ExperimentConfig) -> SinkhornParams {
    let newton_after = match cfg.sinkhorn.newton_after {
        None => Some(CONTINUOUS_NEWTON_AFTER),
        Some(0) => None,
        Some(k) => Some(k),
    };
    SinkhornParams {
        tol: cfg.sinkhorn.tol,
        max_iter: cfg.sinkhorn.max_iter,
        newton_after,
    }
}

pub fn sim_config(cfg: &ExperimentConfig, kind: RunKind) -> SimConfig {
    let mut sc = match kind {
        RunKind::Continuous => {
            let mut sc = SimConfig::continuous(cfg.epsilon, cfg.t_h, cfg.steps);
            sc.step = cfg.rk4_step();
            sc
        }
        RunKind::Sinkhorn(IterSpec::Fixed(s)) => {
            SimConfig::discrete(cfg.epsilon, cfg.tau_h, SinkhornIters::Fixed(s), cfg.steps)
        }
        RunKind::Sinkhorn(IterSpec::Converge(_)) | RunKind::Baseline => {
            SimConfig::discrete(cfg.epsilon, cfg.tau_h, SinkhornIters::ToConvergence, cfg.steps)
        }
    };
    sc.sinkhorn = sinkhorn_params(cfg);
    sc.alpha0 = cfg.alpha0.as_deref().map(vector);
    sc.coupling_stride = cfg.coupling_stride;
    sc.domain = match cfg.domain {
        DomainSpec::Log => KernelDomain::Log,
        DomainSpec::Linear => KernelDomain::Linear,
    };
    sc
}

/// `max_i min_j ‖x_i − x_j^d‖_∞`.
pub fn final_target_gap(states: &[DVector<f64>], targets: &[DVector<f64>]) -> f64 {
    states
        .iter()
        .map(|x| targets.iter().map(|t| (x - t).amax()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// `max_i ‖x_i[K] − x_i^tmp[K−1]‖`.
fn temp_target_residual(traj: &Trajectory) -> f64 {
    match traj.temp_targets.last() {
        Some(tmp) => traj
            .final_states()
            .iter()
            .zip(tmp)
            .map(|(x, t)| (x - t).norm())
            .fold(0.0, f64::max),
        None => 0.0,
    }
}

pub fn run_one(cfg: &ExperimentConfig, inst: &Instance, kind: RunKind) -> Result<RunOutput> {
    let sc = sim_config(cfg, kind);
    log::info!("run {}: {} agents, {} steps", kind.label(), inst.initial.len(), cfg.steps);
    let mut summary = Summary {
        label: kind.label(),
        mode: cfg.mode,
        n_agents: inst.initial.len(),
        seed: cfg.seed,
        epsilon: cfg.epsilon,
        dt: 0.0,
        steps: cfg.steps,
        accumulated_cost: 0.0,
        final_target_gap: 0.0,
        final_residual: 0.0,
        lyapunov_max_increase: None,
        lyapunov_first_violation: None,
        bound_holds: None,
        bound_settle_step: None,
        bound_max: None,
        sinkhorn_iterations_total: 0,
        sinkhorn_iterations_max: 0,
    };
    let traj = match (&inst.agents, kind) {
        (Agents::Continuous(agents), RunKind::Continuous) => {
            let traj = simulate_continuous(agents, &inst.targets, &inst.initial, &sc)?;
            let gains = agents
                .iter()
                .map(|a| continuous_gramian(a, cfg.t_h))
                .collect::<smpc_core::Result<Vec<_>>>()?;
            let residuals = stationarity_residual(
                agents,
                &gains,
                traj.final_states(),
                &inst.targets,
                cfg.epsilon,
                &sc.sinkhorn,
            )?;
            summary.final_residual = residuals.iter().map(|(a, b)| a.max(*b)).fold(0.0, f64::max);
            let values = traj.lyapunov.clone();
            let max_increase = values
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max);
            let report = LyapunovReport { values, max_increase };
            summary.lyapunov_first_violation = report.first_violation(LYAPUNOV_SLACK);
            summary.lyapunov_max_increase = Some(report.max_increase).filter(|v| v.is_finite());
            traj
        }
        (Agents::Discrete(agents), RunKind::Sinkhorn(_) | RunKind::Baseline) => {
            let traj = if kind == RunKind::Baseline {
                simulate_unregularized_mpc(agents, &inst.targets, &inst.initial, &sc)?
            } else {
                simulate_sinkhorn_mpc(agents, &inst.targets, &inst.initial, &sc)?
            };
            let gains = agents
                .iter()
                .map(|a| reachability_gramian(a, cfg.tau_h))
                .collect::<smpc_core::Result<Vec<_>>>()?;
            let nu = match &cfg.certificate.nu {
                Some(nu) => nu.clone(),
                None => gains.iter().map(|g| 0.5 * (1.0 - g.rho)).collect(),
            };
            let cert = ultimate_bound_certificate(&gains, &inst.targets, &nu, cfg.certificate.delta)?;
            let settle = cert.verify(&traj);
            summary.bound_holds = Some(settle.is_some());
            summary.bound_settle_step = settle;
            summary.bound_max = Some(cert.agents.iter().map(|b| b.bound).fold(0.0, f64::max));
            summary.final_residual = temp_target_residual(&traj);
            traj
        }
        _ => return Err(config_error(format!("run {} does not match the agent models", kind.label()))),
    };
    summary.dt = traj.dt;
    summary.accumulated_cost = accumulated_cost(&traj, traj.dt);
    summary.final_target_gap = final_target_gap(traj.final_states(), inst.targets.targets());
    summary.sinkhorn_iterations_total = traj.sinkhorn_iterations.iter().sum();
    summary.sinkhorn_iterations_max = traj.sinkhorn_iterations.iter().copied().max().unwrap_or(0);
    Ok(RunOutput {
        kind,
        trajectory: traj,
        summary,
    })
}

/// Runs every planned controller, on a thread pool when `parallel` is set.
/// Results come back in [`planned_runs`] order either way.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    let inst = build_instance(cfg)?;
    let runs = planned_runs(cfg);
    if runs.is_empty() {
        return Err(config_error("nothing to run: empty sweep and no baseline"));
    }
    if cfg.parallel {
        runs.par_iter().map(|&k| run_one(cfg, &inst, k)).collect()
    } else {
        runs.iter().map(|&k| run_one(cfg, &inst, k)).collect()
    }
}
