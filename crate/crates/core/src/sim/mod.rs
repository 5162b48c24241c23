//! Closed-loop simulators and their diagnostics.
//!
//! Three controllers share the same MPC law and differ in how the coupling
//! `P` that selects each agent's temporary target is obtained:
//!
//! - [`simulate_continuous`]: the entropic optimum `P*(x)`, re-solved at every
//!   RK4 stage of the continuous closed loop.
//! - [`simulate_sinkhorn_mpc`]: a fixed number of warm-started Sinkhorn
//!   iterations per sampling instant (or a full solve).
//! - [`simulate_unregularized_mpc`]: the exact assignment at every instant.

mod continuous;
mod diagnostics;
mod discrete;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{AgentGains, Horizon, Mode, TargetSet};
use crate::ot::{CostMatrix, Coupling, KernelDomain, SinkhornParams};

pub use continuous::simulate_continuous;
pub use diagnostics::{
    accumulated_cost, lyapunov_series, stationarity_residual, ultimate_bound_certificate, AgentBound,
    LyapunovReport, UltimateBoundCert,
};
pub use discrete::{simulate_sinkhorn_mpc, simulate_unregularized_mpc};

/// Plain Sinkhorn iterations per solve before Newton steps start in continuous runs.
pub const CONTINUOUS_NEWTON_AFTER: usize = 200;

/// Number of Sinkhorn iterations per sampling instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkhornIters {
    Fixed(usize),
    ToConvergence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub epsilon: f64,
    /// `Horizon::Time` for continuous runs, `Horizon::Steps` for discrete runs.
    pub horizon: Horizon,
    pub sinkhorn_iters: SinkhornIters,
    /// RK4 step of the continuous simulator. Discrete runs use the agents' sampling period.
    pub step: f64,
    pub n_steps: usize,
    /// Initial Sinkhorn scaling; ones when absent.
    pub alpha0: Option<DVector<f64>>,
    pub sinkhorn: SinkhornParams,
    /// Keep every `coupling_stride`-th coupling; zero keeps none.
    pub coupling_stride: usize,
    pub domain: KernelDomain,
}

impl SimConfig {
    /// Continuous run with the default integration step `0.01·T_h`.
    ///
    /// Every stage needs `P*` to full tolerance, so the solver switches to
    /// Newton steps after [`CONTINUOUS_NEWTON_AFTER`] plain iterations.
    pub fn continuous(epsilon: f64, t_h: f64, n_steps: usize) -> Self {
        Self {
            epsilon,
            horizon: Horizon::Time(t_h),
            sinkhorn_iters: SinkhornIters::ToConvergence,
            step: 0.01 * t_h,
            n_steps,
            alpha0: None,
            sinkhorn: SinkhornParams {
                newton_after: Some(CONTINUOUS_NEWTON_AFTER),
                ..SinkhornParams::default()
            },
            coupling_stride: 1,
            domain: KernelDomain::Log,
        }
    }

    pub fn discrete(epsilon: f64, tau_h: usize, sinkhorn_iters: SinkhornIters, n_steps: usize) -> Self {
        Self {
            epsilon,
            horizon: Horizon::Steps(tau_h),
            sinkhorn_iters,
            step: 0.0,
            n_steps,
            alpha0: None,
            sinkhorn: SinkhornParams::default(),
            coupling_stride: 1,
            domain: KernelDomain::Log,
        }
    }

    fn validate(&self, n_agents: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let SinkhornIters::Fixed(0) = self.sinkhorn_iters {
            return Err(Error::invalid("Sinkhorn iterations per step must be positive"));
        }
        if let Some(a) = &self.alpha0 {
            if a.len() != n_agents {
                return Err(Error::DimensionMismatch(format!(
                    "alpha0 has length {}, expected {n_agents}",
                    a.len()
                )));
            }
        }
        Ok(())
    }
}

/// Recorded closed-loop run.
///
/// `states` has `n_steps + 1` entries; per-step quantities (`inputs`,
/// `temp_targets`, `sinkhorn_iterations`) have `n_steps`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// Time between recorded states.
    pub dt: f64,
    pub times: Vec<f64>,
    /// `states[k][i]` is agent `i` at step `k`.
    pub states: Vec<Vec<DVector<f64>>>,
    pub inputs: Vec<Vec<DVector<f64>>>,
    /// Barycentric temporary targets used at each step.
    pub temp_targets: Vec<Vec<DVector<f64>>>,
    /// `(step, P[step])` snapshots.
    pub couplings: Vec<(usize, Coupling)>,
    /// Log of the Sinkhorn scaling `α` carried out of each step.
    pub log_alpha: Vec<DVector<f64>>,
    pub sinkhorn_iterations: Vec<usize>,
    /// Entropic transport cost at each recorded state (continuous runs).
    pub lyapunov: Vec<f64>,
    /// Per-step assignments (unregularized baseline).
    pub assignments: Vec<Vec<usize>>,
}

impl Trajectory {
    pub fn n_agents(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn final_states(&self) -> &[DVector<f64>] {
        self.states.last().map_or(&[], |s| s.as_slice())
    }
}

/// `C_ij = ‖x_i − x_j^d‖²_{𝒢_i}`.
pub fn cost_matrix(states: &[DVector<f64>], targets: &[DVector<f64>], gains: &[AgentGains]) -> Result<CostMatrix> {
    let n = states.len();
    let dim = states.first().map_or(0, |x| x.len());
    let mut c = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(dim);
    for (i, (x, g)) in states.iter().zip(gains).enumerate() {
        for (j, t) in targets.iter().enumerate() {
            d.copy_from(x);
            d -= t;
            let q = d.dot(&(&g.weight * &d));
            c[(i, j)] = q.max(0.0);
        }
    }
    CostMatrix::new(c)
}

fn check_setup(mode: Mode, targets: &TargetSet, initial: &[DVector<f64>], n_agents: usize) -> Result<()> {
    if targets.mode() != mode {
        return Err(Error::invalid("target set was built for the other time domain"));
    }
    if initial.len() != n_agents || targets.len() != n_agents {
        return Err(Error::DimensionMismatch(format!(
            "{n_agents} agents, {} initial states, {} targets",
            initial.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Abort threshold for the divergence guard.
fn divergence_limit(targets: &TargetSet, initial: &[DVector<f64>]) -> f64 {
    let r0 = initial.iter().map(|x| x.norm()).fold(0.0, f64::max);
    1e3 * (targets.rbar() + r0).max(1.0)
}

fn check_bounded(states: &[DVector<f64>], limit: f64, step: usize) -> Result<()> {
    if states.iter().all(|x| x.iter().all(|v| v.is_finite()) && x.norm() <= limit) {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

fn keep_coupling(stride: usize, step: usize) -> bool {
    stride > 0 && step % stride == 0
}
