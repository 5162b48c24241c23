use nalgebra::{DMatrix, DVector};

use super::{cost_matrix, Trajectory};
use crate::error::{Error, Result};
use crate::lti::{kappa_bound, spectral_norm, AgentGains, ContinuousAgent, LinearAgent, TargetSet};
use crate::ot::{
    barycentric_projection, entropic_objective, gibbs_kernel, sinkhorn_solve, KernelDomain, ScalingState,
    SinkhornParams,
};

/// Entropic transport cost `E(x[k], x^d)` along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub values: Vec<f64>,
    /// `max_k (E[k+1] − E[k])`; negative for a strictly decreasing series.
    pub max_increase: f64,
}

impl LyapunovReport {
    /// First `k` with `E[k+1] > E[k] + slack·(1 + |E[k]|)`.
    pub fn first_violation(&self, slack: f64) -> Option<usize> {
        self.values
            .windows(2)
            .position(|w| w[1] > w[0] + slack * (1.0 + w[0].abs()))
    }
}

/// Recomputes `E[k]` at every recorded state, warm-starting each solve from the previous one.
pub fn lyapunov_series(
    traj: &Trajectory,
    targets: &TargetSet,
    gains: &[AgentGains],
    epsilon: f64,
    params: &SinkhornParams,
) -> Result<LyapunovReport> {
    let mut warm = ScalingState::uniform(targets.len());
    let mut values = Vec::with_capacity(traj.states.len());
    for (k, x) in traj.states.iter().enumerate() {
        let cost = cost_matrix(x, targets.targets(), gains)?;
        let kernel = gibbs_kernel(&cost, epsilon, KernelDomain::Log)?;
        let sol = sinkhorn_solve(&kernel, &warm, params).map_err(|e| e.at_step(k))?;
        values.push(entropic_objective(&cost, &sol.coupling, epsilon));
        warm = sol.scalings;
    }
    let max_increase = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LyapunovReport { values, max_increase })
}

/// Per-agent `(‖Bᵀ𝒢 e_i‖, ‖Bᵀ e^{−AᵀT_h} 𝒢 e_i‖)` with `e_i = x_i − x_i^tmp(P*(x))`.
///
/// Both vanish on the set the continuous closed loop converges to.
pub fn stationarity_residual(
    agents: &[ContinuousAgent],
    gains: &[AgentGains],
    x: &[DVector<f64>],
    targets: &TargetSet,
    epsilon: f64,
    params: &SinkhornParams,
) -> Result<Vec<(f64, f64)>> {
    let cost = cost_matrix(x, targets.targets(), gains)?;
    let kernel = gibbs_kernel(&cost, epsilon, KernelDomain::Log)?;
    let sol = sinkhorn_solve(&kernel, &ScalingState::uniform(x.len()), params)?;
    let temp = barycentric_projection(&sol.coupling, targets.targets());
    agents
        .iter()
        .zip(gains)
        .zip(x.iter().zip(&temp))
        .map(|((agent, g), (xi, ti))| {
            let exp_neg_at = g
                .exp_neg_at
                .as_ref()
                .ok_or_else(|| Error::invalid("stationarity residuals need continuous gains"))?;
            let ge = &g.weight * (xi - ti);
            let bt = agent.b().transpose();
            Ok(((&bt * &ge).norm(), (bt * exp_neg_at * ge).norm()))
        })
        .collect()
}

/// Ultimate-bound data for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBound {
    pub nu: f64,
    pub rho: f64,
    pub kappa: f64,
    /// `‖I − Ā‖₂`.
    pub gain_norm: f64,
    /// `δ + κ r̄ ‖I − Ā‖₂ / (1 − (ρ + ν))`.
    pub bound: f64,
}

/// Eventual norm bound on every agent's state under Sinkhorn MPC.
#[derive(Debug, Clone, PartialEq)]
pub struct UltimateBoundCert {
    pub rbar: f64,
    pub delta: f64,
    pub agents: Vec<AgentBound>,
}

impl UltimateBoundCert {
    /// First step `τ` such that `‖x_i[k]‖ < bound_i` for all agents and all
    /// recorded `k ≥ τ`, or `None` when the final state is outside the bound.
    pub fn verify(&self, traj: &Trajectory) -> Option<usize> {
        let inside = |states: &[DVector<f64>]| states.iter().zip(&self.agents).all(|(x, b)| x.norm() < b.bound);
        let last_outside = traj.states.iter().rposition(|s| !inside(s));
        match last_outside {
            None => Some(0),
            Some(k) if k + 1 < traj.states.len() => Some(k + 1),
            Some(_) => None,
        }
    }
}

pub fn ultimate_bound_certificate(
    gains: &[AgentGains],
    targets: &TargetSet,
    nu: &[f64],
    delta: f64,
) -> Result<UltimateBoundCert> {
    if nu.len() != gains.len() {
        return Err(Error::DimensionMismatch("one nu per agent".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    let rbar = targets.rbar();
    let agents = gains
        .iter()
        .zip(nu)
        .map(|(g, &nu)| {
            let kappa = kappa_bound(&g.closed_loop, nu)?;
            let n = g.closed_loop.nrows();
            let gain_norm = spectral_norm(&(DMatrix::identity(n, n) - &g.closed_loop));
            let bound = delta + kappa * rbar * gain_norm / (1.0 - (g.rho + nu));
            Ok(AgentBound {
                nu,
                rho: g.rho,
                kappa,
                gain_norm,
                bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UltimateBoundCert { rbar, delta, agents })
}

/// `Σ_{k,i} dt ‖u_i[k]‖²`.
pub fn accumulated_cost(traj: &Trajectory, dt: f64) -> f64 {
    traj.inputs
        .iter()
        .flat_map(|step| step.iter())
        .map(|u| dt * u.norm_squared())
        .sum()
}
