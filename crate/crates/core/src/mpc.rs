//! Minimum-energy transport costs and the closed-form MPC feedback law.
//!
//! With the running cost `‖u − ū(P)‖²` and the terminal constraint
//! `x(T) = x_tmp(P)`, the finite-horizon problem has a quadratic value
//! `‖x − x_tmp‖²_𝒢` and an affine first input
//! `u = −F (x − x_tmp) + ū(P)`, where `𝒢` and `F` come from the agent's
//! [`AgentGains`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lti::{
    continuous_gramian, reachability_gramian, AgentGains, ContinuousAgent, DiscreteAgent, LinearAgent, Mode,
};
use crate::ot::Coupling;

/// MPC law of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcLaw {
    gains: AgentGains,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl MpcLaw {
    pub fn continuous(agent: &ContinuousAgent, t_h: f64) -> Result<Self> {
        Ok(Self {
            gains: continuous_gramian(agent, t_h)?,
            a: agent.a().clone(),
            b: agent.b().clone(),
        })
    }

    pub fn discrete(agent: &DiscreteAgent, tau_h: usize) -> Result<Self> {
        Ok(Self {
            gains: reachability_gramian(agent, tau_h)?,
            a: agent.a().clone(),
            b: agent.b().clone(),
        })
    }

    pub fn gains(&self) -> &AgentGains {
        &self.gains
    }

    pub fn mode(&self) -> Mode {
        self.gains.mode()
    }

    /// `Bᵀ𝒢` (continuous) or `Bᵀ(Aᵀ)^{τ−1} G⁻¹ A^τ` (discrete).
    pub fn feedback_gain(&self) -> &DMatrix<f64> {
        &self.gains.feedback
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

/// `(x − y)ᵀ 𝒢 (x − y)`.
pub fn transport_cost(gains: &AgentGains, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let d = x - y;
    d.dot(&(&gains.weight * &d)).max(0.0)
}

/// `ū_i(P) = N Σ_j P_ij ū_ij` for agent `i`.
pub fn ubar_of_coupling(p: &Coupling, agent: usize, ubar_row: &[DVector<f64>]) -> DVector<f64> {
    let n = p.n();
    assert_eq!(ubar_row.len(), n, "one equilibrium input per target");
    let mut acc = DVector::zeros(ubar_row.first().map_or(0, |u| u.len()));
    for (j, u) in ubar_row.iter().enumerate() {
        let w = p.matrix()[(agent, j)];
        if w != 0.0 {
            acc.axpy(n as f64 * w, u, 1.0);
        }
    }
    acc
}

/// `u = −F (x − x_tmp) + ū(P)`.
pub fn mpc_input(law: &MpcLaw, x: &DVector<f64>, x_tmp: &DVector<f64>, ubar_p: &DVector<f64>) -> DVector<f64> {
    ubar_p - law.feedback_gain() * (x - x_tmp)
}

/// Reference solution of the discrete minimum-energy problem, for verification.
pub mod oracle {
    use super::*;

    /// Minimizes `Σ_{k<τ} ‖u[k] − ū‖²` subject to `x[0] = x0`, `x[τ] = xf`.
    ///
    /// Solves the endpoint constraint `Σ_k A^{τ−1−k} B v_k = r` for the least-norm
    /// `v = u − ū` through a QR factorization of the stacked input-to-state
    /// map, without forming any Gramian. Returns the optimal cost and input
    /// sequence.
    pub fn min_energy_oracle(
        agent: &DiscreteAgent,
        tau_h: usize,
        x0: &DVector<f64>,
        xf: &DVector<f64>,
        ubar: &DVector<f64>,
    ) -> Result<(f64, Vec<DVector<f64>>)> {
        if tau_h == 0 {
            return Err(Error::invalid("horizon must be at least one step"));
        }
        let a = agent.a();
        let b = agent.b();
        let n = agent.state_dim();
        let m = agent.input_dim();
        if x0.len() != n || xf.len() != n || ubar.len() != m {
            return Err(Error::DimensionMismatch("oracle endpoint or input dimension".into()));
        }

        // map = [A^{τ−1}B, …, AB, B]; drift accumulates the ū contribution.
        let mut map = DMatrix::zeros(n, tau_h * m);
        let mut power = DMatrix::<f64>::identity(n, n);
        let mut drift = DVector::zeros(n);
        let bu = b * ubar;
        for k in (0..tau_h).rev() {
            map.view_mut((0, k * m), (n, m)).copy_from(&(&power * b));
            drift += &power * &bu;
            power = a * power;
        }
        let rhs = xf - &power * x0 - drift;

        if tau_h * m < n {
            return Err(Error::NearSingularGramian { condition: f64::INFINITY });
        }
        let qr = map.transpose().qr();
        let r = qr.r();
        let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-12 * max) {
            let condition = if min > 0.0 { (max / min).powi(2) } else { f64::INFINITY };
            return Err(Error::NearSingularGramian { condition });
        }
        let y = r
            .transpose()
            .solve_lower_triangular(&rhs)
            .ok_or(Error::NearSingularGramian { condition: f64::INFINITY })?;
        let v = qr.q() * y;

        let cost = v.norm_squared();
        let inputs = (0..tau_h).map(|k| v.rows(k * m, m) + ubar).collect();
        Ok((cost, inputs))
    }
}
