//! Sinkhorn MPC: steering a population of linear agents to a target
//! empirical distribution with entropy-regularized optimal transport and
//! minimum-energy model predictive control.
//!
//! The crate is split into four layers:
//!
//! - [`lti`]: agent models, discretization, Gramians, equilibrium inputs and
//!   spectral certificates.
//! - [`ot`]: Gibbs kernels, log-domain Sinkhorn scaling, couplings,
//!   barycentric projection, entropic cost and the exact assignment baseline.
//! - [`mpc`]: minimum-energy transport costs and the closed-form MPC law.
//! - [`sim`]: closed-loop simulators and their diagnostics.

pub mod error;
pub mod lti;
pub mod mpc;
pub mod ot;
pub mod preset;
pub mod sim;

pub use error::{Error, Result};
pub use lti::{
    continuous_gramian, equilibrium_input, kappa_bound, matrix_exponential, reachability_gramian,
    spectral_norm, spectral_radius, zoh_discretize, AgentGains, ContinuousAgent, DiscreteAgent, Horizon,
    LinearAgent, Mode, TargetSet,
};
pub use mpc::{mpc_input, transport_cost, ubar_of_coupling, MpcLaw};
pub use ot::{
    barycentric_projection, coupling_from_scalings, entropic_cost, entropy, exact_assignment, gibbs_kernel,
    sinkhorn_partial, sinkhorn_solve, sinkhorn_step, Assignment, CostMatrix, Coupling, GibbsKernel,
    KernelDomain, ScalingState, SinkhornParams, SinkhornSolution,
};
pub use sim::{
    accumulated_cost, lyapunov_series, simulate_continuous, simulate_sinkhorn_mpc, simulate_unregularized_mpc,
    stationarity_residual, ultimate_bound_certificate, AgentBound, LyapunovReport, SimConfig, SinkhornIters,
    Trajectory, UltimateBoundCert,
};

pub use nalgebra::{DMatrix, DVector};
