use nalgebra::DVector;

use super::{
    check_bounded, check_setup, cost_matrix, divergence_limit, keep_coupling, SimConfig, SinkhornIters, Trajectory,
};
use crate::error::{Error, Result};
use crate::lti::{DiscreteAgent, Horizon, Mode, TargetSet};
use crate::mpc::{mpc_input, ubar_of_coupling, MpcLaw};
use crate::ot::{
    barycentric_projection, exact_assignment, gibbs_kernel, sinkhorn_partial, sinkhorn_solve, Coupling, ScalingState,
};

fn laws(agents: &[DiscreteAgent], cfg: &SimConfig) -> Result<Vec<MpcLaw>> {
    let Horizon::Steps(tau_h) = cfg.horizon else {
        return Err(Error::invalid("discrete simulation needs a horizon in steps"));
    };
    agents.iter().map(|a| MpcLaw::discrete(a, tau_h)).collect()
}

fn sampling_period(agents: &[DiscreteAgent]) -> Result<f64> {
    let h = agents[0].sampling_period();
    if agents.iter().any(|a| a.sampling_period() != h) {
        return Err(Error::invalid("agents have different sampling periods"));
    }
    Ok(h)
}

/// Per-step target selection shared by the regularized and exact controllers.
struct Selection {
    coupling: Coupling,
    temp_targets: Vec<DVector<f64>>,
    ubar: Vec<DVector<f64>>,
}

fn run(
    laws: &[MpcLaw],
    targets: &TargetSet,
    initial: &[DVector<f64>],
    cfg: &SimConfig,
    traj: &mut Trajectory,
    mut select: impl FnMut(usize, &[DVector<f64>], &mut Trajectory) -> Result<Selection>,
) -> Result<()> {
    let n = laws.len();
    let limit = divergence_limit(targets, initial);
    let h = traj.dt;
    let mut x = initial.to_vec();

    for k in 0..cfg.n_steps {
        traj.times.push(k as f64 * h);
        traj.states.push(x.clone());
        let sel = select(k, &x, traj).map_err(|e| e.at_step(k))?;
        let inputs: Vec<_> = (0..n)
            .map(|i| mpc_input(&laws[i], &x[i], &sel.temp_targets[i], &sel.ubar[i]))
            .collect();
        for i in 0..n {
            x[i] = laws[i].a() * &x[i] + laws[i].b() * &inputs[i];
        }
        traj.inputs.push(inputs);
        traj.temp_targets.push(sel.temp_targets);
        if keep_coupling(cfg.coupling_stride, k) {
            traj.couplings.push((k, sel.coupling));
        }
        check_bounded(&x, limit, k + 1)?;
    }
    traj.times.push(cfg.n_steps as f64 * h);
    traj.states.push(x);
    Ok(())
}

fn equilibrium_inputs(targets: &TargetSet, p: &Coupling) -> Vec<DVector<f64>> {
    (0..p.n()).map(|i| ubar_of_coupling(p, i, &targets.ubar()[i])).collect()
}

/// Sinkhorn MPC: `S` warm-started Sinkhorn iterations per sampling instant.
///
/// At step `k` the kernel is built from `C_ij = ‖x_i[k] − x_j^d‖²_{𝒢_i}`,
/// the scaling `α` carried from the previous step is advanced by `S`
/// iterations (or to convergence), and each agent applies the MPC law
/// towards its barycentric target under `P[k]`.
pub fn simulate_sinkhorn_mpc(
    agents: &[DiscreteAgent],
    targets: &TargetSet,
    initial: &[DVector<f64>],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let n = agents.len();
    check_setup(Mode::Discrete, targets, initial, n)?;
    cfg.validate(n)?;
    let mut traj = Trajectory {
        dt: sampling_period(agents)?,
        ..Trajectory::default()
    };
    let laws = laws(agents, cfg)?;
    let gains: Vec<_> = laws.iter().map(|l| l.gains().clone()).collect();
    let mut scalings = match &cfg.alpha0 {
        Some(a) => ScalingState::from_alpha(a)?,
        None => ScalingState::uniform(n),
    };

    run(&laws, targets, initial, cfg, &mut traj, |_, x, traj| {
        let cost = cost_matrix(x, targets.targets(), &gains)?;
        let kernel = gibbs_kernel(&cost, cfg.epsilon, cfg.domain)?;
        let (next, coupling, iterations) = match cfg.sinkhorn_iters {
            SinkhornIters::Fixed(s) => {
                let (next, p) = sinkhorn_partial(&kernel, &scalings, s)?;
                (next, p, s)
            }
            SinkhornIters::ToConvergence => {
                let sol = sinkhorn_solve(&kernel, &scalings, &cfg.sinkhorn)?;
                (sol.scalings, sol.coupling, sol.iterations)
            }
        };
        scalings = next;
        traj.log_alpha.push(scalings.log_alpha().clone());
        traj.sinkhorn_iterations.push(iterations);
        Ok(Selection {
            temp_targets: barycentric_projection(&coupling, targets.targets()),
            ubar: equilibrium_inputs(targets, &coupling),
            coupling,
        })
    })?;
    log::debug!(
        "Sinkhorn MPC run: {} agents, {} steps, {:?}, {} Sinkhorn iterations",
        n,
        cfg.n_steps,
        cfg.sinkhorn_iters,
        traj.sinkhorn_iterations.iter().sum::<usize>()
    );
    Ok(traj)
}

/// MPC with the exact assignment recomputed at every sampling instant.
///
/// Each agent heads for its assigned target `x_{σ(i)}^d`, which is the
/// barycentric projection of the permutation coupling.
pub fn simulate_unregularized_mpc(
    agents: &[DiscreteAgent],
    targets: &TargetSet,
    initial: &[DVector<f64>],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let n = agents.len();
    check_setup(Mode::Discrete, targets, initial, n)?;
    let mut traj = Trajectory {
        dt: sampling_period(agents)?,
        ..Trajectory::default()
    };
    let laws = laws(agents, cfg)?;
    let gains: Vec<_> = laws.iter().map(|l| l.gains().clone()).collect();

    run(&laws, targets, initial, cfg, &mut traj, |_, x, traj| {
        let cost = cost_matrix(x, targets.targets(), &gains)?;
        let assignment = exact_assignment(&cost);
        let sigma = assignment.sigma;
        let temp_targets = sigma.iter().map(|&j| targets.targets()[j].clone()).collect();
        let ubar = sigma
            .iter()
            .enumerate()
            .map(|(i, &j)| targets.ubar()[i][j].clone())
            .collect();
        let coupling = Coupling::permutation(&sigma);
        traj.assignments.push(sigma);
        Ok(Selection {
            coupling,
            temp_targets,
            ubar,
        })
    })?;
    Ok(traj)
}
