use nalgebra::DVector;

use super::{check_bounded, check_setup, cost_matrix, divergence_limit, keep_coupling, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::lti::{continuous_gramian, AgentGains, ContinuousAgent, Horizon, Mode, TargetSet};
use crate::mpc::ubar_of_coupling;
use crate::ot::{barycentric_projection, entropic_objective, gibbs_kernel, sinkhorn_solve, ScalingState, SinkhornSolution};

/// Closed-loop field evaluated at one joint state.
struct FieldEval {
    derivative: Vec<DVector<f64>>,
    temp_targets: Vec<DVector<f64>>,
    solution: SinkhornSolution,
    lyapunov: f64,
}

fn field(
    x: &[DVector<f64>],
    gains: &[AgentGains],
    targets: &TargetSet,
    cfg: &SimConfig,
    warm: &ScalingState,
) -> Result<FieldEval> {
    let cost = cost_matrix(x, targets.targets(), gains)?;
    let kernel = gibbs_kernel(&cost, cfg.epsilon, cfg.domain)?;
    let solution = sinkhorn_solve(&kernel, warm, &cfg.sinkhorn)?;
    let temp_targets = barycentric_projection(&solution.coupling, targets.targets());
    let derivative = x
        .iter()
        .zip(&temp_targets)
        .zip(gains)
        .map(|((xi, ti), g)| &g.closed_loop * (xi - ti))
        .collect();
    let lyapunov = entropic_objective(&cost, &solution.coupling, cfg.epsilon);
    Ok(FieldEval {
        derivative,
        temp_targets,
        solution,
        lyapunov,
    })
}

fn offset(x: &[DVector<f64>], dx: &[DVector<f64>], h: f64) -> Vec<DVector<f64>> {
    x.iter().zip(dx).map(|(a, b)| a + b * h).collect()
}

/// Integrates `ẋ_i = Ā_i (x_i − N Σ_j P*_ij(x) x_j^d)` with classical RK4.
///
/// `P*(x)` is re-solved at every stage, warm-started from the previous
/// stage. The recorded input is the MPC law at the start of each step, and
/// `lyapunov[k]` is the entropic transport cost at `states[k]`.
pub fn simulate_continuous(
    agents: &[ContinuousAgent],
    targets: &TargetSet,
    initial: &[DVector<f64>],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let n = agents.len();
    check_setup(Mode::Continuous, targets, initial, n)?;
    cfg.validate(n)?;
    let Horizon::Time(t_h) = cfg.horizon else {
        return Err(Error::invalid("continuous simulation needs a time horizon"));
    };
    let h = cfg.step;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("integration step must be positive, got {h}")));
    }
    let gains = agents
        .iter()
        .map(|a| continuous_gramian(a, t_h))
        .collect::<Result<Vec<_>>>()?;
    let limit = divergence_limit(targets, initial);

    let mut warm = match &cfg.alpha0 {
        Some(a) => ScalingState::from_alpha(a)?,
        None => ScalingState::uniform(n),
    };
    let mut x = initial.to_vec();
    let mut traj = Trajectory {
        dt: h,
        ..Trajectory::default()
    };

    for k in 0..=cfg.n_steps {
        let s1 = field(&x, &gains, targets, cfg, &warm).map_err(|e| e.at_step(k))?;
        traj.times.push(k as f64 * h);
        traj.states.push(x.clone());
        traj.lyapunov.push(s1.lyapunov);
        if k == cfg.n_steps {
            break;
        }

        let p = &s1.solution.coupling;
        let inputs = (0..n)
            .map(|i| {
                let ubar = ubar_of_coupling(p, i, &targets.ubar()[i]);
                ubar - &gains[i].feedback * (&x[i] - &s1.temp_targets[i])
            })
            .collect();
        traj.inputs.push(inputs);
        if keep_coupling(cfg.coupling_stride, k) {
            traj.couplings.push((k, p.clone()));
        }

        let s2 = field(&offset(&x, &s1.derivative, h / 2.0), &gains, targets, cfg, &s1.solution.scalings)
            .map_err(|e| e.at_step(k))?;
        let s3 = field(&offset(&x, &s2.derivative, h / 2.0), &gains, targets, cfg, &s2.solution.scalings)
            .map_err(|e| e.at_step(k))?;
        let s4 = field(&offset(&x, &s3.derivative, h), &gains, targets, cfg, &s3.solution.scalings)
            .map_err(|e| e.at_step(k))?;

        traj.sinkhorn_iterations.push(
            s1.solution.iterations + s2.solution.iterations + s3.solution.iterations + s4.solution.iterations,
        );
        traj.temp_targets.push(s1.temp_targets);
        for i in 0..n {
            let incr = &s1.derivative[i] + (&s2.derivative[i] + &s3.derivative[i]) * 2.0 + &s4.derivative[i];
            x[i] += incr * (h / 6.0);
        }
        warm = s4.solution.scalings;
        traj.log_alpha.push(warm.log_alpha().clone());
        check_bounded(&x, limit, k + 1)?;
    }
    log::debug!(
        "continuous run: {} agents, {} steps, {} Sinkhorn iterations",
        n,
        cfg.n_steps,
        traj.sinkhorn_iterations.iter().sum::<usize>()
    );
    Ok(traj)
}
