mod common;

use common::*;
use rand::Rng;
use smpc_core::preset::{discrete_double_integrator, double_integrator, line_targets, LinePreset};
use smpc_core::*;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_vec(x.to_vec())
}

fn discrete_setup(n: usize, lo: f64, hi: f64, seed: u64) -> (Vec<DiscreteAgent>, TargetSet, Vec<DVector<f64>>) {
    let agents = vec![discrete_double_integrator(1, 0.02).unwrap(); n];
    let targets = TargetSet::new(&agents, line_targets(n, lo, hi)).unwrap();
    let preset = LinePreset {
        n_agents: n,
        target_lo: lo,
        target_hi: hi,
        position_box: hi.abs().max(lo.abs()),
        velocity_box: 0.1,
        seed,
    };
    (agents, targets, preset.initial_states().unwrap())
}

#[test]
fn single_continuous_agent_converges_to_its_target() {
    let agents = vec![double_integrator(1).unwrap()];
    let targets = TargetSet::new(&agents, vec![v(&[0.5, 0.0])]).unwrap();
    let traj = simulate_continuous(&agents, &targets, &[v(&[-1.0, 0.3])], &SimConfig::continuous(0.7, 1.0, 800)).unwrap();
    let err: Vec<f64> = traj.states.iter().map(|s| (&s[0] - &targets.targets()[0]).norm()).collect();
    assert!(err.last().unwrap() < &1e-5);
    // eigenvalues −2 ± i√2: the error envelope decays like e^{−2t}
    assert!(err[400] < 10.0 * (-2.0f64 * 4.0).exp() * err[0]);
    assert!(traj.couplings.iter().all(|(_, p)| (p.matrix()[(0, 0)] - 1.0).abs() < 1e-15));
}

#[test]
fn single_discrete_agent_ignores_the_transport_layer() {
    let agents = vec![discrete_double_integrator(1, 0.02).unwrap()];
    let targets = TargetSet::new(&agents, vec![v(&[0.3, 0.0])]).unwrap();
    let x0 = [v(&[-0.2, 0.05])];
    let base = simulate_unregularized_mpc(&agents, &targets, &x0, &SimConfig::discrete(0.7, 50, SinkhornIters::Fixed(1), 600)).unwrap();
    for s in [SinkhornIters::Fixed(1), SinkhornIters::Fixed(7), SinkhornIters::ToConvergence] {
        let t = simulate_sinkhorn_mpc(&agents, &targets, &x0, &SimConfig::discrete(0.7, 50, s, 600)).unwrap();
        assert_eq!(t.states, base.states);
    }
    let gap = |s: &[DVector<f64>]| (&s[0] - &targets.targets()[0]).norm();
    let rho = reachability_gramian(&agents[0], 50).unwrap().rho;
    let decay = gap(base.final_states()) / gap(&base.states[0]);
    assert!(decay < 1e-4 && decay < 100.0 * rho.powi(600), "decay {decay:e}, rho {rho}");
}

#[test]
fn mirror_symmetric_pair_stays_symmetric() {
    let agents = vec![double_integrator(1).unwrap(); 2];
    let targets = TargetSet::new(&agents, vec![v(&[-1.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
    let x0 = [v(&[0.4, 0.2]), v(&[-0.4, -0.2])];
    let traj = simulate_continuous(&agents, &targets, &x0, &SimConfig::continuous(0.7, 1.0, 300)).unwrap();
    for s in &traj.states {
        assert!((&s[0] + &s[1]).amax() < 1e-8);
    }
}

#[test]
fn equilibrium_table_does_not_change_the_states() {
    // Two identical input channels: ū is unique only up to the null space of B.
    let base = discrete_double_integrator(1, 0.02).unwrap();
    let b2 = DMatrix::from_fn(2, 2, |r, _| base.b()[(r, 0)]);
    // Position feedback in the drift, so targets at rest need a nonzero ū.
    let a = base.a() + base.b() * DMatrix::from_row_slice(1, 2, &[-0.5, 0.0]);
    let agent = DiscreteAgent::new(a, b2, 0.02).unwrap();
    let n = 5;
    let agents = vec![agent; n];
    let pts = line_targets(n, -0.5, 0.5);
    let minimal = TargetSet::new(&agents, pts.clone()).unwrap();
    let mut rng = rng(51);
    let shifted: Vec<Vec<DVector<f64>>> = minimal
        .ubar()
        .iter()
        .map(|row| {
            row.iter()
                .map(|u| {
                    let t: f64 = rng.random_range(-3.0..3.0);
                    u + v(&[t, -t])
                })
                .collect()
        })
        .collect();
    let other = TargetSet::with_ubar(&agents, pts, shifted).unwrap();
    let x0: Vec<_> = (0..n).map(|_| uniform_vector(&mut rng, 2, -0.5, 0.5)).collect();
    for s in [SinkhornIters::Fixed(1), SinkhornIters::Fixed(10)] {
        let cfg = SimConfig::discrete(0.7, 50, s, 200);
        let a = simulate_sinkhorn_mpc(&agents, &minimal, &x0, &cfg).unwrap();
        let b = simulate_sinkhorn_mpc(&agents, &other, &x0, &cfg).unwrap();
        let gap = a
            .states
            .iter()
            .zip(&b.states)
            .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).amax()))
            .fold(0.0, f64::max);
        assert!(gap < 1e-9, "state gap {gap:e}");
        assert!(a.inputs != b.inputs);
    }
}

#[test]
fn rescaled_initial_scaling_gives_the_same_couplings() {
    let (agents, targets, x0) = discrete_setup(8, -0.3, 0.3, 3);
    let mut cfg = SimConfig::discrete(0.7, 50, SinkhornIters::Fixed(3), 100);
    let a = simulate_sinkhorn_mpc(&agents, &targets, &x0, &cfg).unwrap();
    cfg.alpha0 = Some(DVector::from_element(8, 37.5));
    let b = simulate_sinkhorn_mpc(&agents, &targets, &x0, &cfg).unwrap();
    for ((_, p), (_, q)) in a.couplings.iter().zip(&b.couplings) {
        assert!((p.matrix() - q.matrix()).amax() < 1e-10);
    }
}

#[test]
fn temporary_targets_stay_in_the_target_ball() {
    let (agents, targets, x0) = discrete_setup(10, -0.4, 0.6, 4);
    let rbar = targets.rbar();
    for s in [SinkhornIters::Fixed(1), SinkhornIters::ToConvergence] {
        let mut cfg = SimConfig::discrete(0.7, 50, s, 100);
        cfg.sinkhorn.newton_after = Some(200);
        let traj = simulate_sinkhorn_mpc(&agents, &targets, &x0, &cfg).unwrap();
        assert!(traj.temp_targets.iter().flatten().all(|t| t.norm() <= rbar * (1.0 + 1e-12)));
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let (agents, targets, x0) = discrete_setup(12, -0.5, 0.5, 5);
    let cfg = SimConfig::discrete(0.7, 50, SinkhornIters::Fixed(10), 120);
    let a = simulate_sinkhorn_mpc(&agents, &targets, &x0, &cfg).unwrap();
    let b = simulate_sinkhorn_mpc(&agents, &targets, &x0, &cfg).unwrap();
    assert_eq!(a, b);
    let agents = vec![double_integrator(1).unwrap(); 3];
    let targets = TargetSet::new(&agents, line_targets(3, -1.0, 1.0)).unwrap();
    let x0 = [v(&[0.1, 0.0]), v(&[0.5, 0.1]), v(&[-0.3, 0.0])];
    let cfg = SimConfig::continuous(0.7, 1.0, 50);
    assert_eq!(
        simulate_continuous(&agents, &targets, &x0, &cfg).unwrap(),
        simulate_continuous(&agents, &targets, &x0, &cfg).unwrap()
    );
}

#[test]
fn discrete_runs_approach_the_continuous_flow() {
    // The discrete weight is about 1/h times the continuous one, so ε is scaled to match.
    let t_h = 1.0;
    let eps = 0.7;
    let agents = vec![double_integrator(1).unwrap(); 3];
    let pts = line_targets(3, -1.0, 1.0);
    let x0 = [v(&[0.2, 0.1]), v(&[0.6, -0.1]), v(&[-0.5, 0.0])];
    let horizon_time = 2.0;
    let mut cc = SimConfig::continuous(eps, t_h, 800);
    cc.step = horizon_time / 800.0;
    let targets = TargetSet::new(&agents, pts.clone()).unwrap();
    let cont = simulate_continuous(&agents, &targets, &x0, &cc).unwrap();

    let deviation = |h: f64| {
        let steps = (horizon_time / h).round() as usize;
        let d: Vec<_> = agents.iter().map(|a| zoh_discretize(a, h).unwrap()).collect();
        let dt = TargetSet::new(&d, pts.clone()).unwrap();
        let mut cfg = SimConfig::discrete(eps / h, (t_h / h).round() as usize, SinkhornIters::ToConvergence, steps);
        cfg.sinkhorn.newton_after = Some(200);
        let traj = simulate_sinkhorn_mpc(&d, &dt, &x0, &cfg).unwrap();
        let stride = 800 / steps;
        traj.states
            .iter()
            .enumerate()
            .flat_map(|(k, s)| {
                let c = &cont.states[k * stride];
                s.iter().zip(c).map(|(a, b)| (a - b).amax()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    };
    let coarse = deviation(0.04);
    let fine = deviation(0.01);
    assert!(fine < 0.5 * coarse, "coarse {coarse:e}, fine {fine:e}");
}

#[test]
fn coupling_sharpens_as_epsilon_decreases() {
    let (agents, targets, x0) = discrete_setup(4, -0.06, 0.06, 6);
    let mut gaps = Vec::new();
    for eps in [2.0, 0.7, 0.2, 0.05] {
        let mut cfg = SimConfig::discrete(eps, 50, SinkhornIters::ToConvergence, 400);
        cfg.sinkhorn.newton_after = Some(200);
        let traj = simulate_sinkhorn_mpc(&agents, &targets, &x0, &cfg).unwrap();
        let (_, p) = traj.couplings.last().unwrap();
        let gains: Vec<_> = agents.iter().map(|a| reachability_gramian(a, 50).unwrap()).collect();
        let c = smpc_core::sim::cost_matrix(traj.final_states(), targets.targets(), &gains).unwrap();
        let sigma = exact_assignment(&c).sigma;
        let perm = Coupling::permutation(&sigma);
        gaps.push((p.matrix() * 4.0 - perm.matrix() * 4.0).amax());
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn baseline_uses_assigned_targets() {
    let (agents, targets, x0) = discrete_setup(6, -0.5, 0.5, 7);
    let traj = simulate_unregularized_mpc(&agents, &targets, &x0, &SimConfig::discrete(0.7, 50, SinkhornIters::ToConvergence, 50)).unwrap();
    for (k, sigma) in traj.assignments.iter().enumerate() {
        for (i, &j) in sigma.iter().enumerate() {
            assert_eq!(traj.temp_targets[k][i], targets.targets()[j]);
        }
    }
}

#[test]
fn lyapunov_series_is_flat_at_an_equilibrium() {
    let agents = vec![double_integrator(1).unwrap(); 2];
    let targets = TargetSet::new(&agents, vec![v(&[-1.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
    // Agents at ∓s (at rest) are an equilibrium when the barycentric targets
    // are ∓s as well: with 𝒢 = [[12, 6], [6, 4]] that means s = tanh(24 s / ε).
    let eps = 0.7;
    let mut s = 1.0f64;
    for _ in 0..200 {
        s = (24.0 * s / eps).tanh();
    }
    let x0 = [v(&[-s, 0.0]), v(&[s, 0.0])];
    let traj = simulate_continuous(&agents, &targets, &x0, &SimConfig::continuous(eps, 1.0, 50)).unwrap();
    let gains: Vec<_> = agents.iter().map(|a| continuous_gramian(a, 1.0).unwrap()).collect();
    let report = lyapunov_series(&traj, &targets, &gains, eps, &SinkhornParams::default()).unwrap();
    let e0 = report.values[0];
    assert!(report.values.iter().all(|e| (e - e0).abs() < 1e-12 * (1.0 + e0.abs())));
    assert!(traj.final_states().iter().zip(&x0).all(|(a, b)| (a - b).amax() < 1e-12));

    let one = vec![ContinuousAgent::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap()];
    let t1 = TargetSet::new(&one, vec![v(&[0.0])]).unwrap();
    let traj = simulate_continuous(&one, &t1, &[v(&[0.0])], &SimConfig::continuous(eps, 1.0, 20)).unwrap();
    let g1 = vec![continuous_gramian(&one[0], 1.0).unwrap()];
    let flat = lyapunov_series(&traj, &t1, &g1, eps, &SinkhornParams::default()).unwrap();
    assert!(flat.values.iter().all(|&e| (e + eps).abs() < 1e-15));
}

#[test]
fn scalar_integrator_energy_closed_form() {
    // ẋ = u, T_h = 1: 𝒢 = 1, E = (x − x^d)² − ε, and the closed loop is ẋ = −(x − x^d).
    let eps = 0.3;
    let one = vec![ContinuousAgent::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap()];
    let targets = TargetSet::new(&one, vec![v(&[0.25])]).unwrap();
    let traj = simulate_continuous(&one, &targets, &[v(&[2.0])], &SimConfig::continuous(eps, 1.0, 300)).unwrap();
    for (k, s) in traj.states.iter().enumerate() {
        let t = traj.times[k];
        let expect = 0.25 + 1.75 * (-t).exp();
        assert!((s[0][0] - expect).abs() < 1e-9);
        let e = (s[0][0] - 0.25).powi(2) - eps;
        assert!((traj.lyapunov[k] - e).abs() < 1e-12);
    }
    assert!(traj.lyapunov.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn stationarity_residual_controls_the_target_gap() {
    // With B square and invertible, ‖Bᵀ𝒢 e‖ ≥ σ_min(Bᵀ𝒢) ‖e‖, so zero residual forces e = 0.
    let mut rng = rng(52);
    let n = 3;
    let a = uniform_matrix(&mut rng, 2, 2, -1.0, 1.0);
    let b = uniform_matrix(&mut rng, 2, 2, -1.0, 1.0) + DMatrix::identity(2, 2) * 2.0;
    let agents = vec![ContinuousAgent::new(a, b.clone()).unwrap(); n];
    let gains: Vec<_> = agents.iter().map(|ag| continuous_gramian(ag, 1.0).unwrap()).collect();
    let targets = TargetSet::new(&agents, (0..n).map(|_| uniform_vector(&mut rng, 2, -1.0, 1.0)).collect()).unwrap();
    let x: Vec<_> = (0..n).map(|_| uniform_vector(&mut rng, 2, -1.0, 1.0)).collect();
    let res = stationarity_residual(&agents, &gains, &x, &targets, 0.5, &SinkhornParams::default()).unwrap();

    let c = smpc_core::sim::cost_matrix(&x, targets.targets(), &gains).unwrap();
    let k = gibbs_kernel(&c, 0.5, KernelDomain::Log).unwrap();
    let p = sinkhorn_solve(&k, &ScalingState::uniform(n), &SinkhornParams::default()).unwrap().coupling;
    let tmp = barycentric_projection(&p, targets.targets());
    let sigma_min = (b.transpose() * &gains[0].weight).singular_values().min();
    for i in 0..n {
        let gap = (&x[i] - &tmp[i]).norm();
        assert!(res[i].0 >= sigma_min * gap * (1.0 - 1e-9));
        assert!(res[i].0 > 0.0 && res[i].1 > 0.0);
    }

    // At x_i = x_i^tmp both residuals vanish: a single agent sitting on its target.
    let one = &agents[..1];
    let t1 = TargetSet::new(one, vec![v(&[0.2, -0.1])]).unwrap();
    let r = stationarity_residual(one, &gains[..1], &[v(&[0.2, -0.1])], &t1, 0.5, &SinkhornParams::default()).unwrap();
    assert_eq!(r[0], (0.0, 0.0));
}

#[test]
fn ultimate_bound_with_targets_at_origin() {
    let n = 4;
    let agents = vec![discrete_double_integrator(1, 0.02).unwrap(); n];
    let targets = TargetSet::new(&agents, vec![v(&[0.0, 0.0]); n]).unwrap();
    let gains: Vec<_> = agents.iter().map(|a| reachability_gramian(a, 50).unwrap()).collect();
    let nu: Vec<_> = gains.iter().map(|g| (1.0 - g.rho) / 2.0).collect();
    let cert = ultimate_bound_certificate(&gains, &targets, &nu, 0.1).unwrap();
    assert!(cert.agents.iter().all(|b| b.bound == 0.1));
    let mut rng = rng(53);
    let x0: Vec<_> = (0..n).map(|_| uniform_vector(&mut rng, 2, -1.0, 1.0)).collect();
    let traj = simulate_sinkhorn_mpc(&agents, &targets, &x0, &SimConfig::discrete(0.7, 50, SinkhornIters::Fixed(1), 400)).unwrap();
    assert!(cert.verify(&traj).is_some());
}

#[test]
fn ultimate_bound_for_a_scalar_agent() {
    let agents = vec![DiscreteAgent::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0), 1.0).unwrap()];
    let targets = TargetSet::new(&agents, vec![v(&[1.0])]).unwrap();
    let gains = vec![reachability_gramian(&agents[0], 1).unwrap()];
    // One-step horizon: G = 1, 𝒢 = 1/4, Ā = 0.5 − 0.5 = 0.
    assert!(gains[0].closed_loop[(0, 0)].abs() < 1e-15);
    let cert = ultimate_bound_certificate(&gains, &targets, &[0.5], 0.1).unwrap();
    let b = &cert.agents[0];
    assert!((b.bound - (0.1 + 1.0 * 1.0 * 1.0 / 0.5)).abs() < 1e-12);
    let traj = simulate_sinkhorn_mpc(&agents, &targets, &[v(&[-3.0])], &SimConfig::discrete(0.7, 1, SinkhornIters::Fixed(1), 5)).unwrap();
    assert_eq!(traj.states[1][0][0], 1.0);
    assert!(1.0 <= b.bound);
    assert_eq!(cert.verify(&traj), Some(1));
}

#[test]
fn certificate_rejects_bad_arguments() {
    let agents = vec![discrete_double_integrator(1, 0.02).unwrap()];
    let targets = TargetSet::new(&agents, vec![v(&[0.0, 0.0])]).unwrap();
    let gains = vec![reachability_gramian(&agents[0], 50).unwrap()];
    assert!(matches!(ultimate_bound_certificate(&gains, &targets, &[1.0], 0.1), Err(Error::InvalidArgument(_))));
    assert!(matches!(ultimate_bound_certificate(&gains, &targets, &[0.01], 0.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(ultimate_bound_certificate(&gains, &targets, &[], 0.1), Err(Error::DimensionMismatch(_))));
}

#[test]
fn simulators_reject_mismatched_setups() {
    let (agents, targets, x0) = discrete_setup(3, -0.5, 0.5, 8);
    let cfg = SimConfig::discrete(0.7, 50, SinkhornIters::Fixed(1), 10);
    assert!(matches!(simulate_sinkhorn_mpc(&agents, &targets, &x0[..2], &cfg), Err(Error::DimensionMismatch(_))));
    let bad = SimConfig { epsilon: 0.0, ..cfg.clone() };
    assert!(matches!(simulate_sinkhorn_mpc(&agents, &targets, &x0, &bad), Err(Error::InvalidArgument(_))));
    let cont = vec![double_integrator(1).unwrap(); 3];
    assert!(matches!(simulate_continuous(&cont, &targets, &x0, &SimConfig::continuous(0.7, 1.0, 5)), Err(Error::InvalidArgument(_))));
    let cfg = SimConfig::discrete(0.7, 50, SinkhornIters::Fixed(0), 10);
    assert!(matches!(simulate_sinkhorn_mpc(&agents, &targets, &x0, &cfg), Err(Error::InvalidArgument(_))));
}
