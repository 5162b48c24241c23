use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use smpc_core::preset::{discrete_double_integrator, double_integrator, LinePreset, SAMPLING_PERIOD};
use smpc_core::sim::cost_matrix;
use smpc_core::{
    continuous_gramian, exact_assignment, gibbs_kernel, reachability_gramian, simulate_sinkhorn_mpc, sinkhorn_partial,
    sinkhorn_solve, KernelDomain, ScalingState, SimConfig, SinkhornIters, SinkhornParams, TargetSet,
};

/// Gramian-weighted cost of the default 40-agent instance at its initial state.
fn preset_cost() -> smpc_core::CostMatrix {
    let p = LinePreset::default();
    let agent = discrete_double_integrator(1, SAMPLING_PERIOD).unwrap();
    let gains = vec![reachability_gramian(&agent, 50).unwrap(); p.n_agents];
    cost_matrix(&p.initial_states().unwrap(), &p.targets(), &gains).unwrap()
}

fn sinkhorn(c: &mut Criterion) {
    let cost = preset_cost();
    let kernel = gibbs_kernel(&cost, 0.7, KernelDomain::Log).unwrap();
    let start = ScalingState::uniform(cost.n());
    c.bench_function("sinkhorn_partial/n40_s20", |b| b.iter(|| sinkhorn_partial(&kernel, &start, 20).unwrap()));

    // A flatter kernel so the cold solve finishes in a few hundred iterations.
    let flat = gibbs_kernel(&cost, 70.0, KernelDomain::Log).unwrap();
    c.bench_function("sinkhorn_solve/n40_eps70", |b| {
        b.iter(|| sinkhorn_solve(&flat, &start, &SinkhornParams::default()).unwrap())
    });
    let newton = SinkhornParams {
        newton_after: Some(200),
        ..SinkhornParams::default()
    };
    c.bench_function("sinkhorn_solve_newton/n40_eps0.7", |b| {
        b.iter(|| sinkhorn_solve(&kernel, &start, &newton).unwrap())
    });
}

fn assignment(c: &mut Criterion) {
    let cost = preset_cost();
    c.bench_function("hungarian/n40", |b| b.iter(|| exact_assignment(&cost)));
}

fn gramians(c: &mut Criterion) {
    let agent = double_integrator(1).unwrap();
    c.bench_function("continuous_gramian/double_integrator", |b| {
        b.iter(|| continuous_gramian(&agent, 1.0).unwrap())
    });
    let d = discrete_double_integrator(1, SAMPLING_PERIOD).unwrap();
    c.bench_function("reachability_gramian/tau50", |b| b.iter(|| reachability_gramian(&d, 50).unwrap()));
}

fn simulation(c: &mut Criterion) {
    let p = LinePreset::default();
    let agents = vec![discrete_double_integrator(1, SAMPLING_PERIOD).unwrap(); p.n_agents];
    let targets = TargetSet::new(&agents, p.targets()).unwrap();
    let x0 = p.initial_states().unwrap();
    let cfg = SimConfig::discrete(0.7, 50, SinkhornIters::Fixed(20), 50);
    let mut group = c.benchmark_group("sinkhorn_mpc");
    group.sample_size(20);
    group.bench_function("n40_s20_50steps", |b| {
        b.iter_batched(|| cfg.clone(), |cfg| simulate_sinkhorn_mpc(&agents, &targets, &x0, &cfg).unwrap(), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, sinkhorn, assignment, gramians, simulation);
criterion_main!(benches);
