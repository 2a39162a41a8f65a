use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mvexit::action::{action_gradient, GammaMode, PathGrid};
use mvexit::geometry::{exit_cost, Domain};
use mvexit::potentials::{make_builtin, Coupling, PotentialSpec};
use mvexit::sde::{step, EnsembleState, InteractionMode, SimulationParams};

fn ensemble_step(c: &mut Criterion) {
    let m = make_builtin(&PotentialSpec::quadratic("doublewell1d", 0.1, Coupling::Attractive)).unwrap();
    let mut group = c.benchmark_group("step");
    for (mode, label) in [
        (InteractionMode::MeanfieldLinear, "meanfield"),
        (InteractionMode::PairwiseExact, "pairwise"),
    ] {
        for n in [64usize, 256, 1024] {
            let mut p = SimulationParams::new(0.3, 1e-3, n, 1);
            p.unsafe_dt = true;
            p.interaction_mode = mode;
            let mut st = EnsembleState::new(n, &[-1.0], 1);
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, _| {
                b.iter(|| step(black_box(&mut st), &m, &p).unwrap())
            });
        }
    }
    group.finish();
}

fn action_grad(c: &mut Criterion) {
    let m = make_builtin(&PotentialSpec::gaussian("doublewell2d", 0.5, 1.0)).unwrap();
    let path = PathGrid::straight_line(&m.attractor, &[0.0, 0.3], 20.0, 400);
    c.bench_function("action_gradient/dw2d_n400", |b| {
        b.iter(|| action_gradient(black_box(&path), &m, GammaMode::FrozenAtA).unwrap())
    });
}

fn exit_cost_ball(c: &mut Criterion) {
    let m = std::sync::Arc::new(make_builtin(&PotentialSpec::quadratic("doublewell2d", 0.5, Coupling::Attractive)).unwrap());
    let w = m.effective();
    let d = Domain::Ball {
        center: m.attractor.clone(),
        radius: 0.5,
    };
    c.bench_function("exit_cost/dw2d_ball_budget500", |b| b.iter(|| exit_cost(&w, black_box(&d), 500, 3).unwrap()));
}

criterion_group!(benches, ensemble_step, action_grad, exit_cost_ball);
criterion_main!(benches);
