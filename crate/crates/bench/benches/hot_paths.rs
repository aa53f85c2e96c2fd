use std::hint::black_box;

use comest_bench::desk_posterior;
use comest_core::active::{select_action, ActionGrid, ActionScorer};
use comest_core::bnn::{self, RegressionData};
use comest_core::pipeline::fuse;
use comest_core::sim::{gravity_wrench, ActionBounds, DatasetConfig, RigidGraspScene, WristOrientation};
use comest_core::{sim, solve_com_analytical, ComEstimate, Result};
use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;

struct Bowl;

impl ActionScorer for Bowl {
    fn score(&self, _prior: &ComEstimate, a: WristOrientation) -> Result<f64> {
        Ok(a.theta1 * a.theta1 + a.theta2 * a.theta2)
    }
}

fn physics(c: &mut Criterion) {
    let scene = RigidGraspScene::new(0.3, Vector3::new(0.02, -0.03, 0.04)).unwrap();
    let o = WristOrientation::new(0.4, -0.7);
    c.bench_function("gravity_wrench", |b| b.iter(|| gravity_wrench(black_box(&scene), black_box(o))));
    let w = gravity_wrench(&scene, WristOrientation::DEFAULT);
    c.bench_function("solve_com_analytical", |b| b.iter(|| solve_com_analytical(black_box(&w))));
    c.bench_function("generate_dataset desk", |b| {
        b.iter(|| sim::generate_dataset(black_box(&DatasetConfig::default()), 3))
    });
}

fn regressor(c: &mut Criterion) {
    let p = desk_posterior();
    let data = RegressionData {
        inputs: p.x.view(),
        targets: p.y.view(),
    };
    c.bench_function("grad_log_posterior desk", |b| {
        b.iter(|| bnn::grad_log_posterior(&p.arch, &p.prior, &data, black_box(&p.theta)))
    });
}

fn selection(c: &mut Criterion) {
    let grid = ActionGrid::new(ActionBounds::default(), 21).unwrap();
    let prior = ComEstimate::new(Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.01, 0.01, 0.03)).unwrap();
    c.bench_function("select_action 21x21", |b| b.iter(|| select_action(&Bowl, black_box(&prior), &grid)));
    let second = ComEstimate::new(Vector3::new(0.02, 0.01, 0.03), Vector3::new(0.02, 0.01, 0.01)).unwrap();
    c.bench_function("fuse", |b| b.iter(|| fuse(black_box(&prior), black_box(&second))));
}

criterion_group!(benches, physics, regressor, selection);
criterion_main!(benches);
