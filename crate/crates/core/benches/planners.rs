use std::path::PathBuf;
use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use evac_core::experiment::{load_map, make_workload, route_all, ExperimentConfig, PlannerKind, Workload};
use evac_core::{build_density, plan_route, DensityParams, Execution, GridMap};

fn setup(agents: usize) -> (Arc<GridMap>, Workload) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/five_exit.map");
    let map = Arc::new(load_map(&path).expect("shipped map loads"));
    let cfg = ExperimentConfig::new(Arc::clone(&map));
    let work = make_workload(&cfg, agents, 1).expect("workload");
    (map, work)
}

/// One replanning round: every agent routed against the same snapshot.
fn replan_batch(c: &mut Criterion) {
    let (map, work) = setup(500);
    let cells: Vec<_> = work
        .requests
        .iter()
        .map(|r| map.world_to_cell(r.src.0, r.src.1).unwrap())
        .collect();
    let mut group = c.benchmark_group("replan_batch");
    group.throughput(Throughput::Elements(cells.len() as u64));
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(format!("{exec:?}").to_lowercase(), |b| {
            b.iter(|| {
                exec.map(&cells, |&src| {
                    plan_route(&map, &work.snapshot, src, map.exits(), 0.5).map(|r| r.total_cost)
                })
            })
        });
    }
    group.finish();
}

fn planners(c: &mut Criterion) {
    let (map, work) = setup(100);
    let mut group = c.benchmark_group("planners");
    group.throughput(Throughput::Elements(work.requests.len() as u64));
    group.sample_size(10);
    for planner in PlannerKind::ALL {
        group.bench_function(planner.as_str(), |b| {
            b.iter(|| route_all(&map, &work, planner, black_box(0.5)))
        });
    }
    group.finish();
}

fn density(c: &mut Criterion) {
    let mut group = c.benchmark_group("density_build");
    for agents in [100, 1000] {
        let (map, _) = setup(agents);
        let cfg = ExperimentConfig::new(Arc::clone(&map));
        let work = make_workload(&cfg, agents, 2).unwrap();
        let positions: Vec<(f64, f64)> = work.requests.iter().map(|r| r.src).collect();
        group.bench_with_input(BenchmarkId::from_parameter(agents), &positions, |b, pos| {
            b.iter(|| {
                let counts = evac_core::bin_positions(pos, &map).unwrap();
                build_density(&counts, &map, DensityParams::default()).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, replan_batch, planners, density);
criterion_main!(benches);
