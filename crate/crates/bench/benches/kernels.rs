use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use convexlab::oracle::{brute_force_optimal, solve_optimal};
use convexlab::train::{dataset_for, train_phase};
use convexlab::{
    build_task, FiniteDistribution, LossFamily, ModelClass, ModelConfig, NeuralModel, OptimizerCfg, PhasePlan,
    SequenceModel, SimplexObjective, SolverConfig, TaskSpec, Vocab,
};

fn oracle(c: &mut Criterion) {
    let d = FiniteDistribution::from_probs(vec![0.4, 0.25, 0.2, 0.1, 0.05]).unwrap();
    let obj = SimplexObjective::unit(LossFamily::exp_composed(0.5).unwrap()).unwrap();
    c.bench_function("solve_optimal/5 atoms", |b| {
        b.iter(|| solve_optimal(black_box(&d), &obj, &SolverConfig::default()).unwrap())
    });
    let mut group = c.benchmark_group("brute_force_optimal");
    for res in [50, 200] {
        group.bench_with_input(BenchmarkId::from_parameter(res), &res, |b, &res| {
            b.iter(|| brute_force_optimal(black_box(&d), &obj, res).unwrap())
        });
    }
    group.finish();
}

fn enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumerate_distribution");
    for (v, t) in [(4, 3), (6, 4), (8, 4)] {
        let cfg = ModelConfig::new(Vocab::with_size(v).unwrap(), t, 1);
        for class in [ModelClass::Autoregressive, ModelClass::NonAutoregressive] {
            let m = NeuralModel::new(class, cfg.clone(), 0).unwrap();
            let id = format!("{}/V{v}T{t}", class.tag());
            group.bench_function(id, |b| b.iter(|| m.enumerate_distribution(black_box(0)).unwrap()));
        }
    }
    group.finish();
}

fn train_steps(c: &mut Criterion) {
    let task = build_task(&TaskSpec::new(4, 3, 4, 3, 0)).unwrap();
    let mut group = c.benchmark_group("train_phase/10 steps");
    for class in [ModelClass::Autoregressive, ModelClass::NonAutoregressive] {
        let plan = PhasePlan::new(class, LossFamily::exp_composed(1.0).unwrap());
        let data = dataset_for(&task, &plan, 0).unwrap();
        let cfg = OptimizerCfg {
            steps: 10,
            ..OptimizerCfg::pretrain()
        };
        let model = NeuralModel::new(class, plan.model_config(&task), 0).unwrap();
        group.bench_function(class.tag(), |b| {
            b.iter(|| {
                let mut m = model.clone();
                train_phase(&mut m, &data, &LossFamily::Log, &cfg, 0).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, oracle, enumeration, train_steps);
criterion_main!(benches);
