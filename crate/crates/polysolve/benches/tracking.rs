use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polysolve::{solve_total_degree, Execution, MonomialSystem, Polynomial, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense random system of `n` equations of degree `d`, `d^n` paths.
fn dense_system(n: usize, d: u32, seed: u64) -> MonomialSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exps: Vec<Vec<u32>> = vec![vec![0; n]];
    for k in 0..n {
        for deg in 1..=d {
            let mut e = vec![0; n];
            e[k] = deg;
            exps.push(e);
        }
        for j in k + 1..n {
            let mut e = vec![0; n];
            e[k] = 1;
            e[j] = 1;
            exps.push(e);
        }
    }
    let polys = (0..n)
        .map(|_| Polynomial::new(exps.iter().map(|e| (rng.random_range(-1.0..1.0), e.clone())).collect()))
        .collect();
    MonomialSystem::new(n, polys).expect("valid system")
}

fn bench_tracking(c: &mut Criterion) {
    let mut group = c.benchmark_group("total_degree");
    group.sample_size(10);
    for (n, d) in [(4, 3), (5, 3)] {
        let sys = dense_system(n, d, 11);
        let paths = (d as usize).pow(n as u32);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let cfg = TrackerConfig {
                execution: exec,
                ..Default::default()
            };
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), paths), &sys, |b, sys| {
                b.iter(|| solve_total_degree(sys, &cfg).expect("solve"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_tracking);
criterion_main!(benches);
