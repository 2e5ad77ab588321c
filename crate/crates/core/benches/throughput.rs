//! Parallel-vs-sequential throughput on the two per-record hot loops:
//! dataset generation and confidence-table construction.
//!
//! Build with the default `parallel` feature to compare both paths; without
//! it only the sequential path exists and the comparison collapses.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use selconf::confidence::{doctor_table, mcd_table, msp_table};
use selconf::synth::{generate, generate_serial, SynthConfig};

fn config(n: usize) -> SynthConfig {
    SynthConfig {
        n,
        seed: 42,
        ..SynthConfig::default()
    }
}

fn bench_generate(c: &mut Criterion) {
    let mut group = c.benchmark_group("synth_generate");
    for n in [2_000usize, 10_000] {
        let cfg = config(n);
        group.bench_with_input(BenchmarkId::new("parallel", n), &cfg, |b, cfg| {
            b.iter(|| generate(black_box(cfg)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("serial", n), &cfg, |b, cfg| {
            b.iter(|| generate_serial(black_box(cfg)).unwrap())
        });
    }
    group.finish();
}

fn bench_tables(c: &mut Criterion) {
    let (set, _) = generate(&config(10_000)).unwrap();
    let mut group = c.benchmark_group("score_tables");

    group.bench_function("msp_doctor_mcd/parallel", |b| {
        b.iter(|| {
            black_box(msp_table(&set).unwrap());
            black_box(doctor_table(&set).unwrap());
            black_box(mcd_table(&set).unwrap());
        })
    });

    // Same work pinned to one rayon thread, so the comparison runs inside a
    // single compiled artifact.
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        group.bench_function("msp_doctor_mcd/serial", |b| {
            b.iter(|| {
                pool.install(|| {
                    black_box(msp_table(&set).unwrap());
                    black_box(doctor_table(&set).unwrap());
                    black_box(mcd_table(&set).unwrap());
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generate, bench_tables);
criterion_main!(benches);
