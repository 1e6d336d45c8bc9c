use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use smcam::codes::{build_schedule, demean, fwht};
use smcam::recovery::{recover_pinv, recover_tv2d, RecoveryParams};
use smcam::simulator::{simulate_lisens, Coding};
use smcam_bench::{camera, schedule, still_scene};

fn transform(c: &mut Criterion) {
    let mut g = c.benchmark_group("fwht");
    for n in [256usize, 1024, 4096] {
        let v: Vec<f64> = (0..n).map(|k| (k % 7) as f64).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| {
            b.iter(|| {
                let mut w = v.clone();
                fwht(&mut w).unwrap();
                black_box(w)
            })
        });
    }
    g.finish();
}

fn schedules(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_schedule");
    for n in [64usize, 256, 1024] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| build_schedule(n, n, 1, Some(16)).unwrap())
        });
    }
    g.finish();
}

fn acquisition(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate_lisens");
    for n in [64usize, 256] {
        let scene = still_scene(n);
        let s = schedule(n, 1);
        let cam = camera(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| simulate_lisens(&scene, &s, 0.01, 3, &cam).unwrap())
        });
    }
    g.finish();
}

fn reconstruction(c: &mut Criterion) {
    let n = 64;
    let scene = still_scene(n);
    let full = schedule(n, 1);
    let ms = simulate_lisens(&scene, &full, 0.0, 0, &camera(n)).unwrap();
    let y = demean(&ms, &full, None).unwrap().values;
    let phi = full.code_matrix(0..n, Coding::Signed);
    c.bench_function("recover_pinv/64", |b| {
        b.iter(|| recover_pinv(y.view(), phi.view()).unwrap())
    });

    let sub = schedule(n, 4);
    let ms = simulate_lisens(&scene, &sub, 0.0, 0, &camera(n)).unwrap();
    let y = demean(&ms, &sub, None).unwrap().values;
    let phi = sub.code_matrix(0..sub.len(), Coding::Signed);
    let params = RecoveryParams {
        max_iterations: 200,
        tolerance: 1e-15,
        ..RecoveryParams::default()
    };
    let mut g = c.benchmark_group("recover_tv2d");
    g.sample_size(10);
    g.bench_function("64x64/4x/200 iterations", |b| {
        b.iter(|| recover_tv2d(y.view(), phi.view(), &params).unwrap())
    });
    g.finish();
}

criterion_group!(benches, transform, schedules, acquisition, reconstruction);
criterion_main!(benches);
