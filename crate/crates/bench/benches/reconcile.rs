use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ctrecon::covariance::shrinkage_intensity;
use ctrecon::scoring::energy_score;
use ctrecon::{build_omega, CovarianceKind, CovarianceSpec, EsPairs, ReconciliationMap, ResidualInput, ResidualKind, ResidualSet};
use ctrecon_bench::{normal_rows, star_structure};

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("projection");
    for (n_b, m) in [(2, 2), (4, 4), (8, 12)] {
        let s = star_structure(n_b, m);
        let e = ResidualSet::new(&s, normal_rows(4 * s.dim(), s.dim(), 1), ResidualKind::MultiStep).unwrap();
        for kind in [CovarianceKind::Shr, CovarianceKind::Hb] {
            let omega = build_omega(&CovarianceSpec::new(kind), &s, ResidualInput::MultiStep(&e)).unwrap();
            group.bench_with_input(BenchmarkId::new(kind.name(), s.dim()), &omega, |b, omega| {
                b.iter(|| ReconciliationMap::projection(&s, black_box(omega)).unwrap())
            });
        }
    }
    group.finish();
}

fn reconcile_rows(c: &mut Criterion) {
    let s = star_structure(4, 4);
    let omega = build_omega(&CovarianceSpec::new(CovarianceKind::Struc), &s, ResidualInput::None).unwrap();
    let map = ReconciliationMap::projection(&s, &omega).unwrap();
    let rows = normal_rows(1000, s.dim(), 2);
    c.bench_function("reconcile_rows/1000x35", |b| b.iter(|| map.reconcile_rows(black_box(&rows)).unwrap()));
}

fn shrinkage(c: &mut Criterion) {
    let x = normal_rows(200, 35, 3);
    c.bench_function("shrinkage_intensity/200x35", |b| b.iter(|| shrinkage_intensity(black_box(&x), false).unwrap()));
}

fn scores(c: &mut Criterion) {
    let x = normal_rows(500, 35, 4);
    let z = normal_rows(35, 1, 5).column(0).into_owned();
    let mut group = c.benchmark_group("energy_score");
    for pairs in [EsPairs::Consecutive, EsPairs::All] {
        group.bench_function(format!("{pairs:?}"), |b| b.iter(|| energy_score(black_box(&x), &z, pairs).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, projection, reconcile_rows, shrinkage, scores);
criterion_main!(benches);
