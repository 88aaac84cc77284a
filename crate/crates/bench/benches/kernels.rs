use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use geoflow_core::analysis::{
    entropy_separated_sets, map_segments, unit_covector, BenchmarkMap, EntropyConfig,
};
use geoflow_core::flow::integrate_orbit;
use geoflow_core::metrics::{build_katok_family, validate_axioms, SampleSpec, DEFAULT_ALPHA};
use geoflow_core::profiles::{make_spliced_profile, CutoffPair};
use geoflow_core::sections::{ReturnMap, SectionSpec};
use geoflow_core::{DualMetric, IntegratorConfig, RotationalProfile};

fn katok_sphere() -> DualMetric {
    build_katok_family(
        RotationalProfile::RoundSphere,
        CutoffPair::new(0.5, 1.25, 1.75).unwrap(),
        DEFAULT_ALPHA,
    )
    .unwrap()
}

fn orbits(c: &mut Criterion) {
    let cfg = IntegratorConfig::default();
    let round = DualMetric::Rotational(RotationalProfile::RoundSphere);
    let katok = katok_sphere();
    let torus = DualMetric::Rotational(make_spliced_profile(4.0, 0.25).unwrap());
    let mut g = c.benchmark_group("integrate_orbit_t100");
    for (name, h) in [
        ("round-sphere", &round),
        ("katok-sphere", &katok),
        ("spliced-torus", &torus),
    ] {
        let p0 = unit_covector(h, 0.0, 0.2, 0.4).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| integrate_orbit(h, black_box(&p0), 100.0, &cfg).unwrap())
        });
    }
    g.finish();
}

fn return_map(c: &mut Criterion) {
    let cfg = IntegratorConfig::default();
    let h = katok_sphere();
    let map = ReturnMap::new(&h, &SectionSpec::equator(), &cfg).unwrap();
    c.bench_function("katok_return_map", |b| {
        b.iter(|| map.first_return(black_box(1.0), 0.6).unwrap())
    });
}

fn entropy(c: &mut Criterion) {
    let seg = map_segments(&BenchmarkMap::Cat, 2000, 10, 7).unwrap();
    let mut g = c.benchmark_group("entropy");
    g.sample_size(10);
    g.bench_function("greedy_separated_cat_t10", |b| {
        b.iter(|| seg.greedy_separated(10, black_box(0.3)))
    });
    let times: Vec<usize> = (0..=10).collect();
    g.bench_function("estimate_cat", |b| {
        b.iter(|| {
            entropy_separated_sets(
                &seg,
                &times,
                &[0.45, 0.4, 0.35, 0.3],
                &EntropyConfig::default(),
            )
            .unwrap()
        })
    });
    g.finish();
}

fn axioms(c: &mut Criterion) {
    let h = katok_sphere();
    let spec = SampleSpec::for_profile(&RotationalProfile::RoundSphere, 1000, 7);
    c.bench_function("validate_axioms_1000", |b| {
        b.iter(|| validate_axioms(&h, black_box(&spec)))
    });
}

criterion_group!(benches, orbits, return_map, entropy, axioms);
criterion_main!(benches);
