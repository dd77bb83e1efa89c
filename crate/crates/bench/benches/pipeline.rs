use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use evastro::astrometry::{solve_frame, MpmiConfig};
use evastro::crossmatch::kdtree_nn;
use evastro::event::EventStream;
use evastro::sourcefind::{dbscan, find_sources, ClusterParams};
use evastro::starmap::{
    build_star_map, estimate_field_velocity_auto, star_map_window, PolarityMode, ScheduleSelection,
    SigmaClipParams, TrackerConfig, VelocityHypothesis,
};
use evastro::synth::{random_star_field, synthesize, GroundTruth, SceneStar, SyntheticScene};
use evastro::RaDec;

fn field() -> (SyntheticScene, EventStream, GroundTruth) {
    let c = RaDec::new(83.0, -5.0);
    let mut stars = random_star_field(c, [2.2, 0.5], 500, (6.0, 13.0), 7);
    stars.push(SceneStar { ra: c.ra, dec: c.dec, mag: 5.0 });
    let mut scene = SyntheticScene::new(stars, c, [0.0625, 0.0], 6.5);
    scene.center_midpoint_on(c);
    scene.seed = 11;
    scene.rotation_deg = 20.0;
    let (stream, truth) = synthesize(&scene).unwrap();
    (scene, stream, truth)
}

fn stages(c: &mut Criterion) {
    let (scene, stream, truth) = field();
    let theta = VelocityHypothesis::new(truth.field_velocity[0], truth.field_velocity[1]);
    let frame = build_star_map(&stream, theta, PolarityMode::Dual).unwrap();
    let catalog = scene.catalog();
    let cfg = MpmiConfig { pixel_scale: Some(scene.pixel_scale), ..Default::default() };
    let center = truth.calibration_at(star_map_window(&stream).0 as f64 * 1e-6).field_center;

    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("velocity", |b| {
        b.iter(|| estimate_field_velocity_auto(&stream, ScheduleSelection::Auto, Some(1.584), &TrackerConfig::default()))
    });
    g.bench_function("star_map", |b| b.iter(|| build_star_map(&stream, black_box(theta), PolarityMode::Dual)));
    g.bench_function("find_sources", |b| {
        b.iter(|| find_sources(&frame, &stream, &ClusterParams::default(), &SigmaClipParams::default()))
    });
    g.bench_function("solve_frame", |b| b.iter(|| solve_frame(&frame, &stream, &catalog, center, &cfg)));
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let pts: Vec<[f64; 3]> = (0..4000u32)
        .map(|i| {
            let h = i.wrapping_mul(2_654_435_761);
            [(h % 400) as f64, ((h >> 9) % 300) as f64, ((h >> 17) % 100) as f64 * 0.03]
        })
        .collect();
    let refs: Vec<[f64; 2]> = pts.iter().map(|p| [p[0], p[1]]).collect();
    let queries: Vec<[f64; 2]> = refs.iter().map(|p| [p[0] + 0.5, p[1] - 0.5]).collect();
    let mut g = c.benchmark_group("kernels");
    g.bench_function("dbscan_4000", |b| b.iter(|| dbscan(black_box(&pts), 3.0, 6)));
    g.bench_function("kdtree_nn_4000", |b| b.iter(|| kdtree_nn(black_box(&queries), &refs)));
    g.finish();
}

criterion_group!(benches, stages, kernels);
criterion_main!(benches);
