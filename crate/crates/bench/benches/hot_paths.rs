use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dreamflow::generator::build_request;
use dreamflow::prompts::reference_batch;
use dreamflow::scene::{HurdleParams, StairsParams};
use dreamflow::*;
use nalgebra::Vector3;

const NEAR: f64 = 0.05;
const FAR: f64 = 20.0;

fn poses() -> (Pose, Pose) {
    let key = Pose::from_euler(Vector3::new(0.2, 0.0, 0.4), 0.0, 0.25, 0.0);
    let dst = Pose::from_euler(Vector3::new(0.26, 0.01, 0.4), 0.02, 0.25, 0.0);
    (key, dst)
}

fn terrains() -> [TerrainSpec; 3] {
    [TerrainSpec::flat(), TerrainSpec::stairs(StairsParams::default()), TerrainSpec::hurdles(HurdleParams::default())]
}

fn bench_raycast(c: &mut Criterion) {
    let k = CameraIntrinsics::from_fov(120.0, 320, 180).unwrap();
    let (key, _) = poses();
    let mut g = c.benchmark_group("raycast_320x180");
    for spec in terrains() {
        let scene = build_terrain(&spec).unwrap();
        g.bench_function(BenchmarkId::from_parameter(spec.name()), |b| {
            b.iter(|| raycast(black_box(&scene), &k, &key, NEAR, FAR).unwrap())
        });
    }
    g.finish();
}

fn bench_flow_and_warp(c: &mut Criterion) {
    let k = CameraIntrinsics::from_fov(120.0, 320, 180).unwrap();
    let (key, dst) = poses();
    let spec = TerrainSpec::stairs(StairsParams::default());
    let scene = build_terrain(&spec).unwrap();
    let (dk, labels) = raycast(&scene, &k, &key, NEAR, FAR).unwrap();
    let (dd, _) = raycast(&scene, &k, &dst, NEAR, FAR).unwrap();
    let prompt = reference_batch().pairs[0].clone();
    let request = build_request(&dk, &labels, &spec.labels, &prompt, 0.8, 6, 1);
    let rgb = StubGenerator::default().render(&scene, &key, &k, &request);

    c.bench_function("compute_flow_320x180", |b| b.iter(|| compute_flow(black_box(&dd), &dst, &key, &k).unwrap()));
    let flow = compute_flow(&dd, &dst, &key, &k).unwrap();
    c.bench_function("visibility_mask_320x180", |b| {
        b.iter(|| visibility_mask(black_box(&flow), &dd, &dk, &dst, &key, &k, 0.01).unwrap())
    });
    c.bench_function("warp_frame_320x180", |b| b.iter(|| warp_frame(black_box(&rgb), &dk, &key, &dd, &dst, &k).unwrap()));
    let (warped, holes) = warp_frame(&rgb, &dk, &key, &dd, &dst, &k).unwrap();
    c.bench_function("fill_holes_nearest_320x180", |b| {
        b.iter(|| fill_holes(black_box(&warped), &holes, FillStrategy::NearestValid).unwrap())
    });
    c.bench_function("stub_render_320x180", |b| {
        b.iter(|| StubGenerator::default().render(black_box(&scene), &key, &k, &request))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_raycast, bench_flow_and_warp
}
criterion_main!(benches);
