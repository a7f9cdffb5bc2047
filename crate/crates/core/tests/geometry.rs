mod common;

use common::*;
use dreamflow::scene::{HurdleParams, SceneGeometry, SideWalls, StairsParams, NO_HIT};
use dreamflow::*;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NEAR: f64 = 0.05;
const FAR: f64 = 20.0;

fn terrains() -> Vec<TerrainSpec> {
    vec![
        TerrainSpec::flat(),
        TerrainSpec::stairs(StairsParams::default()),
        TerrainSpec::hurdles(HurdleParams::default()),
        TerrainSpec::stairs(StairsParams::default()).with_side_walls(SideWalls { height: 0.8, gap: 0.2, thickness: 0.1 }),
    ]
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let pos = Vector3::new(rng.gen_range(-1.0..1.5), rng.gen_range(-0.4..0.4), rng.gen_range(1.2..1.8));
    Pose::from_euler(pos, rng.gen_range(-0.6..0.6), rng.gen_range(0.0..0.9), rng.gen_range(-0.1..0.1))
}

fn only_label(scene: &SceneGeometry, label: u8) -> SceneGeometry {
    SceneGeometry { boxes: scene.boxes.iter().filter(|b| b.label == label).cloned().collect(), labels: vec![label] }
}

#[test]
fn raycast_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let k = CameraIntrinsics::from_fov(100.0, 96, 54).unwrap();
    for spec in terrains() {
        let scene = build_terrain(&spec).unwrap();
        for _ in 0..5 {
            let pose = random_pose(&mut rng);
            let cam = Cam::new(&k, &pose);
            let (depth, labels) = raycast(&scene, &k, &pose, NEAR, FAR).unwrap();
            let oracle = render(&scene, &cam, NEAR, FAR);
            for (idx, hit) in oracle.iter().enumerate() {
                match *hit {
                    None => {
                        assert_eq!(depth.z[idx], FAR as f32, "{} pixel {idx}", spec.name());
                        assert_eq!(labels.labels[idx], NO_HIT);
                    }
                    Some((t, l)) => {
                        let z = depth.z[idx] as f64;
                        assert!((z - t).abs() <= 1e-6 * t, "{} pixel {idx}: {z} vs {t}", spec.name());
                        if labels.labels[idx] != l {
                            // only a tie between abutting boxes may differ
                            let i = (idx % k.width as usize) as u32;
                            let j = (idx / k.width as usize) as u32;
                            let other = first_hit(&only_label(&scene, labels.labels[idx]), cam.c, cam.pixel_ray(i, j), NEAR);
                            let (t2, _) = other.expect("label has a hit");
                            assert!((t2 - t).abs() <= 1e-9 * t, "{} pixel {idx}: label {} vs {l}", spec.name(), labels.labels[idx]);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn geometry_nearer_than_the_clip_is_clamped() {
    let scene = build_terrain(&TerrainSpec::flat()).unwrap();
    let k = CameraIntrinsics::from_fov(60.0, 8, 6).unwrap();
    let pose = Pose::from_euler(Vector3::new(0.0, 0.0, 0.02), 0.0, std::f64::consts::FRAC_PI_2, 0.0);
    let (depth, labels) = raycast(&scene, &k, &pose, NEAR, FAR).unwrap();
    assert!(depth.z.iter().all(|&z| z == NEAR as f32));
    assert!(labels.labels.iter().all(|&l| l == spec_ground()));
}

fn spec_ground() -> u8 {
    TerrainSpec::flat().labels.ground
}

#[test]
fn forward_strafe_holes_agree_with_visibility_off_depth_edges() {
    let spec = TerrainSpec::hurdles(HurdleParams { height: 0.3, ..Default::default() });
    let scene = build_terrain(&spec).unwrap();
    let k = CameraIntrinsics::from_fov(120.0, 128, 72).unwrap();
    let mut total_disoccluded = 0;
    for (x0, dy) in [(0.4, 0.1), (0.6, 0.2), (0.8, -0.3), (1.1, 0.15)] {
        let key = Pose::from_euler(Vector3::new(x0, 0.0, 0.4), 0.0, 0.25, 0.0);
        let dst = Pose::from_euler(Vector3::new(x0 + 0.05, dy, 0.4), 0.0, 0.25, 0.0);
        let (dk, _) = raycast(&scene, &k, &key, NEAR, FAR).unwrap();
        let (dd, _) = raycast(&scene, &k, &dst, NEAR, FAR).unwrap();
        let (_, holes) = warp_frame(&image::RgbImage::new(128, 72), &dk, &key, &dd, &dst, &k).unwrap();
        let (kc, dc) = (Cam::new(&k, &key), Cam::new(&k, &dst));
        let oracle = disoccluded(&scene, &kc, &dc, NEAR, FAR);
        let edge = near_depth_edge(&render(&scene, &dc, NEAR, FAR), 128, 72, 0.05);
        for idx in 0..oracle.len() {
            assert!(oracle[idx] == holes.bits[idx] || edge[idx], "x0 {x0} dy {dy}: pixel {idx} off any depth edge");
        }
        total_disoccluded += oracle.iter().filter(|&&b| b).count();
    }
    assert!(total_disoccluded > 0);
}

#[test]
fn pure_rotation_only_uncovers_out_of_frame_pixels() {
    let scene = build_terrain(&TerrainSpec::stairs(StairsParams::default())).unwrap();
    let k = CameraIntrinsics::from_fov(120.0, 128, 72).unwrap();
    let p = Vector3::new(0.1, 0.05, 0.4);
    let key = Pose::from_euler(p, 0.0, 0.25, 0.0);
    let dst = Pose::from_euler(p, 0.12, 0.27, 0.01);
    let (dk, _) = raycast(&scene, &k, &key, NEAR, FAR).unwrap();
    let (dd, _) = raycast(&scene, &k, &dst, NEAR, FAR).unwrap();
    let (_, holes) = warp_frame(&image::RgbImage::new(128, 72), &dk, &key, &dd, &dst, &k).unwrap();
    let (kc, dc) = (Cam::new(&k, &key), Cam::new(&k, &dst));
    let mut outside = 0;
    for j in 0..72 {
        for i in 0..128 {
            let (u, v) = kc.project_dir(dc.pixel_ray(i, j)).unwrap();
            let out = !kc.in_frame(u, v);
            outside += out as usize;
            assert_eq!(holes.bits[(j * 128 + i) as usize], out, "pixel ({i}, {j})");
        }
    }
    assert!(outside > 0);
}
