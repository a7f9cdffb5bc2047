//! Box-composed terrain and a software raycaster producing z-depth and
//! semantic label images.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, DepthMap, Pose};

/// Label written where no geometry was hit.
pub const NO_HIT: u8 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid terrain spec: `{field}` {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("invalid render range near={near} far={far}")]
    InvalidRange { near: f64, far: f64 },
    #[error("malformed terrain config: {0}")]
    Parse(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> SceneError {
    SceneError::InvalidSpec { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StairsParams {
    #[serde(default = "StairsParams::default_step_count")]
    pub step_count: u32,
    #[serde(default = "StairsParams::default_rise")]
    pub rise: f64,
    #[serde(default = "StairsParams::default_run")]
    pub run: f64,
    #[serde(default = "StairsParams::default_width")]
    pub width: f64,
}

impl StairsParams {
    fn default_step_count() -> u32 {
        5
    }
    fn default_rise() -> f64 {
        0.17
    }
    fn default_run() -> f64 {
        0.30
    }
    fn default_width() -> f64 {
        2.0
    }
}

impl Default for StairsParams {
    fn default() -> Self {
        Self {
            step_count: Self::default_step_count(),
            rise: Self::default_rise(),
            run: Self::default_run(),
            width: Self::default_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HurdleParams {
    #[serde(default = "HurdleParams::default_count")]
    pub count: u32,
    #[serde(default = "HurdleParams::default_height")]
    pub height: f64,
    #[serde(default = "HurdleParams::default_thickness")]
    pub thickness: f64,
    #[serde(default = "HurdleParams::default_spacing")]
    pub spacing: f64,
    #[serde(default = "HurdleParams::default_lane_width")]
    pub lane_width: f64,
}

impl HurdleParams {
    fn default_count() -> u32 {
        3
    }
    fn default_height() -> f64 {
        0.25
    }
    fn default_thickness() -> f64 {
        0.1
    }
    fn default_spacing() -> f64 {
        1.5
    }
    fn default_lane_width() -> f64 {
        2.0
    }
}

impl Default for HurdleParams {
    fn default() -> Self {
        Self {
            count: Self::default_count(),
            height: Self::default_height(),
            thickness: Self::default_thickness(),
            spacing: Self::default_spacing(),
            lane_width: Self::default_lane_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideWalls {
    pub height: f64,
    /// Clearance between the lane edge and the inner wall face.
    pub gap: f64,
    #[serde(default = "SideWalls::default_thickness")]
    pub thickness: f64,
}

impl SideWalls {
    fn default_thickness() -> f64 {
        0.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerrainKind {
    Flat(FlatParams),
    Stairs(StairsParams),
    Hurdles(HurdleParams),
}

/// Flat ground. The lane width only places side walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatParams {
    #[serde(default = "FlatParams::default_lane_width")]
    pub lane_width: f64,
}

impl FlatParams {
    fn default_lane_width() -> f64 {
        2.0
    }
}

impl Default for FlatParams {
    fn default() -> Self {
        Self { lane_width: Self::default_lane_width() }
    }
}

/// Ground slab extent: `x` in `[-back, length]`, `y` in `[-width/2, width/2]`,
/// top face at `z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundParams {
    pub length: f64,
    pub back: f64,
    pub width: f64,
    pub thickness: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self { length: 12.0, back: 2.0, width: 10.0, thickness: 0.1 }
    }
}

/// Asset label per terrain part. Label 0 is reserved for "no hit".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssetLabels {
    pub ground: u8,
    /// Steps or hurdles.
    pub feature: u8,
    pub walls: u8,
}

impl Default for AssetLabels {
    fn default() -> Self {
        Self { ground: 1, feature: 2, walls: 3 }
    }
}

impl AssetLabels {
    pub fn all(&self) -> [u8; 3] {
        [self.ground, self.feature, self.walls]
    }
}

/// Terrain description loadable from JSON, e.g.
///
/// ```json
/// { "kind": "stairs", "step_count": 3, "rise": 0.17, "run": 0.3, "width": 2.0,
///   "feature_start": 1.5, "side_walls": { "height": 1.0, "gap": 0.3 } }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    #[serde(flatten)]
    pub kind: TerrainKind,
    /// Distance along the lane at which the first step or hurdle begins.
    #[serde(default = "TerrainSpec::default_feature_start")]
    pub feature_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side_walls: Option<SideWalls>,
    #[serde(default)]
    pub ground: GroundParams,
    #[serde(default)]
    pub labels: AssetLabels,
}

impl TerrainSpec {
    fn default_feature_start() -> f64 {
        1.5
    }
    pub fn new(kind: TerrainKind) -> Self {
        Self {
            kind,
            feature_start: Self::default_feature_start(),
            side_walls: None,
            ground: GroundParams::default(),
            labels: AssetLabels::default(),
        }
    }

    pub fn flat() -> Self {
        Self::new(TerrainKind::Flat(FlatParams::default()))
    }

    pub fn stairs(p: StairsParams) -> Self {
        Self::new(TerrainKind::Stairs(p))
    }

    pub fn hurdles(p: HurdleParams) -> Self {
        Self::new(TerrainKind::Hurdles(p))
    }

    pub fn with_side_walls(mut self, walls: SideWalls) -> Self {
        self.side_walls = Some(walls);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TerrainKind::Flat(_) => "flat",
            TerrainKind::Stairs(_) => "stairs",
            TerrainKind::Hurdles(_) => "hurdles",
        }
    }

    /// Half-width of the walkable lane.
    fn lane_half_width(&self) -> f64 {
        match &self.kind {
            TerrainKind::Flat(f) => f.lane_width / 2.0,
            TerrainKind::Stairs(s) => s.width / 2.0,
            TerrainKind::Hurdles(h) => h.lane_width / 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        fn positive(field: &str, v: f64) -> Result<(), SceneError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be a positive length, got {v}")))
            }
        }
        positive("ground.length", self.ground.length)?;
        positive("ground.width", self.ground.width)?;
        positive("ground.thickness", self.ground.thickness)?;
        if !(self.ground.back >= 0.0 && self.ground.back.is_finite()) {
            return Err(invalid("ground.back", "must be non-negative"));
        }
        if !self.feature_start.is_finite() {
            return Err(invalid("feature_start", "must be finite"));
        }
        match &self.kind {
            TerrainKind::Flat(f) => positive("lane_width", f.lane_width)?,
            TerrainKind::Stairs(s) => {
                if s.step_count < 1 {
                    return Err(invalid("step_count", "must be at least 1"));
                }
                positive("rise", s.rise)?;
                positive("run", s.run)?;
                positive("width", s.width)?;
            }
            TerrainKind::Hurdles(h) => {
                if h.count < 1 {
                    return Err(invalid("count", "must be at least 1"));
                }
                positive("height", h.height)?;
                positive("thickness", h.thickness)?;
                positive("spacing", h.spacing)?;
                positive("lane_width", h.lane_width)?;
            }
        }
        if let Some(w) = &self.side_walls {
            positive("side_walls.height", w.height)?;
            positive("side_walls.gap", w.gap)?;
            positive("side_walls.thickness", w.thickness)?;
        }
        let labels = self.labels.all();
        if labels.contains(&NO_HIT) {
            return Err(invalid("labels", "label 0 is reserved for background"));
        }
        Ok(())
    }
}

/// Axis-aligned box carrying one asset label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub label: u8,
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3], label: u8) -> Self {
        debug_assert!((0..3).all(|a| min[a] < max[a]), "degenerate box {min:?} {max:?}");
        Self { min, max, label }
    }

    /// Entry and exit ray parameters of `origin + t * dir`, or `None` when
    /// the line misses. Boundaries count as inside.
    #[inline]
    pub fn slab_interval(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = origin[a];
            let d = dir[a];
            if d == 0.0 {
                if o < self.min[a] || o > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut ta, mut tb) = ((self.min[a] - o) * inv, (self.max[a] - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    pub fn contains(&self, p: &Vector3<f64>, eps: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - eps && p[a] <= self.max[a] + eps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub boxes: Vec<Aabb>,
    pub labels: Vec<u8>,
}

impl SceneGeometry {
    pub fn empty() -> Self {
        Self { boxes: Vec::new(), labels: Vec::new() }
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let first = self.boxes.first()?;
        let mut b = Aabb { min: first.min, max: first.max, label: NO_HIT };
        for bx in &self.boxes[1..] {
            for a in 0..3 {
                b.min[a] = b.min[a].min(bx.min[a]);
                b.max[a] = b.max[a].max(bx.max[a]);
            }
        }
        Some(b)
    }

    /// Closest hit of the ray `origin + t * dir` with `t` clamped into
    /// `[near, far]`, as `(t, label)`. Equal `t` resolves to the smaller
    /// label so the result does not depend on box order.
    pub fn first_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, near: f64, far: f64) -> Option<(f64, u8)> {
        let mut best: Option<(f64, u8)> = None;
        for b in &self.boxes {
            let Some((t0, t1)) = b.slab_interval(origin, dir) else { continue };
            if t1 < near || t0 > far {
                continue;
            }
            let t = t0.max(near);
            best = match best {
                Some((bt, bl)) if bt < t || (bt == t && bl <= b.label) => Some((bt, bl)),
                _ => Some((t, b.label)),
            };
        }
        best
    }

    /// Highest box top above the ground-plane point `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        self.boxes
            .iter()
            .filter(|b| (b.min[0]..=b.max[0]).contains(&x) && (b.min[1]..=b.max[1]).contains(&y))
            .map(|b| b.max[2])
            .reduce(f64::max)
    }
}

/// Builds the box list for a terrain. Order: ground, features front to back,
/// then the right and left walls.
pub fn build_terrain(spec: &TerrainSpec) -> Result<SceneGeometry, SceneError> {
    spec.validate()?;
    let g = &spec.ground;
    let l = spec.labels;
    let mut boxes = vec![Aabb::new(
        [-g.back, -g.width / 2.0, -g.thickness],
        [g.length, g.width / 2.0, 0.0],
        l.ground,
    )];
    let x0 = spec.feature_start;
    match &spec.kind {
        TerrainKind::Flat(_) => {}
        TerrainKind::Stairs(s) => {
            for i in 1..=s.step_count {
                let lo = x0 + (i - 1) as f64 * s.run;
                boxes.push(Aabb::new(
                    [lo, -s.width / 2.0, 0.0],
                    [lo + s.run, s.width / 2.0, i as f64 * s.rise],
                    l.feature,
                ));
            }
        }
        TerrainKind::Hurdles(h) => {
            for j in 0..h.count {
                let lo = x0 + j as f64 * h.spacing;
                boxes.push(Aabb::new(
                    [lo, -h.lane_width / 2.0, 0.0],
                    [lo + h.thickness, h.lane_width / 2.0, h.height],
                    l.feature,
                ));
            }
        }
    }
    if let Some(w) = &spec.side_walls {
        let inner = spec.lane_half_width() + w.gap;
        let outer = inner + w.thickness;
        boxes.push(Aabb::new([-g.back, -outer, 0.0], [g.length, -inner, w.height], l.walls));
        boxes.push(Aabb::new([-g.back, inner, 0.0], [g.length, outer, w.height], l.walls));
    }
    let mut labels: Vec<u8> = vec![l.ground];
    if !matches!(spec.kind, TerrainKind::Flat(_)) {
        labels.push(l.feature);
    }
    if spec.side_walls.is_some() {
        labels.push(l.walls);
    }
    labels.sort_unstable();
    labels.dedup();
    Ok(SceneGeometry { boxes, labels })
}

/// Per-pixel asset labels; [`NO_HIT`] where the ray escaped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u8>,
}

/// Binary image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    /// Rows packed LSB-first into bytes, row-major over the whole image.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn unpack(width: u32, height: u32, bytes: &[u8]) -> Option<Self> {
        let n = width as usize * height as usize;
        if bytes.len() != n.div_ceil(8) {
            return None;
        }
        let bits = (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
        Some(Self { width, height, bits })
    }
}

/// Renders z-depth and labels for every pixel center.
///
/// Rays are parametrized with a unit camera-forward component, so the ray
/// parameter of a hit is its z-depth. Geometry nearer than `near` is clamped
/// to `near`; pixels with no hit in `[near, far]` get `far` and [`NO_HIT`].
pub fn raycast(
    scene: &SceneGeometry,
    k: &CameraIntrinsics,
    pose: &Pose,
    near: f64,
    far: f64,
) -> Result<(DepthMap, LabelImage), SceneError> {
    if !(near > 0.0 && near < far && far.is_finite()) {
        return Err(SceneError::InvalidRange { near, far });
    }
    let w = k.width as usize;
    let origin = pose.position();
    let rows: Vec<(Vec<f32>, Vec<u8>)> = (0..k.height)
        .into_par_iter()
        .map(|j| {
            let mut zs = Vec::with_capacity(w);
            let mut ls = Vec::with_capacity(w);
            for i in 0..k.width {
                let (u, v) = CameraIntrinsics::pixel_center(i, j);
                let dir = pose.transform_vector(&k.ray_direction(u, v));
                match scene.first_hit(&origin, &dir, near, far) {
                    Some((t, label)) => {
                        zs.push(t as f32);
                        ls.push(label);
                    }
                    None => {
                        zs.push(far as f32);
                        ls.push(NO_HIT);
                    }
                }
            }
            (zs, ls)
        })
        .collect();
    let mut depth = DepthMap::filled(k.width, k.height, near as f32, far as f32, far as f32);
    let mut labels = LabelImage { width: k.width, height: k.height, labels: vec![NO_HIT; k.pixel_count()] };
    for (j, (zs, ls)) in rows.into_iter().enumerate() {
        depth.z[j * w..(j + 1) * w].copy_from_slice(&zs);
        labels.labels[j * w..(j + 1) * w].copy_from_slice(&ls);
    }
    Ok((depth, labels))
}

/// One mask per label present, in ascending label order. The masks
/// partition the image; label 0 yields the background mask.
pub fn binary_masks(labels: &LabelImage) -> Vec<(u8, Mask)> {
    let mut present = [false; 256];
    for &l in &labels.labels {
        present[l as usize] = true;
    }
    (0..=255u8)
        .filter(|&l| present[l as usize])
        .map(|l| {
            let bits = labels.labels.iter().map(|&x| x == l).collect();
            (l, Mask { width: labels.width, height: labels.height, bits })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam(w: u32, h: u32) -> CameraIntrinsics {
        CameraIntrinsics::from_fov(90.0, w, h).unwrap()
    }

    #[test]
    fn flat_ground_is_one_box() {
        let g = build_terrain(&TerrainSpec::flat()).unwrap();
        assert_eq!(g.boxes.len(), 1);
        assert_eq!(g.boxes[0].label, AssetLabels::default().ground);
        assert_eq!(g.boxes[0].max[2], 0.0);
    }

    #[test]
    fn stairs_stack_cumulative_rise() {
        let spec = TerrainSpec::stairs(StairsParams { step_count: 3, rise: 0.17, run: 0.30, width: 2.0 });
        let g = build_terrain(&spec).unwrap();
        assert_eq!(g.boxes.len(), 4);
        for i in 1..=3 {
            let b = &g.boxes[i];
            assert_abs_diff_eq!(b.max[2], 0.17 * i as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(b.max[0] - b.min[0], 0.30, epsilon = 1e-12);
            assert_abs_diff_eq!(b.max[1] - b.min[1], 2.0, epsilon = 1e-12);
            assert_eq!(b.min[2], 0.0);
        }
        // ascending and contiguous along the lane
        assert_abs_diff_eq!(g.boxes[2].min[0], g.boxes[1].max[0], epsilon = 1e-12);
    }

    #[test]
    fn hurdles_with_walls() {
        let spec = TerrainSpec::hurdles(HurdleParams {
            count: 2,
            height: 0.4,
            thickness: 0.1,
            spacing: 1.5,
            ..Default::default()
        })
        .with_side_walls(SideWalls { height: 1.0, gap: 0.3, thickness: 0.1 });
        let g = build_terrain(&spec).unwrap();
        assert_eq!(g.boxes.len(), 5);
        assert_abs_diff_eq!(g.boxes[2].min[0] - g.boxes[1].min[0], 1.5, epsilon = 1e-12);
        assert_eq!(g.labels, vec![1, 2, 3]);
        for b in &g.boxes {
            assert!((0..3).all(|a| b.min[a] < b.max[a]));
            assert!(g.labels.contains(&b.label));
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let spec = TerrainSpec::stairs(StairsParams { step_count: 0, ..Default::default() });
        match build_terrain(&spec) {
            Err(SceneError::InvalidSpec { field, .. }) => assert_eq!(field, "step_count"),
            other => panic!("unexpected {other:?}"),
        }
        let spec = TerrainSpec::hurdles(HurdleParams { thickness: -0.1, ..Default::default() });
        match build_terrain(&spec) {
            Err(SceneError::InvalidSpec { field, .. }) => assert_eq!(field, "thickness"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn terrain_json_defaults() {
        let spec = TerrainSpec::from_json(r#"{"kind":"stairs","step_count":3}"#).unwrap();
        match &spec.kind {
            TerrainKind::Stairs(s) => {
                assert_eq!(s.step_count, 3);
                assert_eq!(s.rise, 0.17);
                assert_eq!(s.run, 0.30);
            }
            _ => unreachable!(),
        }
        let back = serde_json::to_string(&spec).unwrap();
        assert_eq!(TerrainSpec::from_json(&back).unwrap(), spec);
        assert!(TerrainSpec::from_json(r#"{"kind":"stairs","rise":-1}"#).is_err());
        assert!(TerrainSpec::from_json(r#"{"kind":"volcano"}"#).is_err());
    }

    #[test]
    fn every_terrain_kind_round_trips() {
        let walls = SideWalls { height: 1.0, gap: 0.3, thickness: 0.1 };
        for spec in [
            TerrainSpec::flat(),
            TerrainSpec::flat().with_side_walls(walls.clone()),
            TerrainSpec::stairs(StairsParams::default()),
            TerrainSpec::hurdles(HurdleParams::default()).with_side_walls(walls.clone()),
        ] {
            let text = serde_json::to_string(&spec).unwrap();
            assert_eq!(TerrainSpec::from_json(&text).unwrap(), spec, "{text}");
        }
        let flat = TerrainSpec::from_json(r#"{"kind":"flat","lane_width":3.0}"#).unwrap();
        assert_eq!(flat.kind, TerrainKind::Flat(FlatParams { lane_width: 3.0 }));
    }

    #[test]
    fn looking_down_at_ground() {
        let scene = build_terrain(&TerrainSpec::flat()).unwrap();
        let k = cam(64, 48);
        let pose = Pose::from_euler(Vector3::new(0.0, 0.0, 1.0), 0.0, std::f64::consts::FRAC_PI_2, 0.0);
        let (d, l) = raycast(&scene, &k, &pose, 0.1, 10.0).unwrap();
        // pixel (32, 24) straddles the principal point; its center is half a
        // pixel off-axis, which does not change z-depth on a fronto-parallel plane
        assert_abs_diff_eq!(d.get(32, 24), 1.0, epsilon = 1e-6);
        assert_eq!(l.labels[d.index(32, 24)], 1);
    }

    #[test]
    fn fronto_parallel_wall_has_constant_z() {
        let scene = SceneGeometry { boxes: vec![Aabb::new([3.0, -50.0, -50.0], [4.0, 50.0, 50.0], 7)], labels: vec![7] };
        let k = cam(40, 30);
        let (d, l) = raycast(&scene, &k, &Pose::from_euler(Vector3::zeros(), 0.0, 0.0, 0.0), 0.1, 10.0).unwrap();
        assert!(d.z.iter().all(|&z| z == 3.0));
        assert!(l.labels.iter().all(|&x| x == 7));
    }

    #[test]
    fn empty_scene_is_all_sentinel() {
        let k = cam(16, 8);
        let (d, l) = raycast(&SceneGeometry::empty(), &k, &Pose::identity(), 0.1, 5.0).unwrap();
        assert!(d.z.iter().all(|&z| z == 5.0));
        assert!(l.labels.iter().all(|&x| x == NO_HIT));
        assert!(raycast(&SceneGeometry::empty(), &k, &Pose::identity(), 5.0, 1.0).is_err());
    }

    #[test]
    fn no_hit_depth_tracks_far() {
        let scene = build_terrain(&TerrainSpec::flat()).unwrap();
        let k = cam(32, 24);
        let pose = Pose::from_euler(Vector3::new(0.0, 0.0, 0.5), 0.0, 0.0, 0.0);
        let (a, _) = raycast(&scene, &k, &pose, 0.1, 5.0).unwrap();
        let (b, lb) = raycast(&scene, &k, &pose, 0.1, 8.0).unwrap();
        for i in 0..a.z.len() {
            if lb.labels[i] == NO_HIT {
                assert!(b.z[i] >= a.z[i]);
                assert_eq!(b.z[i], 8.0);
            }
        }
    }

    #[test]
    fn mask_partition() {
        let labels = LabelImage { width: 3, height: 2, labels: vec![0, 1, 2, 2, 1, 0] };
        let masks = binary_masks(&labels);
        assert_eq!(masks.iter().map(|m| m.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        for p in 0..6 {
            assert_eq!(masks.iter().filter(|(_, m)| m.bits[p]).count(), 1);
        }
        let uniform = LabelImage { width: 2, height: 2, labels: vec![4; 4] };
        let m = binary_masks(&uniform);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].1.count(), 4);
    }

    #[test]
    fn mask_pack_round_trip() {
        let m = Mask { width: 5, height: 3, bits: (0..15).map(|i| i % 3 == 0).collect() };
        assert_eq!(Mask::unpack(5, 3, &m.pack()).unwrap(), m);
        assert!(Mask::unpack(5, 3, &[0]).is_none());
    }
}
