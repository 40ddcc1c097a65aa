//! Procedural articulated scenes and the kinematic interaction oracle.
//!
//! A scene is a cabinet built from static boxes with one movable part (a door
//! or a drawer) seated in a frame opening, standing on a floor in front of a
//! back wall. The joint coordinate `q` runs from `0` (fully open) to the
//! joint range (closed); pushing moves the part toward closed and pulling
//! toward open.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{unproject_pixel, CameraPose, Intrinsics};
use crate::error::{Error, Result};
use crate::geom::{approach_of, frame_from_approach, rotate_about, rotation_about, Mat3, OrientedBox, Vec3};
use crate::raster::AffordanceMap;
use crate::render::{render, PartId, RenderOutput};

/// Points closer than this to a box surface count as lying on it.
pub const SURFACE_TOL: f64 = 2e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Push,
    Pull,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::Push => "push",
            Primitive::Pull => "pull",
        }
    }
}

impl std::str::FromStr for Primitive {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "push" => Ok(Primitive::Push),
            "pull" => Ok(Primitive::Pull),
            other => Err(Error::Config(format!("unknown primitive `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.min + (self.max - self.min) * rng.random::<f64>()
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Config(format!(
                "range `{name}` needs min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PartKind {
    /// Hinge; `axis_dir` is oriented so that increasing `q` closes the part.
    Revolute {
        axis_point: Vec3,
        axis_dir: Vec3,
        range: f64,
    },
    /// Slide; `slide_dir` is the closing (push) direction.
    Prismatic { slide_dir: Vec3, range: f64 },
}

impl PartKind {
    pub fn range(&self) -> f64 {
        match self {
            PartKind::Revolute { range, .. } | PartKind::Prismatic { range, .. } => *range,
        }
    }

    pub fn is_revolute(&self) -> bool {
        matches!(self, PartKind::Revolute { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub shape: OrientedBox,
    pub albedo: [f64; 3],
}

/// Rectangle on the part's outer face (local `+x`), in local `(y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandleRegion {
    pub y: [f64; 2],
    pub z: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    /// Geometry at `q = 0` (fully open).
    pub reference: OrientedBox,
    pub kind: PartKind,
    pub q: f64,
    pub albedo: [f64; 3],
    pub handle: HandleRegion,
    pub handle_albedo: [f64; 3],
}

impl Part {
    pub fn box_at(&self, q: f64) -> OrientedBox {
        match &self.kind {
            PartKind::Prismatic { slide_dir, .. } => OrientedBox {
                center: self.reference.center + slide_dir * q,
                ..self.reference.clone()
            },
            PartKind::Revolute {
                axis_point, axis_dir, ..
            } => OrientedBox {
                center: rotate_about(&self.reference.center, axis_point, axis_dir, q),
                half_extents: self.reference.half_extents,
                rotation: rotation_about(axis_dir, q) * self.reference.rotation,
            },
        }
    }

    pub fn current_box(&self) -> OrientedBox {
        self.box_at(self.q)
    }

    /// Whether a point on the part surface lies inside the handle rectangle.
    pub fn on_handle(&self, p: &Vec3) -> bool {
        let b = self.current_box();
        let l = b.to_local(p);
        (l.x - b.half_extents.x).abs() <= SURFACE_TOL
            && l.y >= self.handle.y[0]
            && l.y <= self.handle.y[1]
            && l.z >= self.handle.z[0]
            && l.z <= self.handle.z[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub static_boxes: Vec<Body>,
    pub part: Part,
    /// Center of the cabinet front; global cameras aim near it.
    pub focus: Vec3,
    pub far_plane: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceBody {
    Static(usize),
    Part,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceContact {
    pub body: SurfaceBody,
    pub distance: f64,
}

/// Parameters of the interaction oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub stroke: f64,
    /// Success threshold on `delta_dis`.
    pub delta: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            stroke: 0.05,
            delta: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub delta_dis: f64,
}

impl Outcome {
    const NONE: Outcome = Outcome {
        success: false,
        delta_dis: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub scene_seed: u64,
    pub primitive: Primitive,
    pub pixel: (usize, usize),
    pub contact_point: Vec3,
    pub orientation: Mat3,
    pub success: bool,
    pub delta_dis: f64,
}

impl Scene {
    pub fn bodies(&self) -> impl Iterator<Item = (SurfaceBody, OrientedBox)> + '_ {
        self.static_boxes
            .iter()
            .enumerate()
            .map(|(i, b)| (SurfaceBody::Static(i), b.shape.clone()))
            .chain(std::iter::once((SurfaceBody::Part, self.part.current_box())))
    }

    /// Minimum signed distance to any body.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.bodies()
            .map(|(_, b)| b.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Body whose surface is nearest to `p`, if within [`SURFACE_TOL`]. The
    /// part wins exact ties with static geometry.
    pub fn classify(&self, p: &Vec3) -> Option<SurfaceContact> {
        let part_d = self.part.current_box().signed_distance(p).abs();
        let mut best = SurfaceContact {
            body: SurfaceBody::Part,
            distance: part_d,
        };
        for (i, b) in self.static_boxes.iter().enumerate() {
            let d = b.shape.signed_distance(p).abs();
            if d < best.distance {
                best = SurfaceContact {
                    body: SurfaceBody::Static(i),
                    distance: d,
                };
            }
        }
        (best.distance <= SURFACE_TOL).then_some(best)
    }

    /// Nearest surface point of the body closest to `p`.
    pub fn snap_to_surface(&self, p: &Vec3) -> Vec3 {
        self.bodies()
            .map(|(_, b)| {
                let s = b.closest_surface_point(p);
                ((s - p).norm(), s)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, s)| s)
            .unwrap_or(*p)
    }

    /// Distance from a point to the revolute axis; `None` for prismatic parts.
    pub fn lever_arm(&self, p: &Vec3) -> Option<f64> {
        match &self.part.kind {
            PartKind::Revolute {
                axis_point, axis_dir, ..
            } => Some(axis_dir.cross(&(p - axis_point)).norm()),
            PartKind::Prismatic { .. } => None,
        }
    }

    /// Joint travel left for a primitive, in linear units at `p`.
    pub fn remaining_travel(&self, primitive: Primitive, p: &Vec3) -> f64 {
        let range = self.part.kind.range();
        let joint_left = match primitive {
            Primitive::Push => range - self.part.q,
            Primitive::Pull => self.part.q,
        }
        .max(0.0);
        joint_left * self.lever_arm(p).unwrap_or(1.0)
    }

    /// New scene after moving the contact `p` by `delta_dis` under `primitive`,
    /// together with the moved contact point.
    pub fn apply_displacement(&self, primitive: Primitive, p: &Vec3, delta_dis: f64) -> (Scene, Vec3) {
        let sign = match primitive {
            Primitive::Push => 1.0,
            Primitive::Pull => -1.0,
        };
        let range = self.part.kind.range();
        let dq = match self.lever_arm(p) {
            Some(r) if r > 1e-9 => delta_dis / r,
            Some(_) => 0.0,
            None => delta_dis,
        };
        let q_new = (self.part.q + sign * dq).clamp(0.0, range);
        let applied = q_new - self.part.q;
        let moved = match &self.part.kind {
            PartKind::Prismatic { slide_dir, .. } => p + slide_dir * applied,
            PartKind::Revolute {
                axis_point, axis_dir, ..
            } => rotate_about(p, axis_point, axis_dir, applied),
        };
        let mut next = self.clone();
        next.part.q = q_new;
        (next, moved)
    }

    pub fn with_joint(&self, q: f64) -> Scene {
        let mut next = self.clone();
        next.part.q = q.clamp(0.0, self.part.kind.range());
        next
    }

    pub fn max_extent(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (_, b) in self.bodies() {
            for c in b.corners() {
                m = m.max(c.norm());
            }
        }
        for q in [0.0, self.part.kind.range()] {
            for c in self.part.box_at(q).corners() {
                m = m.max(c.norm());
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        match &self.part.kind {
            PartKind::Revolute { axis_dir, range, .. } => {
                if (axis_dir.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::Geometry("revolute axis is not unit length".into()));
                }
                if !(*range > 0.0) {
                    return Err(Error::Geometry("joint range must be positive".into()));
                }
            }
            PartKind::Prismatic { slide_dir, range } => {
                if (slide_dir.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::Geometry("slide direction is not unit length".into()));
                }
                if !(*range > 0.0) {
                    return Err(Error::Geometry("joint range must be positive".into()));
                }
            }
        }
        let range = self.part.kind.range();
        if !(self.part.q >= 0.0 && self.part.q <= range) {
            return Err(Error::Geometry(format!(
                "joint value {} outside [0, {range}]",
                self.part.q
            )));
        }
        let all_finite = self
            .bodies()
            .all(|(_, b)| b.center.iter().chain(b.half_extents.iter()).all(|v| v.is_finite()))
            && self.far_plane.is_finite();
        if !all_finite {
            return Err(Error::Geometry("non-finite scene geometry".into()));
        }
        let open = self.part.box_at(0.0);
        if self.static_boxes.iter().any(|b| b.shape.overlaps(&open, 1e-6)) {
            return Err(Error::Geometry("part intersects static geometry at q = 0".into()));
        }
        if !(self.far_plane > self.max_extent()) {
            return Err(Error::Geometry("far plane does not bound the scene".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Scene> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Unit direction in which the part surface at `point` moves under a push.
pub fn part_motion_dir(scene: &Scene, point: &Vec3) -> Result<Vec3> {
    match scene.classify(point) {
        Some(SurfaceContact {
            body: SurfaceBody::Part,
            ..
        }) => {}
        Some(_) => return Err(Error::NoMotion("point lies on static geometry".into())),
        None => return Err(Error::NoMotion("point is not on the part surface".into())),
    }
    match &scene.part.kind {
        PartKind::Prismatic { slide_dir, .. } => Ok(*slide_dir),
        PartKind::Revolute {
            axis_point, axis_dir, ..
        } => {
            let v = axis_dir.cross(&(point - axis_point));
            let n = v.norm();
            if n < 1e-6 {
                return Err(Error::NoMotion("point lies on the hinge axis".into()));
            }
            Ok(v / n)
        }
    }
}

/// Kinematic oracle: `delta_dis = stroke * max(0, d·m)`, capped by the joint
/// travel left, where `d` is the approach direction of `orientation` and `m`
/// the part motion direction. Pulls only move the part when the contact is on
/// the handle.
pub fn interact(
    scene: &Scene,
    primitive: Primitive,
    contact_point: &Vec3,
    orientation: &Mat3,
    oracle: &OracleParams,
) -> Result<Outcome> {
    let contact = scene.classify(contact_point).ok_or_else(|| {
        Error::Geometry(format!(
            "contact point ({:.4}, {:.4}, {:.4}) is not on any surface",
            contact_point.x, contact_point.y, contact_point.z
        ))
    })?;
    if contact.body != SurfaceBody::Part {
        return Ok(Outcome::NONE);
    }
    let m = match part_motion_dir(scene, contact_point) {
        Ok(m) => m,
        Err(Error::NoMotion(_)) => return Ok(Outcome::NONE),
        Err(e) => return Err(e),
    };
    if primitive == Primitive::Pull && !scene.part.on_handle(contact_point) {
        return Ok(Outcome::NONE);
    }
    let d = approach_of(orientation);
    // A pull retracts along -d and drags the part along -m, so both
    // primitives share the same alignment term.
    let raw = oracle.stroke * d.dot(&m).max(0.0);
    let delta_dis = raw.min(scene.remaining_travel(primitive, contact_point));
    Ok(Outcome {
        success: delta_dis > oracle.delta,
        delta_dis,
    })
}

/// Dense oracle affordance for a view: 1 where interacting at the pixel's
/// surface point with the approach aligned to the motion direction succeeds.
pub fn gt_affordance(
    scene: &Scene,
    pose: &CameraPose,
    intr: &Intrinsics,
    primitive: Primitive,
    oracle: &OracleParams,
) -> AffordanceMap {
    let rendered = render(scene, pose, intr);
    gt_affordance_from_render(scene, &rendered, pose, intr, primitive, oracle)
}

pub fn gt_affordance_from_render(
    scene: &Scene,
    rendered: &RenderOutput,
    pose: &CameraPose,
    intr: &Intrinsics,
    primitive: Primitive,
    oracle: &OracleParams,
) -> AffordanceMap {
    let mut out = AffordanceMap::zeros(intr.width, intr.height);
    for row in 0..intr.height {
        for col in 0..intr.width {
            let i = row * intr.width + col;
            if rendered.part_id[i] != PartId::Part {
                continue;
            }
            let Some(depth) = rendered.gt_depth.get(row, col) else {
                continue;
            };
            let Ok(p) = unproject_pixel(row, col, depth, pose, intr) else {
                continue;
            };
            let Ok(m) = part_motion_dir(scene, &p) else {
                continue;
            };
            let orientation = frame_from_approach(&m);
            if let Ok(o) = interact(scene, primitive, &p, &orientation, oracle) {
                if o.success {
                    out.values[i] = 1.0;
                }
            }
        }
    }
    out
}

/// Bounds for procedural scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub cabinet_half_width: Range,
    pub cabinet_half_height: Range,
    pub cabinet_half_depth: Range,
    pub opening_width_frac: Range,
    pub opening_height_frac: Range,
    /// Minimum frame border around the opening.
    pub frame_margin: f64,
    pub cavity_frac: Range,
    pub door_thickness: f64,
    pub door_range: Range,
    pub drawer_range: Range,
    /// Fraction of the joint range the part starts open.
    pub open_frac: Range,
    pub handle_long_frac: Range,
    pub handle_short_frac: Range,
    pub revolute_prob: f64,
    pub top_box_prob: f64,
    pub cabinet_albedo: Range,
    pub part_tint: Range,
    pub handle_albedo: Range,
    pub floor_albedo: Range,
    pub wall_albedo: Range,
    pub room: bool,
    pub far_plane: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            cabinet_half_width: Range::new(0.7, 1.1),
            cabinet_half_height: Range::new(0.6, 1.0),
            cabinet_half_depth: Range::new(0.4, 0.6),
            opening_width_frac: Range::new(0.55, 0.85),
            opening_height_frac: Range::new(0.55, 0.85),
            frame_margin: 0.06,
            cavity_frac: Range::new(0.7, 0.9),
            door_thickness: 0.05,
            door_range: Range::new(0.9, 1.4),
            drawer_range: Range::new(0.45, 0.7),
            open_frac: Range::new(0.35, 0.65),
            handle_long_frac: Range::new(0.3, 0.45),
            handle_short_frac: Range::new(0.12, 0.2),
            revolute_prob: 0.5,
            top_box_prob: 0.5,
            cabinet_albedo: Range::new(0.25, 0.9),
            part_tint: Range::new(0.75, 1.25),
            handle_albedo: Range::new(0.02, 0.15),
            floor_albedo: Range::new(0.3, 0.5),
            wall_albedo: Range::new(0.55, 0.75),
            room: true,
            far_plane: 16.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("cabinet_half_width", self.cabinet_half_width),
            ("cabinet_half_height", self.cabinet_half_height),
            ("cabinet_half_depth", self.cabinet_half_depth),
            ("opening_width_frac", self.opening_width_frac),
            ("opening_height_frac", self.opening_height_frac),
            ("cavity_frac", self.cavity_frac),
            ("door_range", self.door_range),
            ("drawer_range", self.drawer_range),
            ("open_frac", self.open_frac),
            ("handle_long_frac", self.handle_long_frac),
            ("handle_short_frac", self.handle_short_frac),
            ("cabinet_albedo", self.cabinet_albedo),
            ("part_tint", self.part_tint),
            ("handle_albedo", self.handle_albedo),
            ("floor_albedo", self.floor_albedo),
            ("wall_albedo", self.wall_albedo),
        ];
        for (name, r) in ranges {
            r.validate(name)?;
        }
        let positive = [
            ("cabinet_half_width", self.cabinet_half_width.min),
            ("cabinet_half_height", self.cabinet_half_height.min),
            ("cabinet_half_depth", self.cabinet_half_depth.min),
            ("opening_width_frac", self.opening_width_frac.min),
            ("opening_height_frac", self.opening_height_frac.min),
            ("cavity_frac", self.cavity_frac.min),
            ("door_range", self.door_range.min),
            ("drawer_range", self.drawer_range.min),
            ("open_frac", self.open_frac.min),
            ("handle_long_frac", self.handle_long_frac.min),
            ("handle_short_frac", self.handle_short_frac.min),
            ("door_thickness", self.door_thickness),
            ("frame_margin", self.frame_margin),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        let fracs = [
            ("opening_width_frac", self.opening_width_frac),
            ("opening_height_frac", self.opening_height_frac),
            ("cavity_frac", self.cavity_frac),
            ("open_frac", self.open_frac),
            ("handle_long_frac", self.handle_long_frac),
            ("handle_short_frac", self.handle_short_frac),
        ];
        for (name, r) in fracs {
            if r.max > 1.0 {
                return Err(Error::Config(format!("`{name}` is a fraction and must not exceed 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.revolute_prob) || !(0.0..=1.0).contains(&self.top_box_prob) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.cabinet_half_width.min <= self.frame_margin || self.cabinet_half_height.min <= self.frame_margin {
            return Err(Error::Config("frame margin leaves no room for an opening".into()));
        }
        if !(self.far_plane > 0.0) {
            return Err(Error::Config("far plane must be positive".into()));
        }
        Ok(())
    }
}

fn sample_albedo<R: Rng + ?Sized>(rng: &mut R, r: &Range) -> [f64; 3] {
    [r.sample(rng), r.sample(rng), r.sample(rng)]
}

/// Deterministic scene from a seed and generation bounds.
pub fn generate_scene(seed: u64, cfg: &GenConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hy = cfg.cabinet_half_width.sample(&mut rng);
    let hz = cfg.cabinet_half_height.sample(&mut rng);
    let dx = cfg.cabinet_half_depth.sample(&mut rng);
    let margin = cfg.frame_margin;

    // Opening on the front face x = dx.
    let ow = cfg.opening_width_frac.sample(&mut rng) * (2.0 * hy - 2.0 * margin);
    let oh = cfg.opening_height_frac.sample(&mut rng) * (2.0 * hz - 2.0 * margin);
    let oy0 = -hy + margin + rng.random::<f64>() * (2.0 * hy - 2.0 * margin - ow);
    let oz0 = margin + rng.random::<f64>() * (2.0 * hz - 2.0 * margin - oh);
    let (oy1, oz1) = (oy0 + ow, oz0 + oh);
    let cavity = cfg.cavity_frac.sample(&mut rng) * 2.0 * dx;
    let xb = dx - cavity;

    let cab = sample_albedo(&mut rng, &cfg.cabinet_albedo);
    let aabb = |min: Vec3, max: Vec3, albedo: [f64; 3]| Body {
        shape: OrientedBox::axis_aligned(min, max),
        albedo,
    };
    let mut static_boxes = Vec::new();
    if cfg.room {
        let floor = sample_albedo(&mut rng, &cfg.floor_albedo);
        let wall = sample_albedo(&mut rng, &cfg.wall_albedo);
        let wall_x = -dx - 0.5;
        static_boxes.push(aabb(Vec3::new(wall_x, -10.0, -0.1), Vec3::new(10.0, 10.0, 0.0), floor));
        static_boxes.push(aabb(
            Vec3::new(wall_x - 0.1, -10.0, 0.0),
            Vec3::new(wall_x, 10.0, 7.0),
            wall,
        ));
    }
    static_boxes.push(aabb(Vec3::new(-dx, -hy, 0.0), Vec3::new(xb, hy, 2.0 * hz), cab));
    static_boxes.push(aabb(Vec3::new(xb, -hy, 0.0), Vec3::new(dx, oy0, 2.0 * hz), cab));
    static_boxes.push(aabb(Vec3::new(xb, oy1, 0.0), Vec3::new(dx, hy, 2.0 * hz), cab));
    static_boxes.push(aabb(Vec3::new(xb, oy0, 0.0), Vec3::new(dx, oy1, oz0), cab));
    static_boxes.push(aabb(Vec3::new(xb, oy0, oz1), Vec3::new(dx, oy1, 2.0 * hz), cab));
    if rng.random::<f64>() < cfg.top_box_prob {
        let sy = hy * (0.2 + 0.3 * rng.random::<f64>());
        let sx = dx * (0.3 + 0.4 * rng.random::<f64>());
        let sz = 0.1 + 0.3 * rng.random::<f64>();
        let cy = (hy - sy) * (2.0 * rng.random::<f64>() - 1.0);
        let cx = (dx - sx) * (2.0 * rng.random::<f64>() - 1.0);
        let albedo = sample_albedo(&mut rng, &cfg.cabinet_albedo);
        static_boxes.push(aabb(
            Vec3::new(cx - sx, cy - sy, 2.0 * hz),
            Vec3::new(cx + sx, cy + sy, 2.0 * hz + 2.0 * sz),
            albedo,
        ));
    }

    let revolute = rng.random::<f64>() < cfg.revolute_prob;
    let tint = [
        cfg.part_tint.sample(&mut rng),
        cfg.part_tint.sample(&mut rng),
        cfg.part_tint.sample(&mut rng),
    ];
    let part_albedo = [
        (cab[0] * tint[0]).clamp(0.0, 1.0),
        (cab[1] * tint[1]).clamp(0.0, 1.0),
        (cab[2] * tint[2]).clamp(0.0, 1.0),
    ];
    let handle_albedo = sample_albedo(&mut rng, &cfg.handle_albedo);
    let open_frac = cfg.open_frac.sample(&mut rng);
    let long = cfg.handle_long_frac.sample(&mut rng);
    let short = cfg.handle_short_frac.sample(&mut rng);
    let (wy, wz) = (ow / 2.0, oh / 2.0);

    let (reference, kind, q, handle) = if revolute {
        let t = cfg.door_thickness.min(cavity * 0.5);
        let closed = OrientedBox::axis_aligned(Vec3::new(dx - t, oy0, oz0), Vec3::new(dx, oy1, oz1));
        let hinge_left = rng.random::<bool>();
        let (axis_point, axis_dir) = if hinge_left {
            (Vec3::new(dx, oy0, 0.0), Vec3::z())
        } else {
            (Vec3::new(dx, oy1, 0.0), -Vec3::z())
        };
        let range = cfg.door_range.sample(&mut rng);
        let reference = OrientedBox {
            center: rotate_about(&closed.center, &axis_point, &axis_dir, -range),
            half_extents: closed.half_extents,
            rotation: rotation_about(&axis_dir, -range),
        };
        // Vertical bar near the free edge.
        let hw = short * 2.0 * wy;
        let hh = long * 2.0 * wz;
        let edge_gap = 0.1 * wy;
        let y = if hinge_left {
            [wy - edge_gap - hw, wy - edge_gap]
        } else {
            [-wy + edge_gap, -wy + edge_gap + hw]
        };
        let zc = (wz - hh / 2.0) * (rng.random::<f64>() - 0.5);
        let handle = HandleRegion {
            y,
            z: [zc - hh / 2.0, zc + hh / 2.0],
        };
        (
            reference,
            PartKind::Revolute {
                axis_point,
                axis_dir,
                range,
            },
            range * (1.0 - open_frac),
            handle,
        )
    } else {
        let closed = OrientedBox::axis_aligned(Vec3::new(xb, oy0, oz0), Vec3::new(dx, oy1, oz1));
        let range = cfg.drawer_range.sample(&mut rng).min(0.95 * cavity);
        let slide_dir = -Vec3::x();
        let reference = OrientedBox {
            center: closed.center - slide_dir * range,
            ..closed
        };
        // Horizontal bar in the upper half.
        let hw = long * 2.0 * wy;
        let hh = short * 2.0 * wz;
        let zc = (wz - hh / 2.0) * (0.2 + 0.6 * rng.random::<f64>());
        let handle = HandleRegion {
            y: [-hw / 2.0, hw / 2.0],
            z: [zc - hh / 2.0, zc + hh / 2.0],
        };
        (
            reference,
            PartKind::Prismatic { slide_dir, range },
            range * (1.0 - open_frac),
            handle,
        )
    };

    let scene = Scene {
        seed,
        static_boxes,
        part: Part {
            reference,
            kind,
            q,
            albedo: part_albedo,
            handle,
            handle_albedo,
        },
        focus: Vec3::new(dx, 0.0, hz),
        far_plane: cfg.far_plane,
    };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::make_lookat;

    fn cfg() -> GenConfig {
        GenConfig::default()
    }

    fn find_kind(revolute: bool) -> Scene {
        (0..100)
            .map(|s| generate_scene(s, &cfg()).unwrap())
            .find(|s| s.part.kind.is_revolute() == revolute)
            .unwrap()
    }

    /// A point on the centre of the part's outer face.
    fn outer_face_center(scene: &Scene) -> Vec3 {
        let b = scene.part.current_box();
        b.to_world(&Vec3::new(b.half_extents.x, 0.0, 0.0))
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(7, &cfg()).unwrap();
        let b = generate_scene(7, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate_scene(8, &cfg()).unwrap();
        assert_ne!(a.part.reference, c.part.reference);
    }

    #[test]
    fn revolute_fraction_is_balanced() {
        let revolute = (0..1000)
            .filter(|&s| generate_scene(s, &cfg()).unwrap().part.kind.is_revolute())
            .count();
        let frac = revolute as f64 / 1000.0;
        assert!((0.4..=0.6).contains(&frac), "revolute fraction {frac}");
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        let mut c = cfg();
        c.door_range = Range::new(1.0, 1.0);
        assert!(matches!(generate_scene(1, &c), Err(Error::Config(_))));
        let mut c = cfg();
        c.cabinet_half_depth = Range::new(0.6, 0.4);
        assert!(matches!(generate_scene(1, &c), Err(Error::Config(_))));
    }

    #[test]
    fn scenes_satisfy_invariants() {
        for seed in 0..200 {
            let s = generate_scene(seed, &cfg()).unwrap();
            s.validate().unwrap();
            // Handle rectangle lies on the outer face.
            let h = s.part.reference.half_extents;
            assert!(s.part.handle.y[0] >= -h.y - 1e-12 && s.part.handle.y[1] <= h.y + 1e-12);
            assert!(s.part.handle.z[0] >= -h.z - 1e-12 && s.part.handle.z[1] <= h.z + 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let s = generate_scene(3, &cfg()).unwrap();
        let back = Scene::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn prismatic_motion_is_constant() {
        let s = find_kind(false);
        let p = outer_face_center(&s);
        assert_eq!(part_motion_dir(&s, &p).unwrap(), -Vec3::x());
        let corner = s.part.current_box().corners()[7];
        assert_eq!(part_motion_dir(&s, &corner).unwrap(), -Vec3::x());
    }

    #[test]
    fn revolute_motion_is_tangential() {
        let mut s = find_kind(true);
        s.part.kind = PartKind::Revolute {
            axis_point: Vec3::zeros(),
            axis_dir: Vec3::z(),
            range: 1.0,
        };
        s.part.reference = OrientedBox::axis_aligned(Vec3::new(0.0, -0.5, -0.5), Vec3::new(1.0, 0.5, 0.5));
        s.part.q = 0.0;
        let m = part_motion_dir(&s, &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((m - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        // On the axis itself the motion field is singular.
        assert!(matches!(
            part_motion_dir(&s, &Vec3::new(0.0, 0.0, 0.0)),
            Err(Error::NoMotion(_))
        ));
    }

    #[test]
    fn motion_on_static_geometry_is_an_error() {
        let s = find_kind(false);
        let back = &s.static_boxes[2].shape;
        let p = back.to_world(&Vec3::new(0.0, 0.0, back.half_extents.z));
        assert!(matches!(part_motion_dir(&s, &p), Err(Error::NoMotion(_))));
    }

    #[test]
    fn push_on_static_box_moves_nothing() {
        let s = find_kind(false);
        let top = &s.static_boxes[2].shape;
        let p = top.to_world(&Vec3::new(0.0, 0.0, top.half_extents.z));
        let o = interact(
            &s,
            Primitive::Push,
            &p,
            &frame_from_approach(&-Vec3::z()),
            &OracleParams::default(),
        )
        .unwrap();
        assert_eq!(o, Outcome::NONE);
    }

    #[test]
    fn push_perpendicular_to_motion_moves_nothing() {
        let s = find_kind(false);
        let p = outer_face_center(&s);
        let o = interact(
            &s,
            Primitive::Push,
            &p,
            &frame_from_approach(&Vec3::y()),
            &OracleParams::default(),
        )
        .unwrap();
        assert_eq!(o, Outcome::NONE);
    }

    #[test]
    fn aligned_push_moves_a_full_stroke() {
        let s = find_kind(false);
        let p = outer_face_center(&s);
        let o = interact(
            &s,
            Primitive::Push,
            &p,
            &frame_from_approach(&-Vec3::x()),
            &OracleParams::default(),
        )
        .unwrap();
        assert!(o.success);
        assert_eq!(o.delta_dis, 0.05);
    }

    #[test]
    fn off_surface_contact_is_a_geometry_error() {
        let s = find_kind(false);
        let p = outer_face_center(&s) + Vec3::x() * 0.3;
        let r = interact(&s, Primitive::Push, &p, &Mat3::identity(), &OracleParams::default());
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn pull_is_gated_to_the_handle() {
        let s = find_kind(false);
        let b = s.part.current_box();
        let hy = 0.5 * (s.part.handle.y[0] + s.part.handle.y[1]);
        let hz = 0.5 * (s.part.handle.z[0] + s.part.handle.z[1]);
        let on = b.to_world(&Vec3::new(b.half_extents.x, hy, hz));
        let off = b.to_world(&Vec3::new(b.half_extents.x, hy, -b.half_extents.z * 0.95));
        let orient = frame_from_approach(&-Vec3::x());
        let oracle = OracleParams::default();
        assert!(interact(&s, Primitive::Pull, &on, &orient, &oracle).unwrap().success);
        assert_eq!(
            interact(&s, Primitive::Pull, &off, &orient, &oracle).unwrap(),
            Outcome::NONE
        );
        assert!(interact(&s, Primitive::Push, &off, &orient, &oracle).unwrap().success);
    }

    #[test]
    fn joint_limits_cap_displacement() {
        let s = find_kind(false);
        let range = s.part.kind.range();
        let nearly_closed = s.with_joint(range - 0.02);
        let b = nearly_closed.part.current_box();
        let p = b.to_world(&Vec3::new(b.half_extents.x, 0.0, 0.0));
        let o = interact(
            &nearly_closed,
            Primitive::Push,
            &p,
            &frame_from_approach(&-Vec3::x()),
            &OracleParams::default(),
        )
        .unwrap();
        assert!((o.delta_dis - 0.02).abs() < 1e-12);
        let (next, moved) = nearly_closed.apply_displacement(Primitive::Push, &p, o.delta_dis);
        assert!((next.part.q - range).abs() < 1e-12);
        assert!(next.classify(&moved).is_some());
    }

    #[test]
    fn scaling_stroke_with_scene_preserves_labels() {
        let s = find_kind(false);
        let p = outer_face_center(&s);
        let mut orient_rng = ChaCha8Rng::seed_from_u64(5);
        let k = 2.0;
        let mut scaled = s.clone();
        for b in &mut scaled.static_boxes {
            b.shape.center *= k;
            b.shape.half_extents *= k;
        }
        scaled.part.reference.center *= k;
        scaled.part.reference.half_extents *= k;
        if let PartKind::Prismatic { range, .. } = &mut scaled.part.kind {
            *range *= k;
        }
        scaled.part.q *= k;
        scaled.far_plane *= k;
        let base = OracleParams::default();
        let big = OracleParams {
            stroke: base.stroke * k,
            delta: base.delta * k,
        };
        for _ in 0..100 {
            let d = -crate::geom::sample_hemisphere(&mut orient_rng, &Vec3::x());
            let o = frame_from_approach(&d);
            let a = interact(&s, Primitive::Push, &p, &o, &base).unwrap();
            let b = interact(&scaled, Primitive::Push, &(p * k), &o, &big).unwrap();
            assert_eq!(a.success, b.success);
            assert!((b.delta_dis - k * a.delta_dis).abs() < 1e-12);
        }
    }

    #[test]
    fn gt_affordance_push_dominates_pull() {
        let intr = Intrinsics::from_fov(64, 64, 50.0, 16.0).unwrap();
        for seed in 0..6 {
            let s = generate_scene(seed, &cfg()).unwrap();
            let pose = make_lookat(Vec3::new(5.0, 0.8, 1.5), Vec3::new(0.0, 0.0, 0.8), Vec3::z()).unwrap();
            let r = render(&s, &pose, &intr);
            let push = gt_affordance_from_render(&s, &r, &pose, &intr, Primitive::Push, &OracleParams::default());
            let pull = gt_affordance_from_render(&s, &r, &pose, &intr, Primitive::Pull, &OracleParams::default());
            for i in 0..push.values.len() {
                assert!(push.values[i] >= pull.values[i]);
                if r.part_id[i] != PartId::Part {
                    assert_eq!(push.values[i], 0.0);
                }
            }
        }
    }
}
