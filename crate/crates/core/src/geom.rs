//! Small geometry kernel: oriented boxes, ray casts, signed distances and
//! rotation helpers shared by the renderer, the oracle and the controller.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// World up axis. Scenes stand on the `z = 0` floor.
pub fn world_up() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    pub half_extents: Vec3,
    /// Box-to-world rotation; column `i` is the world direction of local axis `i`.
    pub rotation: Mat3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub normal: Vec3,
}

impl OrientedBox {
    pub fn axis_aligned(min: Vec3, max: Vec3) -> Self {
        Self {
            center: (min + max) * 0.5,
            half_extents: (max - min) * 0.5,
            rotation: Mat3::identity(),
        }
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.center)
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.rotation * local + self.center
    }

    /// Nearest entering intersection with `t > t_min`. Rays starting inside
    /// the box report no hit.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<RayHit> {
        let o = self.to_local(origin);
        let d = self.rotation.transpose() * dir;
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut near_axis = 0usize;
        for axis in 0..3 {
            let h = self.half_extents[axis];
            if d[axis].abs() < 1e-15 {
                if o[axis] < -h || o[axis] > h {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[axis];
            let mut t0 = (-h - o[axis]) * inv;
            let mut t1 = (h - o[axis]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_near {
                t_near = t0;
                near_axis = axis;
            }
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if !t_near.is_finite() || t_near <= t_min {
            return None;
        }
        let mut local_n = Vec3::zeros();
        local_n[near_axis] = -d[near_axis].signum();
        Some(RayHit {
            t: t_near,
            normal: self.rotation * local_n,
        })
    }

    /// Signed Euclidean distance: negative inside, zero on the surface.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let q = self.to_local(p).abs() - self.half_extents;
        let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        (0..3).all(|i| l[i].abs() <= self.half_extents[i])
    }

    /// Closest point on the box surface (not the solid) to `p`.
    pub fn closest_surface_point(&self, p: &Vec3) -> Vec3 {
        let l = self.to_local(p);
        let h = self.half_extents;
        let mut c = Vec3::new(l.x.clamp(-h.x, h.x), l.y.clamp(-h.y, h.y), l.z.clamp(-h.z, h.z));
        if self.contains(p) {
            // Push out through the nearest face.
            let gaps = [h.x - l.x.abs(), h.y - l.y.abs(), h.z - l.z.abs()];
            let axis = (0..3).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap_or(0);
            c[axis] = if l[axis] >= 0.0 { h[axis] } else { -h[axis] };
        }
        self.to_world(&c)
    }

    /// Outward normal of the face nearest to a point on (or near) the surface.
    pub fn surface_normal(&self, p: &Vec3) -> Vec3 {
        let l = self.to_local(p);
        let h = self.half_extents;
        let gaps = [
            (h.x - l.x.abs()).abs(),
            (h.y - l.y.abs()).abs(),
            (h.z - l.z.abs()).abs(),
        ];
        let axis = (0..3).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap_or(0);
        let mut n = Vec3::zeros();
        n[axis] = if l[axis] >= 0.0 { 1.0 } else { -1.0 };
        self.rotation * n
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vec3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.to_world(&self.half_extents.component_mul(&s));
        }
        out
    }

    /// Separating-axis test. Boxes that merely touch (penetration below
    /// `tol`) do not count as overlapping.
    pub fn overlaps(&self, other: &OrientedBox, tol: f64) -> bool {
        let mut axes: Vec<Vec3> = Vec::with_capacity(15);
        for i in 0..3 {
            axes.push(self.rotation.column(i).into_owned());
            axes.push(other.rotation.column(i).into_owned());
        }
        for i in 0..3 {
            for j in 0..3 {
                let c = self.rotation.column(i).cross(&other.rotation.column(j)).into_owned();
                if c.norm() > 1e-9 {
                    axes.push(c.normalize());
                }
            }
        }
        let delta = other.center - self.center;
        for axis in axes {
            let ra: f64 = (0..3)
                .map(|i| self.half_extents[i] * self.rotation.column(i).dot(&axis).abs())
                .sum();
            let rb: f64 = (0..3)
                .map(|i| other.half_extents[i] * other.rotation.column(i).dot(&axis).abs())
                .sum();
            if delta.dot(&axis).abs() >= ra + rb - tol {
                return false;
            }
        }
        true
    }
}

/// Rotation about a unit axis through a point, applied to `p`.
pub fn rotate_about(p: &Vec3, axis_point: &Vec3, axis_dir: &Vec3, angle: f64) -> Vec3 {
    let r = rotation_about(axis_dir, angle);
    r * (p - axis_point) + axis_point
}

pub fn rotation_about(axis_dir: &Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis_dir), angle).into_inner()
}

/// Orthonormal frame whose third column is `approach`. The roll is fixed by
/// keeping the first column horizontal, falling back to the world x axis when
/// `approach` is vertical.
pub fn frame_from_approach(approach: &Vec3) -> Mat3 {
    let d = approach.normalize();
    let mut x = world_up().cross(&d);
    if x.norm() < 1e-6 {
        x = Vec3::new(1.0, 0.0, 0.0).cross(&d);
    }
    let x = x.normalize();
    let y = d.cross(&x);
    Mat3::from_columns(&[x, y, d])
}

/// Approach direction (third column) of a gripper orientation.
pub fn approach_of(orientation: &Mat3) -> Vec3 {
    orientation.column(2).into_owned()
}

/// Uniform direction on the hemisphere `{v : v·axis >= 0}`.
pub fn sample_hemisphere<R: Rng + ?Sized>(rng: &mut R, axis: &Vec3) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n2 = v.norm_squared();
        if !(1e-6..=1.0).contains(&n2) {
            continue;
        }
        let v = v / n2.sqrt();
        return if v.dot(axis) >= 0.0 { v } else { -v };
    }
}

/// Geodesic angle between two rotations.
pub fn geodesic_angle(a: &Mat3, b: &Mat3) -> f64 {
    let r = a.transpose() * b;
    ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    let e = m.transpose() * m - Mat3::identity();
    e.iter().all(|v| v.abs() <= tol) && (m.determinant() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ray_hits_front_face_of_unit_box() {
        let b = OrientedBox::axis_aligned(Vec3::new(-0.5, -0.5, -0.5), Vec3::new(0.5, 0.5, 0.5));
        let hit = b
            .intersect(&Vec3::new(0.0, 0.0, -3.0), &Vec3::new(0.0, 0.0, 1.0), 0.0)
            .unwrap();
        assert!((hit.t - 2.5).abs() < 1e-12);
        assert_eq!(hit.normal, Vec3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn ray_from_inside_reports_nothing() {
        let b = OrientedBox::axis_aligned(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        assert!(b.intersect(&Vec3::zeros(), &Vec3::x(), 0.0).is_none());
    }

    #[test]
    fn rotated_box_signed_distance() {
        let b = OrientedBox {
            center: Vec3::new(1.0, 0.0, 0.0),
            half_extents: Vec3::new(0.5, 0.25, 0.25),
            rotation: rotation_about(&Vec3::z(), std::f64::consts::FRAC_PI_2),
        };
        // Local x now points along world y.
        assert!((b.signed_distance(&Vec3::new(1.0, 0.5, 0.0))).abs() < 1e-12);
        assert!((b.signed_distance(&Vec3::new(1.0, 1.5, 0.0)) - 1.0).abs() < 1e-12);
        assert!((b.signed_distance(&Vec3::new(1.0, 0.0, 0.0)) + 0.25).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        let a = OrientedBox::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let b = OrientedBox::axis_aligned(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0));
        let c = OrientedBox::axis_aligned(Vec3::new(0.9, 0.0, 0.0), Vec3::new(2.0, 1.0, 1.0));
        assert!(!a.overlaps(&b, 1e-9));
        assert!(a.overlaps(&c, 1e-9));
    }

    #[test]
    fn hemisphere_samples_stay_on_their_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let axis = Vec3::new(0.3, -0.2, 0.9).normalize();
        for _ in 0..1000 {
            let v = sample_hemisphere(&mut rng, &axis);
            assert!(v.dot(&axis) >= 0.0);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn approach_frame_is_a_rotation() {
        for d in [Vec3::x(), Vec3::z(), -Vec3::z(), Vec3::new(1.0, 2.0, -0.5)] {
            let f = frame_from_approach(&d);
            assert!(is_rotation(&f, 1e-12));
            assert!((approach_of(&f) - d.normalize()).norm() < 1e-12);
        }
    }
}
