//! Contact self-correction and the closed-loop long-term interaction.

use std::io::Write;

use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::config::ControlConfig;
use crate::error::{Error, Result};
use crate::geom::{frame_from_approach, Mat3, Vec3};
use crate::scene::{interact, part_motion_dir, OracleParams, Primitive, Scene};

/// Sphere-tracing iterations before giving up; far above what `max_travel`
/// needs at sane step sizes.
const MAX_MARCH_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperPose {
    pub position: Vec3,
    pub orientation: Mat3,
}

/// Moves the gripper from `standoff` behind the predicted contact along the
/// approach `d` until it touches a surface. Returns the touched surface
/// point, or `None` when nothing is hit within `max_travel`. A start point
/// already inside geometry counts as touching.
pub fn self_correct_contact(scene: &Scene, point: &Vec3, d: &Vec3, cfg: &ControlConfig) -> Result<Option<Vec3>> {
    let n = d.norm();
    if !(n > 1e-12) || !n.is_finite() || !point.iter().all(|v| v.is_finite()) {
        return Err(Error::Geometry("approach direction or contact is degenerate".into()));
    }
    let d = d / n;
    let mut pos = point - d * cfg.standoff;
    let mut travelled = 0.0;
    for _ in 0..MAX_MARCH_ITERS {
        let s = scene.signed_distance(&pos);
        if s <= cfg.contact_tol {
            return Ok(Some(scene.snap_to_surface(&pos)));
        }
        let step = s.min(cfg.march_step);
        travelled += step;
        if travelled > cfg.max_travel {
            return Ok(None);
        }
        pos += d * step;
    }
    Ok(None)
}

/// One controller update: the position follows
/// `x + α(target − x) + β(x − x_prev)` and the orientation slerps a fraction
/// `α` of the way to the target.
pub fn intermediate_pose(
    prev: &GripperPose,
    current: &GripperPose,
    target: &GripperPose,
    alpha: f64,
    beta: f64,
) -> GripperPose {
    let x = current.position;
    let position = x + (target.position - x) * alpha + (x - prev.position) * beta;
    // Renormalize so repeated updates do not drift off the rotation group.
    let quat = |m: &Mat3| {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        UnitQuaternion::new_normalize(q.into_inner())
    };
    let (q0, q1) = (quat(&current.orientation), quat(&target.orientation));
    let q = q0.try_slerp(&q1, alpha, 1e-12).unwrap_or(q1);
    let q = UnitQuaternion::new_normalize(q.into_inner());
    GripperPose {
        position,
        orientation: q.to_rotation_matrix().into_inner(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Success,
    NoProgress,
    MaxSteps,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub contact: Vec3,
    /// Commanded gripper pose after the controller update.
    pub gripper: GripperPose,
    pub delta_dis: f64,
    pub cumulative: f64,
    pub joint: f64,
}

impl TrajectoryStep {
    pub fn from_json_line(line: &str) -> Result<Self> {
        let s: TrajectoryStep = serde_json::from_str(line)?;
        let finite = s.contact.iter().chain(s.gripper.position.iter()).all(|v| v.is_finite())
            && s.delta_dis.is_finite()
            && s.cumulative.is_finite()
            && s.joint.is_finite();
        if !finite {
            return Err(Error::Geometry("trajectory step has non-finite values".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermResult {
    pub success: bool,
    pub cumulative: f64,
    pub stop: StopReason,
    pub steps: Vec<TrajectoryStep>,
}

impl LongTermResult {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Repeats the primitive from `contact`, re-aiming the gripper at the part
/// motion direction after every stroke. The grasped contact moves with the
/// part; the commanded arm position is logged alongside it.
pub fn execute_long_term(
    scene: &Scene,
    primitive: Primitive,
    contact: &Vec3,
    orientation: &Mat3,
    oracle: &OracleParams,
    cfg: &ControlConfig,
    long_delta: f64,
) -> Result<LongTermResult> {
    let mut scene = scene.clone();
    let mut contact = *contact;
    let mut current = GripperPose {
        position: contact,
        orientation: *orientation,
    };
    let mut prev = current.clone();
    let mut cumulative = 0.0;
    let mut steps = Vec::new();
    for step in 0..cfg.max_steps {
        let outcome = interact(&scene, primitive, &contact, &current.orientation, oracle)?;
        if !(outcome.delta_dis > 0.0) {
            return Ok(LongTermResult {
                success: false,
                cumulative,
                stop: StopReason::NoProgress,
                steps,
            });
        }
        let (next_scene, moved) = scene.apply_displacement(primitive, &contact, outcome.delta_dis);
        scene = next_scene;
        contact = moved;
        cumulative += outcome.delta_dis;
        let target_orientation = match part_motion_dir(&scene, &contact) {
            Ok(m) => frame_from_approach(&m),
            Err(Error::NoMotion(_)) => current.orientation,
            Err(e) => return Err(e),
        };
        let target = GripperPose {
            position: contact,
            orientation: target_orientation,
        };
        let next = intermediate_pose(&prev, &current, &target, cfg.alpha, cfg.beta);
        prev = current;
        current = next;
        steps.push(TrajectoryStep {
            step,
            contact,
            gripper: current.clone(),
            delta_dis: outcome.delta_dis,
            cumulative,
            joint: scene.part.q,
        });
        if cumulative > long_delta {
            return Ok(LongTermResult {
                success: true,
                cumulative,
                stop: StopReason::Success,
                steps,
            });
        }
    }
    Ok(LongTermResult {
        success: false,
        cumulative,
        stop: StopReason::MaxSteps,
        steps,
    })
}
