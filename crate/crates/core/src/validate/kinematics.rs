//! Forward/inverse kinematics and joint-space interpolation for the 3-DOF
//! arm model: a base yaw that turns a vertical working plane, and a planar
//! shoulder/elbow chain inside it.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::normalize_angle;
use crate::world::{ArmModel, Pose};

/// `(base_yaw, shoulder, elbow)` in radians.
pub type JointConfig = [f64; 3];

/// Maximum end-effector travel between consecutive waypoints, in meters.
pub const INTERPOLATION_RESOLUTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IkFailure {
    OutOfReach,
    JointLimit,
}

impl IkFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            IkFailure::OutOfReach => "out_of_reach",
            IkFailure::JointLimit => "joint_limit",
        }
    }
}

fn heading(arm: &ArmModel, q: &JointConfig) -> f64 {
    arm.base.yaw + q[0]
}

/// Radial and vertical offset of the elbow and the tip inside the working plane.
fn planar(arm: &ArmModel, q: &JointConfig) -> ((f64, f64), (f64, f64)) {
    let [l1, l2] = arm.link_lengths;
    let elbow = (l1 * q[1].cos(), l1 * q[1].sin());
    let tip = (elbow.0 + l2 * (q[1] + q[2]).cos(), elbow.1 + l2 * (q[1] + q[2]).sin());
    (elbow, tip)
}

fn lift(arm: &ArmModel, q: &JointConfig, (r, z): (f64, f64)) -> Vector3<f64> {
    let h = heading(arm, q);
    arm.base.position() + Vector3::new(r * h.cos(), r * h.sin(), z)
}

/// End-effector pose; its yaw is the heading of the working plane.
pub fn forward_kinematics(arm: &ArmModel, q: &JointConfig) -> Pose {
    let (_, tip) = planar(arm, q);
    Pose::from_position(lift(arm, q, tip), heading(arm, q))
}

/// Shoulder, elbow and end-effector positions.
pub fn link_points(arm: &ArmModel, q: &JointConfig) -> [Vector3<f64>; 3] {
    let (elbow, tip) = planar(arm, q);
    [arm.base.position(), lift(arm, q, elbow), lift(arm, q, tip)]
}

/// Analytic inverse kinematics for the target position (its yaw is ignored).
///
/// The elbow-down branch (positive elbow angle) is tried first; the
/// elbow-up branch is the fallback when elbow-down leaves the joint limits.
pub fn inverse_kinematics(arm: &ArmModel, target: &Pose) -> Result<JointConfig, IkFailure> {
    const EPS: f64 = 1e-12;
    let [l1, l2] = arm.link_lengths;
    let d = target.position() - arm.base.position();
    let r = d.x.hypot(d.y);
    let z = d.z;
    let dist = r.hypot(z);
    if !dist.is_finite() || dist > l1 + l2 + EPS || dist < (l1 - l2).abs() - EPS {
        return Err(IkFailure::OutOfReach);
    }
    let base_yaw = if r > 0.0 { normalize_angle(d.y.atan2(d.x) - arm.base.yaw) } else { 0.0 };
    let cos_elbow = ((r * r + z * z - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let bend = cos_elbow.acos();
    for elbow in [bend, -bend] {
        let shoulder = z.atan2(r) - (l2 * elbow.sin()).atan2(l1 + l2 * elbow.cos());
        let q = [base_yaw, shoulder, elbow];
        if arm.within_limits(&q) {
            return Ok(q);
        }
    }
    Err(IkFailure::JointLimit)
}

/// Linear joint-space interpolation, dense enough that consecutive
/// end-effector positions are at most [`INTERPOLATION_RESOLUTION`] apart.
/// Both end points are included; identical configurations give one waypoint.
pub fn interpolate(from: &JointConfig, to: &JointConfig, arm: &ArmModel) -> Vec<JointConfig> {
    if from == to {
        return vec![*from];
    }
    let chord = (forward_kinematics(arm, to).position() - forward_kinematics(arm, from).position()).norm();
    let mut segments = ((chord / INTERPOLATION_RESOLUTION).ceil() as usize).max(1);
    loop {
        let path = sample(from, to, segments);
        let gap = max_gap(arm, &path);
        if gap <= INTERPOLATION_RESOLUTION {
            return path;
        }
        let grown = (segments as f64 * gap / INTERPOLATION_RESOLUTION).ceil() as usize;
        segments = grown.max(segments + 1);
    }
}

fn sample(from: &JointConfig, to: &JointConfig, segments: usize) -> Vec<JointConfig> {
    (0..=segments)
        .map(|i| {
            if i == segments {
                return *to;
            }
            let t = i as f64 / segments as f64;
            [0, 1, 2].map(|j| from[j] + (to[j] - from[j]) * t)
        })
        .collect()
}

/// Largest end-effector distance between consecutive configurations.
pub fn max_gap(arm: &ArmModel, path: &[JointConfig]) -> f64 {
    path.windows(2)
        .map(|w| {
            (forward_kinematics(arm, &w[1]).position() - forward_kinematics(arm, &w[0]).position())
                .norm()
        })
        .fold(0.0, f64::max)
}

/// Resamples a waypoint list to `n` points by linear interpolation over the
/// index. End points are kept exactly.
pub fn resample(path: &[JointConfig], n: usize) -> Vec<JointConfig> {
    assert!(!path.is_empty() && n > 0, "resample needs a non-empty path and n > 0");
    if path.len() == n {
        return path.to_vec();
    }
    if n == 1 {
        return vec![*path.last().unwrap()];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                return *path.last().unwrap();
            }
            let x = i as f64 * (path.len() - 1) as f64 / (n - 1) as f64;
            let k = x.floor() as usize;
            let t = x - k as f64;
            if k + 1 >= path.len() {
                return path[path.len() - 1];
            }
            [0, 1, 2].map(|j| path[k][j] + (path[k + 1][j] - path[k][j]) * t)
        })
        .collect()
}
