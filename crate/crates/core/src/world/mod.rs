//! Deterministic kinematic multi-arm workspace.
//!
//! A [`TaskSpec`] describes a scene, the arms acting in it and a success
//! predicate. [`reset`] turns it into a [`WorldState`]; the world only ever
//! changes through [`apply_joint_step`], which applies one synchronized action
//! per agent along trajectories produced by the validator.

mod objects;
pub(crate) mod sim;
mod success;
mod task;

pub use objects::{axial_length, grasp_point, object_shapes, ROPE_STRETCH_TOLERANCE};
pub use sim::{
    apply_joint_step, end_effector, observe, observe_full, reset, settle_objects, StepOutcome,
    WorldError, CO_HOLD_SLACK, JITTER, OBSERVATION_SCALE,
};
pub use success::check_success;
pub use task::{load_task, task_to_json, TaskError};

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::normalize_angle;

pub type AgentId = String;
pub type ObjectId = String;

/// Position in meters plus a heading about +z in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose { x, y, z, yaw: normalize_angle(yaw) }
    }

    pub fn from_position(p: Vector3<f64>, yaw: f64) -> Self {
        Pose::new(p.x, p.y, p.z, yaw)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }

    /// Maps a point from this pose's local frame into the world frame.
    pub fn transform_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.position() + yaw_rotation(self.yaw) * local
    }

    /// Inverse of [`Pose::transform_point`].
    pub fn inverse_transform_point(&self, world: &Vector3<f64>) -> Vector3<f64> {
        yaw_rotation(-self.yaw) * (world - self.position())
    }
}

impl From<[f64; 4]> for Pose {
    fn from(v: [f64; 4]) -> Self {
        Pose::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Pose> for [f64; 4] {
    fn from(p: Pose) -> Self {
        [p.x, p.y, p.z, p.yaw]
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3},{:.3},{:.3},{:.3})", self.x, self.y, self.z, self.yaw)
    }
}

pub(crate) fn yaw_rotation(yaw: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
}

/// A 3-DOF arm: base yaw plus a planar shoulder/elbow chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub agent_id: AgentId,
    pub base: Pose,
    /// Upper and fore link lengths.
    pub link_lengths: [f64; 2],
    /// `[min, max]` for base yaw, shoulder and elbow.
    pub joint_limits: [[f64; 2]; 3],
    pub capsule_radius: f64,
    pub reachable_radius: f64,
}

impl ArmModel {
    /// All-zero joints clamped into the limits.
    pub fn home(&self) -> [f64; 3] {
        let mut q = [0.0f64; 3];
        for (j, lim) in self.joint_limits.iter().enumerate() {
            q[j] = q[j].clamp(lim[0], lim[1]);
        }
        q
    }

    pub fn within_limits(&self, q: &[f64; 3]) -> bool {
        const EPS: f64 = 1e-12;
        q.iter()
            .zip(self.joint_limits.iter())
            .all(|(v, lim)| v.is_finite() && *v >= lim[0] - EPS && *v <= lim[1] + EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    Open,
    Closed,
}

/// Grasp record of a held object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Held {
    pub object_id: ObjectId,
    /// Distance along the object's axis from its first end, in meters.
    pub grasp_offset: f64,
    /// Grasp point in the object's local frame.
    pub local: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub joints: [f64; 3],
    /// Tool heading; held objects share it.
    pub tool_yaw: f64,
    pub gripper: Gripper,
    pub held: Option<Held>,
    /// Object the open gripper still touches after a release. Cleared once
    /// the arm moves away.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<ObjectId>,
}

impl ArmState {
    pub fn holds(&self, object: &str) -> bool {
        self.held.as_ref().is_some_and(|h| h.object_id == object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Rope,
    Panel,
    Door,
    Cup,
    FoodItem,
    Wall,
    Stud,
    Groove,
    Table,
}

impl ObjectKind {
    /// Support surfaces and slots never take part in collision checks.
    pub fn is_solid(self) -> bool {
        !matches!(self, ObjectKind::Table | ObjectKind::Groove)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Rope => "rope",
            ObjectKind::Panel => "panel",
            ObjectKind::Door => "door",
            ObjectKind::Cup => "cup",
            ObjectKind::FoodItem => "food_item",
            ObjectKind::Wall => "wall",
            ObjectKind::Stud => "stud",
            ObjectKind::Groove => "groove",
            ObjectKind::Table => "table",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Object geometry in the object's local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Geometry {
    Sphere { radius: f64 },
    Capsule { p0: [f64; 3], p1: [f64; 3], radius: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handle {
    pub id: String,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub pose: Pose,
    pub geometry: Geometry,
    #[serde(default)]
    pub handles: Vec<Handle>,
    #[serde(default)]
    pub graspable: bool,
}

impl SceneObject {
    pub fn handle(&self, id: &str) -> Option<&Handle> {
        self.handles.iter().find(|h| h.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    MoveRope,
    ArrangeCabinet,
    MakeSandwich,
    InstallDrywall,
}

impl TaskId {
    pub const ALL: [TaskId; 4] =
        [TaskId::MoveRope, TaskId::ArrangeCabinet, TaskId::MakeSandwich, TaskId::InstallDrywall];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::MoveRope => "move_rope",
            TaskId::ArrangeCabinet => "arrange_cabinet",
            TaskId::MakeSandwich => "make_sandwich",
            TaskId::InstallDrywall => "install_drywall",
        }
    }

    pub fn parse(s: &str) -> Option<TaskId> {
        TaskId::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned region in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SuccessPredicate {
    /// Both rope ends inside the groove region and the rope clear of the wall.
    RopeInGroove { rope: ObjectId, groove: Region, clearance_wall: ObjectId },
    /// Panel centre within `pos_tol` of the target and heading within `ang_tol`.
    PanelInstalled { panel: ObjectId, target: Pose, pos_tol: f64, ang_tol: f64 },
    /// Door swung at least `hinge_threshold` from `closed_yaw` and every listed
    /// object released inside its region.
    DoorOpenAndPlaced {
        door: ObjectId,
        closed_yaw: f64,
        hinge_threshold: f64,
        placements: BTreeMap<ObjectId, Region>,
    },
    /// Objects released in list order, bottom first, each within `xy_tol` of
    /// the one below it.
    StackOrder { order: Vec<ObjectId>, xy_tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub agent_goals: BTreeMap<AgentId, String>,
    pub initial_scene: Vec<SceneObject>,
    pub arms: Vec<ArmModel>,
    pub success: SuccessPredicate,
    pub max_env_steps: u32,
    pub max_replans: u32,
    pub seed: u64,
}

impl TaskSpec {
    pub fn arm(&self, agent: &str) -> Option<&ArmModel> {
        self.arms.iter().find(|a| a.agent_id == agent)
    }

    pub fn agent_ids(&self) -> impl Iterator<Item = &AgentId> {
        self.agent_goals.keys()
    }

    pub fn with_seed(&self, seed: u64) -> TaskSpec {
        TaskSpec { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step_count: u32,
    pub arm_states: BTreeMap<AgentId, ArmState>,
    pub objects: BTreeMap<ObjectId, SceneObject>,
    pub done: bool,
}

impl WorldState {
    /// Agents currently holding `object`, in id order.
    pub fn holders(&self, object: &str) -> Vec<&AgentId> {
        self.arm_states.iter().filter(|(_, s)| s.holds(object)).map(|(a, _)| a).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: ObjectId,
    pub pose: Pose,
    pub kind: ObjectKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent_id: AgentId,
    pub visible_objects: Vec<VisibleObject>,
    pub own_arm: ArmState,
    pub reachable_radius: f64,
    pub step_count: u32,
}
