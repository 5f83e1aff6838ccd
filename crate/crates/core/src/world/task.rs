//! Task file loading and validation.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::objects::contains_local;
use super::{ArmModel, Geometry, Pose, SceneObject, SuccessPredicate, TaskId, TaskSpec};

pub const DEFAULT_MAX_ENV_STEPS: u32 = 10;
pub const DEFAULT_MAX_REPLANS: u32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("unknown task id `{0}`")]
    UnknownTask(String),
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> TaskError {
    TaskError::Schema { path: path.into(), reason: reason.into() }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskDocument {
    task_id: String,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
    agents: Vec<AgentDocument>,
    objects: Vec<SceneObject>,
    success: SuccessPredicate,
    #[serde(default = "default_steps")]
    max_env_steps: u32,
    #[serde(default = "default_replans")]
    max_replans: u32,
}

fn default_steps() -> u32 {
    DEFAULT_MAX_ENV_STEPS
}

fn default_replans() -> u32 {
    DEFAULT_MAX_REPLANS
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDocument {
    id: String,
    goal: String,
    arm: ArmDocument,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmDocument {
    base: Pose,
    link_lengths: [f64; 2],
    joint_limits: [[f64; 2]; 3],
    capsule_radius: f64,
    reachable_radius: f64,
}

/// Parses and validates a task document. Missing caps default to 10 steps
/// and 5 replans.
pub fn load_task(document: &str) -> Result<TaskSpec, TaskError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: TaskDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(if path.is_empty() { "$".to_string() } else { path }, e.inner().to_string())
    })?;
    let task_id = TaskId::parse(&doc.task_id).ok_or_else(|| TaskError::UnknownTask(doc.task_id.clone()))?;

    if doc.agents.len() < 2 {
        return Err(schema("agents", "at least two agents are required"));
    }
    let mut agent_goals = BTreeMap::new();
    let mut arms = Vec::with_capacity(doc.agents.len());
    for (i, agent) in doc.agents.into_iter().enumerate() {
        let at = |field: &str| format!("agents[{i}].{field}");
        if agent.id.trim().is_empty() || agent.id.chars().any(|c| !(c.is_ascii_alphanumeric() || c == '_')) {
            return Err(schema(at("id"), "agent ids are non-empty [A-Za-z0-9_] words"));
        }
        if agent_goals.contains_key(&agent.id) {
            return Err(schema(at("id"), format!("duplicate agent `{}`", agent.id)));
        }
        let arm = agent.arm;
        if !arm.base.is_finite() {
            return Err(schema(at("arm.base"), "non-finite pose"));
        }
        if arm.link_lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(schema(at("arm.link_lengths"), "link lengths must be > 0"));
        }
        for (j, lim) in arm.joint_limits.iter().enumerate() {
            if !(lim[0].is_finite() && lim[1].is_finite() && lim[0] < lim[1]) {
                return Err(schema(at(&format!("arm.joint_limits[{j}]")), "need min < max"));
            }
        }
        if !(arm.capsule_radius.is_finite() && arm.capsule_radius > 0.0) {
            return Err(schema(at("arm.capsule_radius"), "must be > 0"));
        }
        if !(arm.reachable_radius.is_finite() && arm.reachable_radius > 0.0) {
            return Err(schema(at("arm.reachable_radius"), "must be > 0"));
        }
        agent_goals.insert(agent.id.clone(), agent.goal);
        arms.push(ArmModel {
            agent_id: agent.id,
            base: arm.base,
            link_lengths: arm.link_lengths,
            joint_limits: arm.joint_limits,
            capsule_radius: arm.capsule_radius,
            reachable_radius: arm.reachable_radius,
        });
    }

    let mut ids = BTreeSet::new();
    for (i, obj) in doc.objects.iter().enumerate() {
        validate_object(i, obj)?;
        if !ids.insert(obj.id.as_str()) {
            return Err(schema(format!("objects[{i}].id"), format!("duplicate object `{}`", obj.id)));
        }
    }
    validate_success(&doc.success, &ids)?;
    if doc.max_env_steps < 1 {
        return Err(schema("max_env_steps", "must be >= 1"));
    }
    if doc.max_replans < 1 {
        return Err(schema("max_replans", "must be >= 1"));
    }

    Ok(TaskSpec {
        task_id,
        agent_goals,
        initial_scene: doc.objects,
        arms,
        success: doc.success,
        max_env_steps: doc.max_env_steps,
        max_replans: doc.max_replans,
        seed: doc.seed,
    })
}

fn validate_object(i: usize, obj: &SceneObject) -> Result<(), TaskError> {
    let at = |field: &str| format!("objects[{i}].{field}");
    if obj.id.trim().is_empty() || obj.id.chars().any(|c| !(c.is_ascii_alphanumeric() || c == '_')) {
        return Err(schema(at("id"), "object ids are non-empty [A-Za-z0-9_] words"));
    }
    if !obj.pose.is_finite() {
        return Err(schema(at("pose"), "non-finite pose"));
    }
    let positive = |v: f64| v.is_finite() && v > 0.0;
    let ok = match &obj.geometry {
        Geometry::Sphere { radius } => positive(*radius),
        Geometry::Capsule { p0, p1, radius } => {
            positive(*radius) && p0.iter().chain(p1.iter()).all(|v| v.is_finite())
        }
        Geometry::Box { half_extents } => half_extents.iter().all(|v| positive(*v)),
    };
    if !ok {
        return Err(schema(at("geometry"), "geometry parameters must be finite and > 0"));
    }
    if !obj.graspable && !obj.handles.is_empty() {
        return Err(schema(at("handles"), "non-graspable objects carry no handles"));
    }
    for (h, handle) in obj.handles.iter().enumerate() {
        let p = Vector3::new(handle.offset[0], handle.offset[1], handle.offset[2]);
        if !contains_local(&obj.geometry, &p) {
            return Err(schema(at(&format!("handles[{h}].offset")), "handle lies off the object geometry"));
        }
    }
    Ok(())
}

fn validate_success(s: &SuccessPredicate, ids: &BTreeSet<&str>) -> Result<(), TaskError> {
    let exists = |id: &str, path: &str| {
        if ids.contains(id) {
            Ok(())
        } else {
            Err(schema(path, format!("unknown object `{id}`")))
        }
    };
    let positive = |v: f64, path: &str| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(schema(path, "tolerance must be > 0"))
        }
    };
    match s {
        SuccessPredicate::RopeInGroove { rope, clearance_wall, groove } => {
            exists(rope, "success.rope")?;
            exists(clearance_wall, "success.clearance_wall")?;
            if (0..3).any(|i| groove.min[i] > groove.max[i]) {
                return Err(schema("success.groove", "min must not exceed max"));
            }
        }
        SuccessPredicate::PanelInstalled { panel, pos_tol, ang_tol, target } => {
            exists(panel, "success.panel")?;
            positive(*pos_tol, "success.pos_tol")?;
            positive(*ang_tol, "success.ang_tol")?;
            if !target.is_finite() {
                return Err(schema("success.target", "non-finite pose"));
            }
        }
        SuccessPredicate::DoorOpenAndPlaced { door, hinge_threshold, placements, .. } => {
            exists(door, "success.door")?;
            positive(*hinge_threshold, "success.hinge_threshold")?;
            for id in placements.keys() {
                exists(id, &format!("success.placements.{id}"))?;
            }
        }
        SuccessPredicate::StackOrder { order, xy_tol } => {
            positive(*xy_tol, "success.xy_tol")?;
            if order.is_empty() {
                return Err(schema("success.order", "empty stack order"));
            }
            for (i, id) in order.iter().enumerate() {
                exists(id, &format!("success.order[{i}]"))?;
            }
        }
    }
    Ok(())
}

/// Serializes a task back into the task file format.
pub fn task_to_json(task: &TaskSpec) -> serde_json::Value {
    let doc = TaskDocument {
        task_id: task.task_id.as_str().to_string(),
        seed: task.seed,
        notes: None,
        agents: task
            .arms
            .iter()
            .map(|arm| AgentDocument {
                id: arm.agent_id.clone(),
                goal: task.agent_goals.get(&arm.agent_id).cloned().unwrap_or_default(),
                arm: ArmDocument {
                    base: arm.base,
                    link_lengths: arm.link_lengths,
                    joint_limits: arm.joint_limits,
                    capsule_radius: arm.capsule_radius,
                    reachable_radius: arm.reachable_radius,
                },
            })
            .collect(),
        objects: task.initial_scene.clone(),
        success: task.success.clone(),
        max_env_steps: task.max_env_steps,
        max_replans: task.max_replans,
    };
    serde_json::to_value(doc).expect("task documents always serialize")
}
