//! Reset, observation and the joint-step transition.
//!
//! The transition is split into [`resolve_step`] (targets and grasp effects
//! of one synchronized action set), [`pose_held_objects`] (where held objects
//! are for given arm configurations) and [`finish_step`] (grasp bookkeeping at
//! the end of a step). The validator sweeps with the same functions, so a
//! validated plan executes exactly as it was checked.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::objects::{axial_length, axis_coordinate, axis_point, grasp_point, ROPE_STRETCH_TOLERANCE};
use super::success::check_success;
use super::{
    AgentId, ArmState, Geometry, Gripper, Held, ObjectId, ObjectKind, Observation, Pose, SceneObject,
    TaskSpec, VisibleObject, WorldState,
};
use crate::normalize_angle;
use crate::plan::{Action, Grasp};
use crate::validate::kinematics::{forward_kinematics, inverse_kinematics, IkFailure, JointConfig};
use crate::validate::Waypoint;

/// Uniform jitter bound applied to graspable objects' x and y on reset.
pub const JITTER: f64 = 0.01;
/// Observation radius as a multiple of the arm's reachable radius.
pub const OBSERVATION_SCALE: f64 = 1.5;
/// Largest distance a co-holder's gripper may drift from its grasp point.
pub const CO_HOLD_SLACK: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("invalid transition for {agent_id}: {reason}")]
    InvalidTransition { agent_id: String, reason: String },
    #[error("step cap of {0} environment steps reached")]
    StepCap(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step_count: u32,
    pub success: bool,
}

/// Why a step cannot be taken; the validator turns these into feedback.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum StepFault {
    Ik { agent_id: AgentId, target: Pose, reason: IkFailure },
    Grasp { agent_id: AgentId, object_id: ObjectId, reason: String },
    Overstretch { length: f64, max: f64 },
    Agent { agent_id: AgentId, reason: String },
}

impl StepFault {
    fn describe(&self) -> (String, String) {
        match self {
            StepFault::Ik { agent_id, target, reason } => {
                (agent_id.clone(), format!("target {target} is {}", reason.as_str()))
            }
            StepFault::Grasp { agent_id, object_id, reason } => (agent_id.clone(), format!("{object_id}: {reason}")),
            StepFault::Overstretch { length, max } => {
                (String::new(), format!("rope stretched to {length:.3} m, max {max:.3} m"))
            }
            StepFault::Agent { agent_id, reason } => (agent_id.clone(), reason.clone()),
        }
    }
}

/// Arm configuration inside a step: joints plus tool heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ArmConfig {
    pub joints: JointConfig,
    pub tool_yaw: f64,
}

/// Resolved effects of one synchronized action set.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct StepPlan {
    pub targets: BTreeMap<AgentId, ArmConfig>,
    pub picking: BTreeMap<AgentId, Held>,
    pub placing: BTreeMap<AgentId, (ObjectId, Pose)>,
    pub opening: BTreeSet<AgentId>,
    pub closing: BTreeSet<AgentId>,
}

/// Initial world: arms at home, gripper open, graspable objects jittered by
/// up to [`JITTER`] in x and y, deterministically from the task seed.
pub fn reset(task: &TaskSpec) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut objects: BTreeMap<ObjectId, SceneObject> =
        task.initial_scene.iter().map(|o| (o.id.clone(), o.clone())).collect();
    for obj in objects.values_mut() {
        if obj.graspable {
            let dx = rng.random_range(-JITTER..=JITTER);
            let dy = rng.random_range(-JITTER..=JITTER);
            obj.pose = Pose::new(obj.pose.x + dx, obj.pose.y + dy, obj.pose.z, obj.pose.yaw);
        }
    }
    let arm_states = task
        .arms
        .iter()
        .map(|arm| {
            let joints = arm.home();
            let state = ArmState {
                joints,
                tool_yaw: forward_kinematics(arm, &joints).yaw,
                gripper: Gripper::Open,
                held: None,
                contact: None,
            };
            (arm.agent_id.clone(), state)
        })
        .collect();
    WorldState { step_count: 0, arm_states, objects, done: false }
}

/// End-effector pose of an agent: tip position and tool heading.
pub fn end_effector(world: &WorldState, task: &TaskSpec, agent: &str) -> Option<Pose> {
    let arm = task.arm(agent)?;
    let state = world.arm_states.get(agent)?;
    Some(Pose::from_position(forward_kinematics(arm, &state.joints).position(), state.tool_yaw))
}

/// Objects within `OBSERVATION_SCALE × reachable_radius` of the agent's base.
pub fn observe(world: &WorldState, task: &TaskSpec, agent: &str) -> Result<Observation, WorldError> {
    let arm = task.arm(agent).ok_or_else(|| WorldError::UnknownAgent(agent.to_string()))?;
    let own_arm = world.arm_states.get(agent).cloned().ok_or_else(|| WorldError::UnknownAgent(agent.to_string()))?;
    let radius = arm.reachable_radius * OBSERVATION_SCALE;
    let base = arm.base.position();
    let visible_objects = world
        .objects
        .values()
        .filter(|o| (o.pose.position() - base).norm() <= radius)
        .map(|o| VisibleObject { id: o.id.clone(), pose: o.pose, kind: o.kind })
        .collect();
    Ok(Observation {
        agent_id: agent.to_string(),
        visible_objects,
        own_arm,
        reachable_radius: arm.reachable_radius,
        step_count: world.step_count,
    })
}

/// Observation with every object visible, for the full-state planner.
pub fn observe_full(world: &WorldState, task: &TaskSpec, agent: &str) -> Result<Observation, WorldError> {
    let mut o = observe(world, task, agent)?;
    o.visible_objects =
        world.objects.values().map(|o| VisibleObject { id: o.id.clone(), pose: o.pose, kind: o.kind }).collect();
    Ok(o)
}

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Targets and grasp effects of one action per agent, checked against the
/// world at the start of the step. Agents are resolved in id order, so the
/// first fault is deterministic.
pub(crate) fn resolve_step(
    world: &WorldState,
    task: &TaskSpec,
    actions: &BTreeMap<AgentId, Action>,
) -> Result<StepPlan, StepFault> {
    for agent in actions.keys() {
        if task.arm(agent).is_none() {
            return Err(StepFault::Agent { agent_id: agent.clone(), reason: "not an agent of this task".into() });
        }
    }
    let mut plan = StepPlan::default();
    let mut arms: Vec<_> = task.arms.iter().collect();
    arms.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    for arm in arms {
        let agent = &arm.agent_id;
        let Some(action) = actions.get(agent) else {
            return Err(StepFault::Agent { agent_id: agent.clone(), reason: "no action for this agent".into() });
        };
        let state = &world.arm_states[agent];
        let stay = ArmConfig { joints: state.joints, tool_yaw: state.tool_yaw };
        let grasp_fault = |object: &str, reason: String| StepFault::Grasp {
            agent_id: agent.clone(),
            object_id: object.to_string(),
            reason,
        };
        let solve = |target: Pose| {
            inverse_kinematics(arm, &target).map_err(|reason| StepFault::Ik { agent_id: agent.clone(), target, reason })
        };
        let target = match action {
            Action::Wait => stay,
            Action::Close => {
                plan.closing.insert(agent.clone());
                stay
            }
            Action::Open => {
                plan.opening.insert(agent.clone());
                stay
            }
            Action::Move { to } => ArmConfig { joints: solve(*to)?, tool_yaw: to.yaw },
            Action::Twist { degrees } => {
                let d = degrees.to_radians();
                match &state.held {
                    Some(held) => {
                        let obj = &world.objects[&held.object_id];
                        let turned = Pose::new(obj.pose.x, obj.pose.y, obj.pose.z, obj.pose.yaw + d);
                        let grip = turned.transform_point(&vec3(&held.local));
                        let tool_yaw = normalize_angle(state.tool_yaw + d);
                        ArmConfig { joints: solve(Pose::from_position(grip, tool_yaw))?, tool_yaw }
                    }
                    None => ArmConfig { joints: state.joints, tool_yaw: normalize_angle(state.tool_yaw + d) },
                }
            }
            Action::Pick { object, grasp } => {
                if let Some(h) = &state.held {
                    return Err(grasp_fault(object, format!("already holding {}", h.object_id)));
                }
                let Some(obj) = world.objects.get(object) else {
                    return Err(grasp_fault(object, "no such object".into()));
                };
                if !obj.graspable {
                    return Err(grasp_fault(object, format!("{} is not graspable", obj.kind)));
                }
                let (handle, offset) = match grasp {
                    Some(Grasp::Handle(h)) => (Some(h.as_str()), None),
                    Some(Grasp::Offset(s)) => (None, Some(*s)),
                    None => (None, None),
                };
                let (world_point, local, s) = grasp_point(obj, handle, offset).map_err(|r| grasp_fault(object, r))?;
                let tool_yaw = obj.pose.yaw;
                let joints = solve(Pose::from_position(world_point, tool_yaw))?;
                plan.picking.insert(
                    agent.clone(),
                    Held { object_id: object.clone(), grasp_offset: s, local: [local.x, local.y, local.z] },
                );
                ArmConfig { joints, tool_yaw }
            }
            Action::Place { object, at } => {
                let Some(held) = state.held.as_ref().filter(|h| h.object_id == *object) else {
                    return Err(grasp_fault(object, "not holding it".into()));
                };
                for other in world.holders(object) {
                    let places_too = matches!(actions.get(other), Some(Action::Place { object: o, .. }) if o == object);
                    if other != agent && !places_too {
                        return Err(grasp_fault(object, format!("co-holder {other} does not place it in the same step")));
                    }
                }
                let grip = at.transform_point(&vec3(&held.local));
                plan.placing.insert(agent.clone(), (object.clone(), *at));
                ArmConfig { joints: solve(Pose::from_position(grip, at.yaw))?, tool_yaw: at.yaw }
            }
        };
        plan.targets.insert(agent.clone(), target);
    }
    Ok(plan)
}

/// Poses of every held object when the arms are at `configs`. The holders
/// are those of `world` (the start of the step). A held object follows its
/// primary holder (lowest agent id) rigidly; a co-held rope is a straight rod
/// through both grasp points; a held door swings about its hinge.
pub(crate) fn pose_held_objects(
    world: &WorldState,
    task: &TaskSpec,
    configs: &BTreeMap<AgentId, ArmConfig>,
) -> Result<BTreeMap<ObjectId, SceneObject>, StepFault> {
    let mut objects = world.objects.clone();
    let mut holders: BTreeMap<&ObjectId, Vec<(&AgentId, &Held)>> = BTreeMap::new();
    for (agent, state) in &world.arm_states {
        if let Some(h) = &state.held {
            holders.entry(&h.object_id).or_default().push((agent, h));
        }
    }
    let tip = |agent: &AgentId| -> Vector3<f64> {
        let arm = task.arm(agent).expect("holders are task agents");
        forward_kinematics(arm, &configs[agent].joints).position()
    };
    for (object_id, hs) in holders {
        let Some(obj) = objects.get_mut(object_id) else { continue };
        let (primary, held) = hs[0];
        let e = tip(primary);
        match (obj.kind, &obj.geometry) {
            (ObjectKind::Rope, Geometry::Capsule { radius, .. }) if hs.len() >= 2 => {
                let (second, held_b) = hs[1];
                let (ga, gb) = (e, tip(second));
                let (sa, sb) = (held.grasp_offset, held_b.grasp_offset);
                let span = (gb - ga).norm();
                let max = (sb - sa).abs();
                if span > max + ROPE_STRETCH_TOLERANCE {
                    return Err(StepFault::Overstretch { length: span, max });
                }
                let len = axial_length(&obj.geometry);
                let dir = if span > 1e-12 {
                    (gb - ga) / span * if sb >= sa { 1.0 } else { -1.0 }
                } else {
                    obj.pose.transform_point(&axis_point(&obj.geometry, len)) - obj.pose.transform_point(&axis_point(&obj.geometry, 0.0))
                }
                .normalize();
                let p0 = ga - dir * sa;
                let mid = p0 + dir * (len / 2.0);
                let yaw = if dir.x.hypot(dir.y) > 1e-9 { dir.y.atan2(dir.x) } else { obj.pose.yaw };
                let pose = Pose::from_position(mid, yaw);
                let local0 = pose.inverse_transform_point(&p0);
                obj.pose = pose;
                obj.geometry = Geometry::Capsule {
                    p0: [local0.x, local0.y, local0.z],
                    p1: [-local0.x, -local0.y, -local0.z],
                    radius: *radius,
                };
            }
            (ObjectKind::Door, Geometry::Box { half_extents }) => {
                let hx = half_extents[0];
                let hinge = obj.pose.transform_point(&Vector3::new(-hx, 0.0, 0.0));
                let arm_vec = vec3(&held.local) - Vector3::new(-hx, 0.0, 0.0);
                let (dx, dy) = (e.x - hinge.x, e.y - hinge.y);
                let yaw = if dx.hypot(dy) > 1e-9 && arm_vec.x.hypot(arm_vec.y) > 1e-9 {
                    dy.atan2(dx) - arm_vec.y.atan2(arm_vec.x)
                } else {
                    obj.pose.yaw
                };
                let centre = Pose::new(hinge.x, hinge.y, obj.pose.z, yaw).transform_point(&Vector3::new(hx, 0.0, 0.0));
                obj.pose = Pose::new(centre.x, centre.y, obj.pose.z, yaw);
            }
            _ => {
                let yaw = configs[primary].tool_yaw;
                let rotated = Pose::new(0.0, 0.0, 0.0, yaw).transform_point(&vec3(&held.local));
                obj.pose = Pose::from_position(e - rotated, yaw);
            }
        }
    }
    Ok(objects)
}

/// End-of-step bookkeeping: arms at their targets, held objects posed,
/// co-holder grips checked, then releases and new grasps applied.
pub(crate) fn finish_step(world: &WorldState, task: &TaskSpec, plan: &StepPlan) -> Result<WorldState, StepFault> {
    let mut next = world.clone();
    next.objects = pose_held_objects(world, task, &plan.targets)?;

    let tip = |agent: &AgentId| {
        forward_kinematics(task.arm(agent).expect("task agent"), &plan.targets[agent].joints).position()
    };
    // grip check: every holder of a rigid object must still be at its grasp point
    for (agent, state) in &world.arm_states {
        let Some(held) = &state.held else { continue };
        let obj = &next.objects[&held.object_id];
        let holders = world.holders(&held.object_id);
        let rope_pair = obj.kind == ObjectKind::Rope && holders.len() >= 2;
        if rope_pair || (holders[0] == agent && obj.kind != ObjectKind::Door) {
            continue;
        }
        let drift = (obj.pose.transform_point(&vec3(&held.local)) - tip(agent)).norm();
        if drift > CO_HOLD_SLACK {
            return Err(StepFault::Grasp {
                agent_id: agent.clone(),
                object_id: held.object_id.clone(),
                reason: format!("gripper drifted {drift:.3} m from its grasp point"),
            });
        }
    }
    // co-placers must agree on the final pose
    for (agent, (object, at)) in &plan.placing {
        let primary = world.holders(object)[0];
        let (_, lead) = &plan.placing[primary];
        let off = (at.position() - lead.position()).norm();
        if off > CO_HOLD_SLACK || normalize_angle(at.yaw - lead.yaw).abs() > CO_HOLD_SLACK {
            return Err(StepFault::Grasp {
                agent_id: agent.clone(),
                object_id: object.clone(),
                reason: format!("placement disagrees with {primary}'s by {off:.3} m"),
            });
        }
    }

    for (agent, state) in next.arm_states.iter_mut() {
        let target = plan.targets[agent];
        let moved = target.joints != state.joints;
        state.joints = target.joints;
        state.tool_yaw = target.tool_yaw;
        if moved {
            state.contact = None;
        }
        // a co-held rope re-anchors both grips on the straightened rod
        if let Some(held) = state.held.as_mut() {
            let obj = &next.objects[&held.object_id];
            if obj.kind == ObjectKind::Rope && world.holders(&held.object_id).len() >= 2 {
                let local = axis_point(&obj.geometry, held.grasp_offset);
                held.local = [local.x, local.y, local.z];
            }
        }
    }
    for (agent, (object, at)) in &plan.placing {
        let primary = world.holders(object)[0];
        if primary == agent {
            next.objects.get_mut(object).expect("held object exists").pose = *at;
        }
        release(next.arm_states.get_mut(agent).expect("agent"));
    }
    for agent in &plan.opening {
        release(next.arm_states.get_mut(agent).expect("agent"));
    }
    for agent in &plan.closing {
        next.arm_states.get_mut(agent).expect("agent").gripper = Gripper::Closed;
    }
    for (agent, held) in &plan.picking {
        let obj = &next.objects[&held.object_id];
        // the grip is re-measured on the object as it is now
        let local = vec3(&held.local);
        let s = axis_coordinate(&obj.geometry, &local);
        let state = next.arm_states.get_mut(agent).expect("agent");
        state.held = Some(Held { object_id: held.object_id.clone(), grasp_offset: s, local: held.local });
        state.gripper = Gripper::Closed;
        state.contact = None;
    }
    next.step_count += 1;
    next.done = check_success(&next, task);
    Ok(next)
}

fn release(state: &mut ArmState) {
    if let Some(h) = state.held.take() {
        state.contact = Some(h.object_id);
    }
    state.gripper = Gripper::Open;
}

/// Executes one validated joint step along its trajectories.
///
/// `trajectories` holds each agent's waypoints for this step; they must start
/// at the current joints and end at the action's target.
pub fn apply_joint_step(
    world: &WorldState,
    task: &TaskSpec,
    actions: &BTreeMap<AgentId, Action>,
    trajectories: &BTreeMap<AgentId, Vec<Waypoint>>,
) -> Result<(WorldState, StepOutcome), WorldError> {
    if world.step_count >= task.max_env_steps {
        return Err(WorldError::StepCap(task.max_env_steps));
    }
    let invalid = |fault: StepFault| {
        let (agent_id, reason) = fault.describe();
        WorldError::InvalidTransition { agent_id, reason }
    };
    let plan = resolve_step(world, task, actions).map_err(invalid)?;
    for (agent, target) in &plan.targets {
        let path = trajectories.get(agent).filter(|p| !p.is_empty()).ok_or_else(|| {
            WorldError::InvalidTransition { agent_id: agent.clone(), reason: "missing trajectory".into() }
        })?;
        let start = world.arm_states[agent].joints;
        if path[0].joints != start || path[path.len() - 1].joints != target.joints {
            return Err(WorldError::InvalidTransition {
                agent_id: agent.clone(),
                reason: "trajectory does not connect the current joints to the action target".into(),
            });
        }
    }
    let next = finish_step(world, task, &plan).map_err(invalid)?;
    let outcome = StepOutcome { step_count: next.step_count, success: next.done };
    Ok((next, outcome))
}

/// Re-derives held object poses from the current arm states.
pub fn settle_objects(world: &WorldState, task: &TaskSpec) -> WorldState {
    let configs = world
        .arm_states
        .iter()
        .map(|(a, s)| (a.clone(), ArmConfig { joints: s.joints, tool_yaw: s.tool_yaw }))
        .collect();
    let mut next = world.clone();
    if let Ok(objects) = pose_held_objects(world, task, &configs) {
        next.objects = objects;
    }
    next
}
