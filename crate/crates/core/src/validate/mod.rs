//! The validation check run before any plan touches the world: IK for every
//! action target, joint-space interpolation, lockstep collision sweeps and
//! rope length constraints, reported as structured failure feedback.

pub mod collision;
pub mod kinematics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use collision::{check_collision_with, Entity, EntityId, PlacedShape};
use kinematics::{forward_kinematics, interpolate, link_points, resample, IkFailure, JointConfig};

use crate::normalize_angle;
use crate::plan::JointPlan;
use crate::world::sim::{finish_step, pose_held_objects, resolve_step, ArmConfig, StepFault, StepPlan};
use crate::world::{object_shapes, AgentId, ArmModel, ObjectId, Pose, SceneObject, TaskSpec, WorldState};

/// What went wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "nature")]
pub enum FailureNature {
    Collision { a: EntityId, b: EntityId, position: Pose },
    #[serde(rename = "IKInfeasible")]
    IkInfeasible { agent_id: AgentId, target: Pose, reason: IkFailure },
    RopeOverstretch { length: f64, max: f64 },
    GraspError { agent_id: AgentId, object_id: ObjectId, reason: String },
    /// The plan does not name exactly the task's agents.
    AgentMismatch { agent_id: AgentId, reason: String },
}

impl FailureNature {
    pub fn name(&self) -> &'static str {
        match self {
            FailureNature::Collision { .. } => "Collision",
            FailureNature::IkInfeasible { .. } => "IKInfeasible",
            FailureNature::RopeOverstretch { .. } => "RopeOverstretch",
            FailureNature::GraspError { .. } => "GraspError",
            FailureNature::AgentMismatch { .. } => "AgentMismatch",
        }
    }
}

/// Failure nature plus where in the plan it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureFeedback {
    #[serde(flatten)]
    pub nature: FailureNature,
    pub step_index: usize,
    pub waypoint_index: usize,
}

impl FailureFeedback {
    /// The stable JSON record embedded in reflection prompts and transcripts.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("feedback always serializes")
    }

    /// Words describing the failure, used to steer skill retrieval.
    pub fn keywords(&self) -> Vec<&'static str> {
        match &self.nature {
            FailureNature::Collision { .. } => vec!["collision", "avoidance", "spaced", "path"],
            FailureNature::IkInfeasible { reason, .. } => vec!["ik", "infeasible", reason.as_str()],
            FailureNature::RopeOverstretch { .. } => vec!["rope", "overstretch", "length"],
            FailureNature::GraspError { .. } => vec!["grasp", "error", "grasping"],
            FailureNature::AgentMismatch { .. } => vec!["agent", "mismatch"],
        }
    }
}

impl fmt::Display for FailureFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = format!("step {} waypoint {}", self.step_index, self.waypoint_index);
        match &self.nature {
            FailureNature::Collision { a, b, position } => write!(f, "Collision between {a} and {b} at {position} ({at})"),
            FailureNature::IkInfeasible { agent_id, target, reason } => {
                write!(f, "IKInfeasible for {agent_id}: target {target} {} ({at})", reason.as_str())
            }
            FailureNature::RopeOverstretch { length, max } => {
                write!(f, "RopeOverstretch: {length:.3} m between grasps, max {max:.3} m ({at})")
            }
            FailureNature::GraspError { agent_id, object_id, reason } => {
                write!(f, "GraspError for {agent_id} on {object_id}: {reason} ({at})")
            }
            FailureNature::AgentMismatch { agent_id, reason } => write!(f, "AgentMismatch for {agent_id}: {reason} ({at})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub failure: Option<FailureFeedback>,
    pub checked_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub joints: JointConfig,
    /// End-effector position with the tool heading.
    pub ee: Pose,
}

/// Waypoints per environment step; each step starts where the previous ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub agent_id: AgentId,
    pub steps: Vec<Vec<Waypoint>>,
}

/// Collision body of an arm: one capsule per link.
pub fn arm_entity(arm: &ArmModel, q: &JointConfig) -> Entity {
    let [shoulder, elbow, tip] = link_points(arm, q);
    Entity::new(
        EntityId::arm(arm.agent_id.clone()),
        vec![
            PlacedShape::Capsule { p0: shoulder, p1: elbow, radius: arm.capsule_radius },
            PlacedShape::Capsule { p0: elbow, p1: tip, radius: arm.capsule_radius },
        ],
    )
}

/// Every collision body at one instant: arms at `configs` and solid objects.
pub fn scene_entities(
    task: &TaskSpec,
    configs: &BTreeMap<AgentId, JointConfig>,
    objects: &BTreeMap<ObjectId, SceneObject>,
) -> Vec<Entity> {
    let mut out: Vec<Entity> = task.arms.iter().map(|arm| arm_entity(arm, &configs[&arm.agent_id])).collect();
    out.extend(
        objects
            .values()
            .filter(|o| o.kind.is_solid())
            .map(|o| Entity::new(EntityId::object(o.id.clone()), object_shapes(o))),
    );
    out
}

/// Pairs left out of the sweep in a given step: an arm and what it holds,
/// picks up or still touches after a release; two resting objects.
struct Exemptions {
    /// (agent, object) pairs that may touch.
    touching: BTreeSet<(AgentId, ObjectId)>,
    held: BTreeSet<ObjectId>,
}

impl Exemptions {
    fn new(world: &WorldState, plan: &StepPlan) -> Self {
        let mut touching = BTreeSet::new();
        let mut held = BTreeSet::new();
        for (agent, state) in &world.arm_states {
            if let Some(h) = &state.held {
                touching.insert((agent.clone(), h.object_id.clone()));
                held.insert(h.object_id.clone());
            }
            if let Some(c) = &state.contact {
                touching.insert((agent.clone(), c.clone()));
            }
        }
        for (agent, h) in &plan.picking {
            touching.insert((agent.clone(), h.object_id.clone()));
        }
        Exemptions { touching, held }
    }

    fn skip(&self, x: &EntityId, y: &EntityId) -> bool {
        match (x, y) {
            (EntityId::Arm(a), EntityId::Object(o)) | (EntityId::Object(o), EntityId::Arm(a)) => {
                self.touching.contains(&(a.clone(), o.clone()))
            }
            (EntityId::Object(p), EntityId::Object(q)) => !self.held.contains(p) && !self.held.contains(q),
            (EntityId::Arm(_), EntityId::Arm(_)) => false,
        }
    }
}

fn feedback(nature: FailureNature, step_index: usize, waypoint_index: usize) -> FailureFeedback {
    FailureFeedback { nature, step_index, waypoint_index }
}

fn fault_feedback(fault: StepFault, step_index: usize, waypoint_index: usize) -> FailureFeedback {
    let nature = match fault {
        StepFault::Ik { agent_id, target, reason } => FailureNature::IkInfeasible { agent_id, target, reason },
        StepFault::Grasp { agent_id, object_id, reason } => FailureNature::GraspError { agent_id, object_id, reason },
        StepFault::Overstretch { length, max } => FailureNature::RopeOverstretch { length, max },
        StepFault::Agent { agent_id, reason } => FailureNature::AgentMismatch { agent_id, reason },
    };
    feedback(nature, step_index, waypoint_index)
}

/// Simulates `plan` from `world` without touching it. The first failure in
/// step order, then waypoint order, is reported; on success the per-agent
/// trajectories for execution are returned.
pub fn validate_joint_plan(
    world: &WorldState,
    task: &TaskSpec,
    plan: &JointPlan,
) -> (ValidationReport, BTreeMap<AgentId, Trajectory>) {
    let mut trajectories: BTreeMap<AgentId, Trajectory> = task
        .arms
        .iter()
        .map(|a| (a.agent_id.clone(), Trajectory { agent_id: a.agent_id.clone(), steps: vec![] }))
        .collect();
    let fail = |f: FailureFeedback, checked: usize| {
        (ValidationReport { ok: false, failure: Some(f), checked_steps: checked }, BTreeMap::new())
    };

    for agent in plan.plans.keys() {
        if task.arm(agent).is_none() {
            let nature = FailureNature::AgentMismatch { agent_id: agent.clone(), reason: "not an agent of this task".into() };
            return fail(feedback(nature, 0, 0), 0);
        }
    }
    for arm in &task.arms {
        if !plan.plans.contains_key(&arm.agent_id) {
            let nature =
                FailureNature::AgentMismatch { agent_id: arm.agent_id.clone(), reason: "missing from the plan".into() };
            return fail(feedback(nature, 0, 0), 0);
        }
    }

    let mut sim = world.clone();
    for k in 0..plan.len() {
        let actions = plan.step(k);
        let step = match resolve_step(&sim, task, &actions) {
            Ok(s) => s,
            Err(fault) => return fail(fault_feedback(fault, k, 0), k),
        };

        let mut paths: BTreeMap<&AgentId, Vec<JointConfig>> = BTreeMap::new();
        for arm in &task.arms {
            let from = sim.arm_states[&arm.agent_id].joints;
            paths.insert(&arm.agent_id, interpolate(&from, &step.targets[&arm.agent_id].joints, arm));
        }
        let n = paths.values().map(Vec::len).max().unwrap_or(1);
        let paths: BTreeMap<&AgentId, Vec<JointConfig>> = paths.into_iter().map(|(a, p)| (a, resample(&p, n))).collect();

        let exempt = Exemptions::new(&sim, &step);
        for i in 0..n {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 1.0 };
            let configs: BTreeMap<AgentId, ArmConfig> = paths
                .iter()
                .map(|(a, p)| {
                    let from = sim.arm_states[*a].tool_yaw;
                    let to = step.targets[*a].tool_yaw;
                    let yaw = if i == n - 1 { to } else { from + normalize_angle(to - from) * t };
                    ((*a).clone(), ArmConfig { joints: p[i], tool_yaw: yaw })
                })
                .collect();
            let objects = match pose_held_objects(&sim, task, &configs) {
                Ok(o) => o,
                Err(fault) => return fail(fault_feedback(fault, k, i), k),
            };
            let joints = configs.iter().map(|(a, c)| (a.clone(), c.joints)).collect();
            let entities = scene_entities(task, &joints, &objects);
            if let Some(c) = check_collision_with(&entities, |x, y| exempt.skip(x, y)) {
                let nature = FailureNature::Collision { a: c.a, b: c.b, position: Pose::from_position(c.position, 0.0) };
                return fail(feedback(nature, k, i), k);
            }
        }

        for arm in &task.arms {
            let from = sim.arm_states[&arm.agent_id].tool_yaw;
            let to = step.targets[&arm.agent_id].tool_yaw;
            let waypoints = paths[&arm.agent_id]
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 1.0 };
                    let yaw = if i == n - 1 { to } else { from + normalize_angle(to - from) * t };
                    Waypoint { joints: *q, ee: Pose::from_position(forward_kinematics(arm, q).position(), yaw) }
                })
                .collect();
            trajectories.get_mut(&arm.agent_id).expect("task agent").steps.push(waypoints);
        }
        sim = match finish_step(&sim, task, &step) {
            Ok(next) => next,
            Err(fault) => return fail(fault_feedback(fault, k, n - 1), k),
        };
    }
    (ValidationReport { ok: true, failure: None, checked_steps: plan.len() }, trajectories)
}
