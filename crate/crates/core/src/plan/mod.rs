//! The plan action language: actions, step-aligned joint plans, the line
//! parser for backend responses, the canonical serializer and prompt assembly.

mod parse;
mod prompt;

pub use parse::{parse_plan, serialize_plan, PlanError};
pub use prompt::{
    render_central_prompt, render_observation, render_prompt, PromptBundle, CENTRAL, FORMAT_TEXT,
    NO_VISIBLE_OBJECTS,
};
pub use prompt::fmt3;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::world::{AgentId, ObjectId, Pose};

/// Where a PICK takes hold of an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grasp {
    Handle(String),
    /// Meters along the object's axis from its first end.
    Offset(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum Action {
    Pick { object: ObjectId, grasp: Option<Grasp> },
    Place { object: ObjectId, at: Pose },
    Move { to: Pose },
    Twist { degrees: f64 },
    Open,
    Close,
    Wait,
}

fn num(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v}")
}

fn pose_text(p: &Pose) -> String {
    format!("({},{},{},{})", num(p.x), num(p.y), num(p.z), num(p.yaw))
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Pick { object, grasp: None } => write!(f, "PICK {object}"),
            Action::Pick { object, grasp: Some(Grasp::Handle(h)) } => write!(f, "PICK {object} HANDLE {h}"),
            Action::Pick { object, grasp: Some(Grasp::Offset(s)) } => {
                write!(f, "PICK {object} OFFSET {}", num(*s))
            }
            Action::Place { object, at } => write!(f, "PLACE {object} AT {}", pose_text(at)),
            Action::Move { to } => write!(f, "MOVE TO {}", pose_text(to)),
            Action::Twist { degrees } => write!(f, "TWIST {}", num(*degrees)),
            Action::Open => f.write_str("OPEN"),
            Action::Close => f.write_str("CLOSE"),
            Action::Wait => f.write_str("WAIT"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPlan {
    pub agent_id: AgentId,
    pub actions: Vec<Action>,
}

/// Per-agent action lists; action `k` of every agent runs in the same
/// environment step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointPlan {
    pub plans: BTreeMap<AgentId, AgentPlan>,
}

impl JointPlan {
    pub fn from_actions<I, S>(plans: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<Action>)>,
        S: Into<AgentId>,
    {
        let mut plan = JointPlan::default();
        for (agent, actions) in plans {
            let agent_id = agent.into();
            plan.plans.insert(agent_id.clone(), AgentPlan { agent_id, actions });
        }
        plan.pad();
        plan
    }

    /// Number of environment steps.
    pub fn len(&self) -> usize {
        self.plans.values().map(|p| p.actions.len()).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends WAITs so that every agent has the same number of actions.
    pub fn pad(&mut self) {
        let n = self.len();
        for p in self.plans.values_mut() {
            p.actions.resize(n, Action::Wait);
        }
    }

    /// The actions of step `k`, WAIT for agents whose list is shorter.
    pub fn step(&self, k: usize) -> BTreeMap<AgentId, Action> {
        self.plans
            .iter()
            .map(|(a, p)| (a.clone(), p.actions.get(k).cloned().unwrap_or(Action::Wait)))
            .collect()
    }

    /// The plan from step `k` on.
    pub fn suffix(&self, k: usize) -> JointPlan {
        let plans = self
            .plans
            .iter()
            .map(|(a, p)| {
                let actions = p.actions.iter().skip(k).cloned().collect();
                (a.clone(), AgentPlan { agent_id: a.clone(), actions })
            })
            .collect();
        JointPlan { plans }
    }

    /// Object ids mentioned by any action.
    pub fn objects(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .plans
            .values()
            .flat_map(|p| p.actions.iter())
            .filter_map(|a| match a {
                Action::Pick { object, .. } | Action::Place { object, .. } => Some(object.as_str()),
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}
