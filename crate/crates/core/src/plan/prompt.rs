use serde::{Deserialize, Serialize};

use crate::metacog::MetaInput;
use crate::world::{Gripper, Observation};

/// Agent label of prompts that cover every agent at once.
pub const CENTRAL: &str = "CENTRAL";

pub const NO_VISIBLE_OBJECTS: &str = "no visible objects";

/// Grammar reminder carried by every prompt.
pub const FORMAT_TEXT: &str = "\
Respond only with PLAN lines, one per agent, in this grammar:
  plan-line = \"PLAN\" agent-id \":\" action { \"->\" action }
  action    = \"PICK\" obj [ \"HANDLE\" id | \"OFFSET\" number ]
            | \"PLACE\" obj \"AT\" pose | \"MOVE\" \"TO\" pose | \"TWIST\" number
            | \"OPEN\" | \"CLOSE\" | \"WAIT\"
  pose      = \"(\" x \",\" y \",\" z [ \",\" yaw ] \")\"
Positions are meters, yaw is radians (default 0), TWIST is degrees in [-180, 180].
Action k of every agent runs in the same step; shorter plans are padded with WAIT.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub agent_id: String,
    pub sections: Vec<(String, String)>,
    pub rendered: String,
}

impl PromptBundle {
    pub fn new(agent_id: &str, sections: Vec<(String, String)>) -> Self {
        let rendered = sections.iter().map(|(label, text)| format!("[{label}]\n{text}\n")).collect::<Vec<_>>().join("\n");
        PromptBundle { agent_id: agent_id.to_string(), sections, rendered }
    }

    pub fn section(&self, label: &str) -> Option<&str> {
        self.sections.iter().find(|(l, _)| l == label).map(|(_, t)| t.as_str())
    }
}

/// Fixed 3-decimal rendering without a negative zero.
pub fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// One line per visible object, sorted by id, then the agent's own arm.
pub fn render_observation(o: &Observation) -> String {
    let mut objects: Vec<_> = o.visible_objects.iter().collect();
    objects.sort_by(|a, b| a.id.cmp(&b.id));
    let mut lines: Vec<String> = objects
        .iter()
        .map(|v| {
            let p = v.pose;
            format!("{} {} at ({},{},{},{})", v.id, v.kind, fmt3(p.x), fmt3(p.y), fmt3(p.z), fmt3(p.yaw))
        })
        .collect();
    if lines.is_empty() {
        lines.push(NO_VISIBLE_OBJECTS.to_string());
    }
    let arm = &o.own_arm;
    let gripper = match arm.gripper {
        Gripper::Open => "open",
        Gripper::Closed => "closed",
    };
    let held = arm.held.as_ref().map_or("nothing".to_string(), |h| h.object_id.clone());
    lines.push(format!(
        "arm joints ({},{},{}) gripper {gripper} holding {held} reach {}",
        fmt3(arm.joints[0]),
        fmt3(arm.joints[1]),
        fmt3(arm.joints[2]),
        fmt3(o.reachable_radius)
    ));
    lines.push(format!("step {}", o.step_count));
    lines.join("\n")
}

/// `p = f(g, o, r)` for one agent. `meta` is `None` when the guidance input
/// is switched off, which drops the META section.
pub fn render_prompt(goal: &str, o: &Observation, meta: Option<&MetaInput>) -> PromptBundle {
    let mut sections = vec![
        ("GOAL".to_string(), goal.to_string()),
        ("OBSERVATION".to_string(), render_observation(o)),
    ];
    if let Some(r) = meta {
        sections.push(("META".to_string(), r.render()));
    }
    sections.push(("FORMAT".to_string(), FORMAT_TEXT.to_string()));
    PromptBundle::new(&o.agent_id, sections)
}

/// A single prompt covering every agent: goals and observations are listed
/// per agent in id order.
pub fn render_central_prompt(agents: &[(&str, &Observation)], meta: Option<&MetaInput>) -> PromptBundle {
    let goal = agents.iter().map(|(g, o)| format!("{}: {g}", o.agent_id)).collect::<Vec<_>>().join("\n");
    let observation = agents
        .iter()
        .map(|(_, o)| format!("{}:\n{}", o.agent_id, render_observation(o)))
        .collect::<Vec<_>>()
        .join("\n");
    let mut sections = vec![("GOAL".to_string(), goal), ("OBSERVATION".to_string(), observation)];
    if let Some(r) = meta {
        sections.push(("META".to_string(), r.render()));
    }
    sections.push(("FORMAT".to_string(), FORMAT_TEXT.to_string()));
    PromptBundle::new(CENTRAL, sections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{ArmState, ObjectKind, Pose, VisibleObject};

    fn obs(objects: Vec<VisibleObject>) -> Observation {
        Observation {
            agent_id: "alice".into(),
            visible_objects: objects,
            own_arm: ArmState {
                joints: [0.0, 0.5, 0.0],
                tool_yaw: 0.0,
                gripper: Gripper::Open,
                held: None,
                contact: None,
            },
            reachable_radius: 0.9,
            step_count: 0,
        }
    }

    fn vis(id: &str, x: f64) -> VisibleObject {
        VisibleObject { id: id.into(), pose: Pose::new(x, 0.0, 0.0, 0.0), kind: ObjectKind::Cup }
    }

    #[test]
    fn empty_visibility_sentinel() {
        assert!(render_observation(&obs(vec![])).starts_with("no visible objects\n"));
    }

    #[test]
    fn three_decimals_sorted_by_id() {
        let text = render_observation(&obs(vec![vis("mug", -0.00001), vis("cup", 0.1234)]));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "cup cup at (0.123,0.000,0.000,0.000)");
        assert_eq!(lines[1], "mug cup at (0.000,0.000,0.000,0.000)");
    }

    #[test]
    fn prompt_sections_in_order() {
        let b = render_prompt("lift it", &obs(vec![]), None);
        let labels: Vec<&str> = b.sections.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["GOAL", "OBSERVATION", "FORMAT"]);
        assert!(b.rendered.starts_with("[GOAL]\nlift it\n"));
        assert!(b.section("FORMAT").unwrap().contains("PLAN lines"));
        assert_eq!(b, render_prompt("lift it", &obs(vec![]), None));
    }
}
