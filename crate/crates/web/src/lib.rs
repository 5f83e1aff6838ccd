//! Browser demo: check a plan against a task, run the scripted rope episode
//! with and without reflection, and sweep the rope grasp offset.
//!
//! Every export takes and returns plain strings (JSON for structured data)
//! so the page needs no generated TypeScript types. The same functions are
//! plain Rust and are tested natively.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use deskplan::llm::{FixtureRule, ScriptedBackend};
use deskplan::metacog::{run_episode, EpisodeOptions};
use deskplan::plan::{parse_plan, serialize_plan, Action, Grasp, JointPlan, PlanError};
use deskplan::skills::SkillLibrary;
use deskplan::validate::validate_joint_plan;
use deskplan::world::{load_task, reset, Pose, TaskSpec};

const TASKS: [(&str, &str, &str); 4] = [
    (
        "install_drywall",
        include_str!("../../../tasks/install_drywall.json"),
        include_str!("../../../fixtures/plans/install_drywall.plan"),
    ),
    ("move_rope", include_str!("../../../tasks/move_rope.json"), include_str!("../../../fixtures/plans/move_rope_end_grasp.plan")),
    (
        "arrange_cabinet",
        include_str!("../../../tasks/arrange_cabinet.json"),
        include_str!("../../../fixtures/plans/arrange_cabinet.plan"),
    ),
    ("make_sandwich", include_str!("../../../tasks/make_sandwich.json"), include_str!("../../../fixtures/plans/make_sandwich.plan")),
];

const ROPE_FIXTURE: &str = include_str!("../../../fixtures/move_rope_reflect.json");
const LIBRARY: &str = include_str!("../../../fixtures/skills/reference_library.json");

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn task(task_id: &str, seed: u64) -> Result<TaskSpec, String> {
    let (_, doc, _) = TASKS.iter().find(|(id, _, _)| *id == task_id).ok_or_else(|| format!("unknown task `{task_id}`"))?;
    Ok(load_task(doc).map_err(|e| e.to_string())?.with_seed(seed))
}

/// Ids of the bundled tasks as a JSON array.
#[wasm_bindgen]
pub fn task_ids() -> String {
    to_json(&TASKS.iter().map(|(id, _, _)| *id).collect::<Vec<_>>())
}

/// The shipped plan for a task, a starting point for editing. For the rope
/// task this is the end grasp that collides.
#[wasm_bindgen]
pub fn sample_plan(task_id: &str) -> String {
    TASKS.iter().find(|(id, _, _)| *id == task_id).map_or(String::new(), |(_, _, plan)| plan.to_string())
}

/// Parses `plan_text` and validates it from the task's reset state.
///
/// Returns `{"parse_error": {message, line, column}}` when the text does not
/// parse, else `{"canonical": text, "report": ValidationReport, "summary": text}`.
#[wasm_bindgen]
pub fn check_plan(task_id: &str, plan_text: &str, seed: u32) -> String {
    let task = match task(task_id, seed as u64) {
        Ok(t) => t,
        Err(e) => return json!({ "error": e }).to_string(),
    };
    let plan = match parse_plan(plan_text) {
        Ok(p) => p,
        Err(e) => {
            let (line, column) = match &e {
                PlanError::Parse { line, column, .. } | PlanError::UnknownVerb { line, column, .. } => (*line, *column),
                PlanError::DuplicateAgent { line, .. } => (*line, 1),
                PlanError::EmptyPlan => (1, 1),
            };
            return json!({ "parse_error": { "message": e.to_string(), "line": line, "column": column } }).to_string();
        }
    };
    let (report, _) = validate_joint_plan(&reset(&task), &task, &plan);
    let summary = match &report.failure {
        None => format!("valid: {} steps", report.checked_steps),
        Some(f) => f.to_string(),
    };
    json!({
        "canonical": serialize_plan(&plan).unwrap_or_default(),
        "report": report,
        "summary": summary,
    })
    .to_string()
}

/// Runs the rope episode against the scripted backend whose first plan
/// collides and whose reflection answer grasps inward. Returns the
/// EpisodeResult as JSON.
#[wasm_bindgen]
pub fn run_rope_episode(reflection: bool, retrieval: bool, seed: u32) -> String {
    let task = match task("move_rope", seed as u64) {
        Ok(t) => t,
        Err(e) => return json!({ "error": e }).to_string(),
    };
    let rules: Vec<FixtureRule> = serde_json::from_str(ROPE_FIXTURE).expect("bundled fixture parses");
    let mut backend = ScriptedBackend::new(rules);
    let mut library = SkillLibrary::from_json(LIBRARY).expect("bundled library loads");
    let options = EpisodeOptions {
        reflection_enabled: reflection,
        retrieval_enabled: retrieval,
        central_full_state: false,
        ingest_exemplars: false,
    };
    to_json(&run_episode(&task, Some(&mut library), &mut backend, &options))
}

/// The rope plan with alice grasping `offset` meters in from her end (0 is
/// the end handle), and its validation verdict.
pub fn rope_plan(task: &TaskSpec, offset: f64) -> JointPlan {
    let pose = |id: &str| task.initial_scene.iter().find(|o| o.id == id).expect("rope task objects").pose;
    let (rope, groove) = (pose("rope"), pose("groove"));
    let on = |p: &Pose, local_x: f64| (p.x + local_x * p.yaw.cos(), p.y + local_x * p.yaw.sin());
    let above = |(x, y): (f64, f64)| Action::Move { to: Pose::new(x, y, 0.2, 0.0) };
    let place = Action::Place { object: "rope".into(), at: Pose::new(groove.x, groove.y, 0.015, groove.yaw) };
    let arm = |local_x: f64, grasp: Grasp| {
        vec![
            above(on(&rope, local_x)),
            Action::Pick { object: "rope".into(), grasp: Some(grasp) },
            above(on(&rope, local_x)),
            above(on(&groove, local_x)),
            place.clone(),
        ]
    };
    let alice = if offset == 0.0 { Grasp::Handle("left_end".into()) } else { Grasp::Offset(offset) };
    JointPlan::from_actions([("alice", arm(-0.3 + offset, alice)), ("bob", arm(0.3, Grasp::Handle("right_end".into())))])
}

/// `{"plan": text, "ok": bool, "summary": text}` for one grasp offset.
#[wasm_bindgen]
pub fn rope_offset(offset: f64, seed: u32) -> String {
    let task = match task("move_rope", seed as u64) {
        Ok(t) => t,
        Err(e) => return json!({ "error": e }).to_string(),
    };
    let offset = offset.clamp(0.0, 0.3);
    let plan = rope_plan(&task, offset);
    let (report, _) = validate_joint_plan(&reset(&task), &task, &plan);
    json!({
        "plan": serialize_plan(&plan).unwrap_or_default(),
        "ok": report.ok,
        "summary": report.failure.map_or("valid".to_string(), |f| f.to_string()),
    })
    .to_string()
}
