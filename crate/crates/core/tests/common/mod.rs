#![allow(dead_code)]

use std::path::PathBuf;

use deskplan::llm::ScriptedBackend;
use deskplan::plan::{parse_plan, JointPlan};
use deskplan::world::{load_task, TaskSpec};

pub fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn task(name: &str) -> TaskSpec {
    load_task(&std::fs::read_to_string(repo(&format!("tasks/{name}.json"))).unwrap()).unwrap()
}

pub fn plan(name: &str) -> JointPlan {
    parse_plan(&std::fs::read_to_string(repo(&format!("fixtures/plans/{name}.plan"))).unwrap()).unwrap()
}

pub fn scripted(name: &str) -> ScriptedBackend {
    ScriptedBackend::load(&repo(&format!("fixtures/{name}"))).unwrap()
}

pub const TASKS: [(&str, &str); 4] = [
    ("install_drywall", "drywall_ok.json"),
    ("move_rope", "move_rope_ok.json"),
    ("arrange_cabinet", "cabinet_ok.json"),
    ("make_sandwich", "sandwich_ok.json"),
];
