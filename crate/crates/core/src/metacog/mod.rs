//! The metacognitive loop: stage-tagged guidance input for each prompt, plan
//! synthesis with bounded re-prompts on parse errors, reflection on
//! validation failures and the episode state machine.

mod episode;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use episode::{
    record_episode, replay_episode, run_episode, EpisodeError, EpisodeErrorKind, EpisodeOptions, EpisodeResult,
    ReflectionRecord, ReplayError, TranscriptHeader, task_summary,
};

use crate::llm::{BackendError, ChatBackend, ChatMessage};
use crate::plan::{
    fmt3, parse_plan, render_central_prompt, render_observation, serialize_plan, JointPlan, PromptBundle,
};
use crate::skills::{Exemplar, Retrieved, SkillLibrary, DEFAULT_TOP_K};
use crate::validate::FailureFeedback;
use crate::world::{AgentId, Observation, TaskSpec};

pub const SYSTEM_PROMPT: &str = "You plan motions for robot arms that share one desk workspace. \
Every arm acts once per environment step. Plans are checked for reachability, collisions and \
grasp constraints before they run.";

pub const CONSTRUCTION_INSTRUCTION: &str = "Name the manipulation skills this demonstration relies on: the \
task-specific ones and the modular ones that would carry over to other tasks.";

pub const SKILL_FORMAT: &str = "Respond with one line per skill:\n  SKILL <snake_case_name>: <one sentence description>";

pub const INFERENCE_CUES: &str = "Decide which of the retrieved modular skills apply to the current task, \
and reuse the parts of their exemplars that fit the scene.";

pub const UNAIDED_CUES: &str = "No prior skills are available. Plan from the goals and observations alone.";

/// Parse failures tolerated per synthesis before giving up.
pub const MAX_REPROMPTS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Construction,
    Inference,
    Reflection,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Construction => "construction",
            Stage::Inference => "inference",
            Stage::Reflection => "reflection",
        }
    }
}

/// The guidance signal embedded in a prompt, one variant per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum MetaInput {
    Construction {
        exemplars: Vec<Exemplar>,
        instruction: String,
    },
    Inference {
        attention_cues: String,
        retrieved: Vec<Retrieved>,
    },
    Reflection {
        failure: FailureFeedback,
        suspected_skills: Vec<String>,
        prior_plan: String,
        attempt_index: u32,
        /// Clusters retrieved again with the failure words added to the query.
        retrieved: Vec<Retrieved>,
    },
}

/// What each stage is built from.
#[derive(Debug, Clone)]
pub enum MetaContext<'a> {
    Construction {
        exemplars: &'a [Exemplar],
    },
    Inference {
        retrieved: Vec<Retrieved>,
    },
    Reflection {
        failure: &'a FailureFeedback,
        prior: Option<&'a MetaInput>,
        prior_plan: &'a JointPlan,
        attempt_index: u32,
        retrieved: Vec<Retrieved>,
    },
}

pub fn build_meta_input(context: MetaContext<'_>) -> MetaInput {
    match context {
        MetaContext::Construction { exemplars } => {
            MetaInput::Construction { exemplars: exemplars.to_vec(), instruction: CONSTRUCTION_INSTRUCTION.to_string() }
        }
        MetaContext::Inference { retrieved } => {
            let cues = if retrieved.is_empty() { UNAIDED_CUES } else { INFERENCE_CUES };
            MetaInput::Inference { attention_cues: cues.to_string(), retrieved }
        }
        MetaContext::Reflection { failure, prior, prior_plan, attempt_index, retrieved } => MetaInput::Reflection {
            failure: failure.clone(),
            suspected_skills: prior.map(|p| p.retrieved().iter().map(|r| r.cluster.cluster_id.clone()).collect()).unwrap_or_default(),
            prior_plan: serialize_plan(prior_plan).unwrap_or_default(),
            attempt_index,
            retrieved,
        },
    }
}

fn render_exemplar(out: &mut Vec<String>, e: &Exemplar, indent: &str) {
    out.push(format!("{indent}exemplar {} ({}): {}", e.exemplar_id, e.source_task.as_str(), e.task_summary));
    out.extend(e.demonstration.lines().map(|l| format!("{indent}  {l}")));
}

fn render_retrieved(out: &mut Vec<String>, retrieved: &[Retrieved]) {
    for r in retrieved {
        out.push(format!("skill {} ({}, score {})", r.cluster.canonical_name, r.cluster.cluster_id, fmt3(r.score)));
        for e in &r.exemplars {
            render_exemplar(out, e, "  ");
        }
    }
}

impl MetaInput {
    pub fn stage(&self) -> Stage {
        match self {
            MetaInput::Construction { .. } => Stage::Construction,
            MetaInput::Inference { .. } => Stage::Inference,
            MetaInput::Reflection { .. } => Stage::Reflection,
        }
    }

    pub fn retrieved(&self) -> &[Retrieved] {
        match self {
            MetaInput::Construction { .. } => &[],
            MetaInput::Inference { retrieved, .. } | MetaInput::Reflection { retrieved, .. } => retrieved,
        }
    }

    /// Text of the META prompt section.
    pub fn render(&self) -> String {
        let mut out = vec![];
        match self {
            MetaInput::Construction { exemplars, instruction } => {
                out.push(instruction.clone());
                for e in exemplars {
                    render_exemplar(&mut out, e, "");
                }
            }
            MetaInput::Inference { attention_cues, retrieved } => {
                out.push(attention_cues.clone());
                render_retrieved(&mut out, retrieved);
            }
            MetaInput::Reflection { failure, suspected_skills, prior_plan, attempt_index, retrieved } => {
                out.push(format!("Reflection attempt {attempt_index}: the previous plan failed the validation check."));
                out.push(format!("failure: {}", failure.to_record()));
                out.push(format!("where: {failure}"));
                if suspected_skills.is_empty() {
                    out.push("suspected skills: none retrieved".to_string());
                } else {
                    out.push(format!("suspected skills: {}", suspected_skills.join(", ")));
                }
                out.push(
                    "Reason about which modular skills were missing or misapplied, then give a corrected plan."
                        .to_string(),
                );
                out.push("previous plan:".to_string());
                out.extend(prior_plan.lines().map(|l| format!("  {l}")));
                render_retrieved(&mut out, retrieved);
            }
        }
        out.join("\n")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetacogError {
    #[error("no parsable plan after {attempts} responses: {last_error}")]
    PlanSynthesis { attempts: u32, last_error: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A parsed plan and the number of re-prompts it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub plan: JointPlan,
    pub reprompts: u32,
}

fn staged(stage: Stage, body: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::system(SYSTEM_PROMPT), ChatMessage::user(format!("STAGE: {}\n{body}", stage.as_str()))]
}

/// Messages asking for the skills behind one exemplar.
pub fn construction_messages(exemplar: &Exemplar) -> Vec<ChatMessage> {
    let mut lines = vec![
        format!("id: {}", exemplar.exemplar_id),
        format!("task: {}", exemplar.source_task.as_str()),
        format!("summary: {}", exemplar.task_summary),
        "scene:".to_string(),
    ];
    let mut scene: Vec<_> = exemplar.scene_snapshot.iter().collect();
    scene.sort_by(|a, b| a.id.cmp(&b.id));
    for o in scene {
        let p = o.pose;
        lines.push(format!("  {} {} at ({},{},{},{})", o.id, o.kind, fmt3(p.x), fmt3(p.y), fmt3(p.z), fmt3(p.yaw)));
    }
    lines.push("demonstration:".to_string());
    lines.extend(exemplar.demonstration.lines().map(|l| format!("  {l}")));
    let meta = build_meta_input(MetaContext::Construction { exemplars: std::slice::from_ref(exemplar) });
    let bundle = PromptBundle::new(
        "construction",
        vec![
            ("EXEMPLAR".to_string(), lines.join("\n")),
            ("META".to_string(), meta.render()),
            ("FORMAT".to_string(), SKILL_FORMAT.to_string()),
        ],
    );
    staged(Stage::Construction, &bundle.rendered)
}

/// The central prompt for every agent, in agent id order.
pub fn plan_prompt(task: &TaskSpec, observations: &BTreeMap<AgentId, Observation>, meta: Option<&MetaInput>) -> PromptBundle {
    let agents: Vec<(&str, &Observation)> = observations
        .iter()
        .map(|(a, o)| (task.agent_goals.get(a).map_or("", String::as_str), o))
        .collect();
    render_central_prompt(&agents, meta)
}

/// Retrieval query: every goal plus every rendered observation.
pub fn retrieval_query(task: &TaskSpec, observations: &BTreeMap<AgentId, Observation>) -> String {
    let mut parts: Vec<String> = task.agent_goals.values().cloned().collect();
    parts.extend(observations.values().map(render_observation));
    parts.join("\n")
}

/// Retrieval that treats an empty library as "nothing retrieved".
pub fn retrieve_or_empty(library: &SkillLibrary, query: &str) -> Vec<Retrieved> {
    library.retrieve(query, DEFAULT_TOP_K).unwrap_or_default()
}

/// Prompts the backend and parses the joint plan. A parse error is appended
/// to the prompt and asked again, at most [`MAX_REPROMPTS`] times.
pub fn infer_plan(
    task: &TaskSpec,
    observations: &BTreeMap<AgentId, Observation>,
    meta: Option<&MetaInput>,
    backend: &mut dyn ChatBackend,
) -> Result<Synthesis, MetacogError> {
    let stage = meta.map_or(Stage::Inference, MetaInput::stage);
    let bundle = plan_prompt(task, observations, meta);
    let mut messages = staged(stage, &bundle.rendered);
    let original = messages[1].content.clone();
    let mut last_error = String::new();
    for attempt in 0..=MAX_REPROMPTS {
        let response = backend.complete(&messages)?;
        match parse_plan(&response) {
            Ok(plan) => return Ok(Synthesis { plan, reprompts: attempt }),
            Err(e) => {
                last_error = e.to_string();
                messages[1].content =
                    format!("{original}\n[PARSE ERROR]\n{last_error}\nRespond again with PLAN lines only.\n");
            }
        }
    }
    Err(MetacogError::PlanSynthesis { attempts: MAX_REPROMPTS + 1, last_error })
}

/// Builds the reflection input for `failure` and asks for a revised plan.
/// Retrieval is rerun with the failure words appended to the query.
#[allow(clippy::too_many_arguments)]
pub fn reflect(
    task: &TaskSpec,
    observations: &BTreeMap<AgentId, Observation>,
    failure: &FailureFeedback,
    prior: Option<&MetaInput>,
    prior_plan: &JointPlan,
    attempt_index: u32,
    library: Option<&SkillLibrary>,
    backend: &mut dyn ChatBackend,
) -> Result<(MetaInput, Synthesis), MetacogError> {
    let retrieved = match library {
        Some(lib) => {
            let query = format!("{}\n{}", retrieval_query(task, observations), failure.keywords().join(" "));
            retrieve_or_empty(lib, &query)
        }
        None => vec![],
    };
    let meta = build_meta_input(MetaContext::Reflection { failure, prior, prior_plan, attempt_index, retrieved });
    let synthesis = infer_plan(task, observations, Some(&meta), backend)?;
    Ok((meta, synthesis))
}
