use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    build_meta_input, infer_plan, reflect, retrieval_query, retrieve_or_empty, MetaContext, MetaInput, MetacogError,
};
use crate::llm::{
    read_transcript, record_wrap, BackendError, ChatBackend, ChatMessage, ReplayBackend, TranscriptRecord,
    TranscriptSink,
};
use crate::plan::{serialize_plan, Action, JointPlan};
use crate::skills::{extract_skills, Exemplar, SkillLibrary};
use crate::validate::{validate_joint_plan, FailureFeedback};
use crate::world::{
    apply_joint_step, load_task, observe, observe_full, reset, task_to_json, AgentId, Observation, TaskId, TaskSpec,
    WorldState,
};

/// Switches that realize the framework variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    pub reflection_enabled: bool,
    pub retrieval_enabled: bool,
    /// Every agent observes the whole scene.
    pub central_full_state: bool,
    /// Store the executed plan as an exemplar after a success. Off freezes
    /// the library.
    pub ingest_exemplars: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions { reflection_enabled: true, retrieval_enabled: true, central_full_state: false, ingest_exemplars: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub attempt_index: u32,
    pub failure: FailureFeedback,
    pub regenerated_plan_valid: bool,
    pub suspected_skills: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeErrorKind {
    Backend,
    ReplayDivergence,
    PlanSynthesis,
    World,
    /// The episode succeeded but its exemplar could not be stored.
    Ingestion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeError {
    pub kind: EpisodeErrorKind,
    pub message: String,
}

impl EpisodeError {
    /// Failures of the plumbing rather than of the planner.
    pub fn is_infrastructure(&self) -> bool {
        matches!(self.kind, EpisodeErrorKind::Backend | EpisodeErrorKind::ReplayDivergence)
    }

    fn from_backend(e: &BackendError) -> Self {
        let kind = match e {
            BackendError::ReplayDivergence { .. } => EpisodeErrorKind::ReplayDivergence,
            _ => EpisodeErrorKind::Backend,
        };
        EpisodeError { kind, message: e.to_string() }
    }

    fn from_metacog(e: &MetacogError) -> Self {
        match e {
            MetacogError::Backend(b) => Self::from_backend(b),
            MetacogError::PlanSynthesis { .. } => {
                EpisodeError { kind: EpisodeErrorKind::PlanSynthesis, message: e.to_string() }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: TaskId,
    pub success: bool,
    pub env_steps: u32,
    pub replan_attempts: u32,
    pub reflections: Vec<ReflectionRecord>,
    pub transcript_path: Option<String>,
    pub seed: u64,
    /// Re-prompts after unparsable responses; these are not replans.
    pub parse_reprompts: u32,
    pub ingested_exemplar: Option<String>,
    pub error: Option<EpisodeError>,
}

fn observations(world: &WorldState, task: &TaskSpec, full: bool) -> BTreeMap<AgentId, Observation> {
    task.agent_ids()
        .map(|a| {
            let o = if full { observe_full(world, task, a) } else { observe(world, task, a) };
            (a.clone(), o.expect("task agents are always observable"))
        })
        .collect()
}

/// One-line description stored with an exemplar.
pub fn task_summary(task: &TaskSpec) -> String {
    let goals: Vec<String> = task.agent_goals.iter().map(|(a, g)| format!("{a}: {g}")).collect();
    format!("{} with {} arms. {}", task.task_id.as_str(), task.arms.len(), goals.join(" "))
}

/// Observe, prompt, validate, reflect on failures and execute until the task
/// succeeds or a cap is hit. Nothing escapes: every failure mode ends up in
/// the result.
pub fn run_episode(
    task: &TaskSpec,
    mut library: Option<&mut SkillLibrary>,
    backend: &mut dyn ChatBackend,
    options: &EpisodeOptions,
) -> EpisodeResult {
    let mut world = reset(task);
    let mut result = EpisodeResult {
        task_id: task.task_id,
        success: false,
        env_steps: 0,
        replan_attempts: 0,
        reflections: vec![],
        transcript_path: None,
        seed: task.seed,
        parse_reprompts: 0,
        ingested_exemplar: None,
        error: None,
    };
    let mut executed: BTreeMap<AgentId, Vec<Action>> = task.agent_ids().map(|a| (a.clone(), vec![])).collect();

    'episode: while !world.done && world.step_count < task.max_env_steps {
        let obs = observations(&world, task, options.central_full_state);
        let mut meta = if options.retrieval_enabled {
            let retrieved = library.as_deref().map(|l| retrieve_or_empty(l, &retrieval_query(task, &obs))).unwrap_or_default();
            Some(build_meta_input(MetaContext::Inference { retrieved }))
        } else {
            None
        };
        let synthesis = match infer_plan(task, &obs, meta.as_ref(), backend) {
            Ok(s) => s,
            Err(e) => {
                result.error = Some(EpisodeError::from_metacog(&e));
                break;
            }
        };
        result.parse_reprompts += synthesis.reprompts;
        let mut plan = synthesis.plan;

        let trajectories = loop {
            let (report, trajectories) = validate_joint_plan(&world, task, &plan);
            if let Some(last) = result.reflections.last_mut().filter(|r| r.attempt_index == result.replan_attempts) {
                last.regenerated_plan_valid = report.ok;
            }
            let Some(failure) = report.failure else { break trajectories };
            if !options.reflection_enabled || result.replan_attempts >= task.max_replans {
                break 'episode;
            }
            result.replan_attempts += 1;
            let attempt = result.replan_attempts;
            let reflected = reflect(task, &obs, &failure, meta.as_ref(), &plan, attempt, library.as_deref(), backend);
            let suspected = match (&reflected, meta.as_ref()) {
                (Ok((MetaInput::Reflection { suspected_skills, .. }, _)), _) => suspected_skills.clone(),
                (_, Some(m)) => m.retrieved().iter().map(|r| r.cluster.cluster_id.clone()).collect(),
                _ => vec![],
            };
            result.reflections.push(ReflectionRecord {
                attempt_index: attempt,
                failure,
                regenerated_plan_valid: false,
                suspected_skills: suspected,
            });
            match reflected {
                Ok((next_meta, synthesis)) => {
                    result.parse_reprompts += synthesis.reprompts;
                    plan = synthesis.plan;
                    meta = Some(next_meta);
                }
                Err(e) => {
                    result.error = Some(EpisodeError::from_metacog(&e));
                    break 'episode;
                }
            }
        };

        for k in 0..plan.len() {
            if world.step_count >= task.max_env_steps {
                break 'episode;
            }
            let actions = plan.step(k);
            let step_paths = trajectories.iter().map(|(a, t)| (a.clone(), t.steps[k].clone())).collect();
            match apply_joint_step(&world, task, &actions, &step_paths) {
                Ok((next, _)) => world = next,
                Err(e) => {
                    result.error = Some(EpisodeError { kind: EpisodeErrorKind::World, message: e.to_string() });
                    break 'episode;
                }
            }
            for (agent, action) in actions {
                executed.entry(agent).or_default().push(action);
            }
            if world.done {
                break;
            }
        }
    }

    result.env_steps = world.step_count;
    result.success = world.done;
    if result.success && options.ingest_exemplars {
        if let Some(lib) = library.as_deref_mut() {
            let demonstration = serialize_plan(&JointPlan::from_actions(executed)).expect("a successful plan has steps");
            let exemplar = Exemplar::new(task.task_id, task_summary(task), task.initial_scene.clone(), demonstration);
            if lib.exemplars.contains_key(&exemplar.exemplar_id) {
                result.ingested_exemplar = Some(exemplar.exemplar_id);
            } else {
                match extract_skills(&exemplar, backend).and_then(|skills| lib.add_exemplar(exemplar.clone(), skills)) {
                    Ok(_) => result.ingested_exemplar = Some(exemplar.exemplar_id),
                    Err(e) => {
                        result.error = Some(EpisodeError { kind: EpisodeErrorKind::Ingestion, message: e.to_string() })
                    }
                }
            }
        }
    }
    result
}

/// First record of every transcript: enough to rerun the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub task: serde_json::Value,
    pub options: EpisodeOptions,
    /// Library snapshot before the episode, if one was used.
    pub library: Option<serde_json::Value>,
}

/// Runs an episode while writing its JSON-lines transcript to `path`.
pub fn record_episode(
    task: &TaskSpec,
    library: Option<&mut SkillLibrary>,
    backend: &mut dyn ChatBackend,
    options: &EpisodeOptions,
    path: &Path,
) -> Result<EpisodeResult, BackendError> {
    let sink = TranscriptSink::create(path)?;
    let header = TranscriptHeader {
        task: task_to_json(task),
        options: *options,
        library: library.as_deref().map(|l| serde_json::from_str(&l.to_json()).expect("library json")),
    };
    sink.push(TranscriptRecord::Header { header: serde_json::to_value(&header).expect("header json") })?;
    let mut recording = record_wrap(backend, sink.clone());
    let mut result = run_episode(task, library, &mut recording, options);
    result.transcript_path = Some(path.display().to_string());
    sink.push(TranscriptRecord::Result { result: serde_json::to_value(&result).expect("result json") })?;
    Ok(result)
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("replay diverged: expected prompt hash {expected_hash}, got {got_hash}")]
    Divergence { expected_hash: String, got_hash: String },
    #[error("replayed result differs from the recorded one")]
    ResultMismatch { recorded: Box<EpisodeResult>, replayed: Box<EpisodeResult> },
}

/// Replay backend that remembers the first divergence it reported.
struct Watched {
    inner: ReplayBackend,
    divergence: Option<BackendError>,
}

impl ChatBackend for Watched {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let r = self.inner.complete(messages);
        if let Err(e @ BackendError::ReplayDivergence { .. }) = &r {
            self.divergence.get_or_insert(e.clone());
        }
        r
    }
}

/// Reruns a recorded episode from its transcript alone and checks that the
/// result matches the recorded one field for field.
pub fn replay_episode(path: &Path) -> Result<EpisodeResult, ReplayError> {
    let records = read_transcript(path).map_err(|e| ReplayError::Transcript(e.to_string()))?;
    let Some(TranscriptRecord::Header { header }) = records.first() else {
        return Err(ReplayError::Transcript("the first record is not a header".into()));
    };
    let header: TranscriptHeader =
        serde_json::from_value(header.clone()).map_err(|e| ReplayError::Transcript(format!("header: {e}")))?;
    let task = load_task(&header.task.to_string()).map_err(|e| ReplayError::Transcript(format!("header task: {e}")))?;
    let mut library = match &header.library {
        Some(v) => Some(
            SkillLibrary::from_json(&v.to_string()).map_err(|e| ReplayError::Transcript(format!("header library: {e}")))?,
        ),
        None => None,
    };

    let mut backend = Watched { inner: ReplayBackend::new(&records), divergence: None };
    let mut replayed = run_episode(&task, library.as_mut(), &mut backend, &header.options);
    replayed.transcript_path = Some(path.display().to_string());
    if let Some(BackendError::ReplayDivergence { expected_hash, got_hash }) = backend.divergence {
        return Err(ReplayError::Divergence { expected_hash, got_hash });
    }
    if backend.inner.remaining() > 0 {
        let exchanges: Vec<_> = records
            .iter()
            .filter_map(|r| match r {
                TranscriptRecord::Exchange(e) => Some(e),
                _ => None,
            })
            .collect();
        let next = &exchanges[exchanges.len() - backend.inner.remaining()];
        return Err(ReplayError::Divergence { expected_hash: next.prompt_hash.clone(), got_hash: "end of episode".into() });
    }
    if let Some(TranscriptRecord::Result { result }) = records.last() {
        let mut recorded: EpisodeResult =
            serde_json::from_value(result.clone()).map_err(|e| ReplayError::Transcript(format!("result: {e}")))?;
        recorded.transcript_path = replayed.transcript_path.clone();
        if recorded != replayed {
            return Err(ReplayError::ResultMismatch { recorded: Box::new(recorded), replayed: Box::new(replayed) });
        }
    }
    Ok(replayed)
}
