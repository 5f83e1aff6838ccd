//! Benchmark harness: seeded rounds per task and framework variant, the four
//! metrics with binomial standard errors, and JSON/CSV/Markdown reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{build_backend, BackendConfig, BackendError};
use crate::metacog::{record_episode, run_episode, EpisodeError, EpisodeErrorKind, EpisodeOptions, EpisodeResult};
use crate::skills::SkillLibrary;
use crate::world::{TaskId, TaskSpec};

pub const DEFAULT_ROUNDS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Reflex,
    ReflexNoReflection,
    NoMetacog,
    CentralPlan,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Reflex, Variant::ReflexNoReflection, Variant::NoMetacog, Variant::CentralPlan];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Reflex => "reflex",
            Variant::ReflexNoReflection => "reflex_no_reflection",
            Variant::NoMetacog => "no_metacog",
            Variant::CentralPlan => "central_plan",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s)
    }

    /// Episode switches for this variant. The central planner sees the full
    /// state and gets no guidance input.
    pub fn options(self, freeze_library: bool) -> EpisodeOptions {
        let (retrieval, reflection, central) = match self {
            Variant::Reflex => (true, true, false),
            Variant::ReflexNoReflection => (true, false, false),
            Variant::NoMetacog => (false, false, false),
            Variant::CentralPlan => (false, false, true),
        };
        EpisodeOptions {
            reflection_enabled: reflection,
            retrieval_enabled: retrieval,
            central_full_state: central,
            ingest_exemplars: !freeze_library,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tasks: Vec<TaskSpec>,
    pub variant: Variant,
    pub backend: BackendConfig,
    pub rounds: u32,
    pub base_seed: u64,
    /// Rounds share a read-only library snapshot and may run concurrently.
    pub freeze_library: bool,
    /// Where per-round transcripts go; none are written when unset.
    pub transcript_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(tasks: Vec<TaskSpec>, variant: Variant, backend: BackendConfig) -> Self {
        RunConfig {
            tasks,
            variant,
            backend,
            rounds: DEFAULT_ROUNDS,
            base_seed: 0,
            freeze_library: true,
            transcript_dir: None,
        }
    }

    pub fn round_seed(&self, round: u32) -> u64 {
        self.base_seed.wrapping_add(round as u64)
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid run: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One episode of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub task: TaskId,
    pub variant: Variant,
    pub round: u32,
    pub result: EpisodeResult,
}

/// A ratio with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: TaskId,
    pub variant: Variant,
    pub rounds: u32,
    pub success_rate: f64,
    pub success_stderr: f64,
    pub avg_env_steps: Option<f64>,
    pub avg_replans: f64,
    pub reflection_success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub summary: MetricsSummary,
    pub raw: Vec<RoundRecord>,
}

/// Success fraction and `sqrt(p(1-p)/n)`; `None` without results.
pub fn success_rate(results: &[EpisodeResult]) -> Option<Rate> {
    if results.is_empty() {
        return None;
    }
    let n = results.len() as f64;
    let p = results.iter().filter(|r| r.success).count() as f64 / n;
    Some(Rate { value: p, stderr: (p * (1.0 - p) / n).sqrt() })
}

/// Mean environment steps over successful runs only.
pub fn avg_env_steps(results: &[EpisodeResult]) -> Option<f64> {
    let steps: Vec<f64> = results.iter().filter(|r| r.success).map(|r| r.env_steps as f64).collect();
    (!steps.is_empty()).then(|| steps.iter().sum::<f64>() / steps.len() as f64)
}

/// Mean replan attempts over every run, failed ones included.
pub fn avg_replans(results: &[EpisodeResult]) -> Option<f64> {
    (!results.is_empty())
        .then(|| results.iter().map(|r| r.replan_attempts as f64).sum::<f64>() / results.len() as f64)
}

/// Valid regenerations over all reflections, counted only inside episodes
/// that ultimately succeeded. `None` when those episodes never reflected.
pub fn reflection_success_rate(results: &[EpisodeResult]) -> Option<f64> {
    let records: Vec<bool> = results
        .iter()
        .filter(|r| r.success)
        .flat_map(|r| r.reflections.iter().map(|x| x.regenerated_plan_valid))
        .collect();
    (!records.is_empty()).then(|| records.iter().filter(|v| **v).count() as f64 / records.len() as f64)
}

/// Rounds half away from zero, so 4.25 gives 4.3 at one decimal.
pub fn round_dp(v: f64, decimals: u32) -> f64 {
    let f = 10f64.powi(decimals as i32);
    (v * f).round() / f
}

fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, round_dp(v, decimals as u32));
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// `0.95 ± 0.05`.
pub fn format_rate(rate: Rate) -> String {
    format!("{} ± {}", fixed(rate.value, 2), fixed(rate.stderr, 2))
}

/// `4.0, 1.7`; absent steps show as `-`.
pub fn format_steps_replans(steps: Option<f64>, replans: f64) -> String {
    format!("{}, {}", steps.map_or("-".to_string(), |s| fixed(s, 1)), fixed(replans, 1))
}

/// Summary rows for every (task, variant) pair in first-seen order.
pub fn summarize(raw: &[RoundRecord]) -> MetricsSummary {
    let mut keys: Vec<(TaskId, Variant)> = vec![];
    for r in raw {
        if !keys.contains(&(r.task, r.variant)) {
            keys.push((r.task, r.variant));
        }
    }
    let rows = keys
        .into_iter()
        .map(|(task, variant)| {
            let results: Vec<EpisodeResult> =
                raw.iter().filter(|r| r.task == task && r.variant == variant).map(|r| r.result.clone()).collect();
            let rate = success_rate(&results).expect("every key has results");
            MetricsRow {
                task,
                variant,
                rounds: results.len() as u32,
                success_rate: rate.value,
                success_stderr: rate.stderr,
                avg_env_steps: avg_env_steps(&results),
                avg_replans: avg_replans(&results).expect("non-empty"),
                reflection_success_rate: reflection_success_rate(&results),
            }
        })
        .collect();
    MetricsSummary { rows }
}

fn failed_round(task: &TaskSpec, seed: u64, error: &BackendError) -> EpisodeResult {
    let kind = match error {
        BackendError::ReplayDivergence { .. } => EpisodeErrorKind::ReplayDivergence,
        _ => EpisodeErrorKind::Backend,
    };
    EpisodeResult {
        task_id: task.task_id,
        success: false,
        env_steps: 0,
        replan_attempts: 0,
        reflections: vec![],
        transcript_path: None,
        seed,
        parse_reprompts: 0,
        ingested_exemplar: None,
        error: Some(EpisodeError { kind, message: error.to_string() }),
    }
}

fn run_round(
    config: &RunConfig,
    task: &TaskSpec,
    round: u32,
    library: Option<&mut SkillLibrary>,
    options: &EpisodeOptions,
) -> RoundRecord {
    let seed = config.round_seed(round);
    let task = task.with_seed(seed);
    let result = match build_backend(&config.backend) {
        Err(e) => failed_round(&task, seed, &e),
        Ok(mut backend) => match &config.transcript_dir {
            None => run_episode(&task, library, &mut *backend, options),
            Some(dir) => {
                let path = dir.join(format!("{}_{}_{round:03}.jsonl", task.task_id.as_str(), config.variant.as_str()));
                record_episode(&task, library, &mut *backend, options, &path)
                    .unwrap_or_else(|e| failed_round(&task, seed, &e))
            }
        },
    };
    RoundRecord { task: task.task_id, variant: config.variant, round, result }
}

/// Runs `rounds` episodes of every task. Every round yields a record, even
/// when its backend cannot be built. With a frozen library rounds run
/// concurrently against one snapshot; otherwise they run in order and each
/// success may grow `library`.
pub fn run_bench(config: &RunConfig, library: Option<&mut SkillLibrary>) -> Result<BenchOutput, BenchError> {
    if config.rounds == 0 {
        return Err(BenchError::Config("rounds must be at least 1".into()));
    }
    if config.tasks.is_empty() {
        return Err(BenchError::Config("no tasks".into()));
    }
    config.backend.validate()?;
    if let Some(dir) = &config.transcript_dir {
        fs::create_dir_all(dir)?;
    }
    let options = config.variant.options(config.freeze_library);
    let jobs: Vec<(&TaskSpec, u32)> =
        config.tasks.iter().flat_map(|t| (0..config.rounds).map(move |r| (t, r))).collect();

    let raw = match library {
        Some(lib) if !config.freeze_library => {
            jobs.iter().map(|(t, r)| run_round(config, t, *r, Some(&mut *lib), &options)).collect()
        }
        snapshot => {
            let snapshot = snapshot.map(|l| l.clone());
            let next = AtomicUsize::new(0);
            let slots: Mutex<Vec<Option<RoundRecord>>> = Mutex::new(vec![None; jobs.len()]);
            let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
            std::thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(|| {
                        let mut lib = snapshot.clone();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            let Some((t, r)) = jobs.get(i) else { break };
                            let record = run_round(config, t, *r, lib.as_mut(), &options);
                            slots.lock().expect("no worker panics")[i] = Some(record);
                        }
                    });
                }
            });
            slots.into_inner().expect("no worker panics").into_iter().map(|r| r.expect("every job ran")).collect()
        }
    };
    let raw: Vec<RoundRecord> = raw;
    Ok(BenchOutput { summary: summarize(&raw), raw })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v}"))
}

pub fn metrics_csv(summary: &MetricsSummary) -> String {
    let mut out = String::from(
        "task,variant,rounds,success_rate,success_stderr,avg_env_steps,avg_replans,reflection_success_rate\n",
    );
    for r in &summary.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.task.as_str(),
            r.variant.as_str(),
            r.rounds,
            r.success_rate,
            r.success_stderr,
            opt(r.avg_env_steps),
            r.avg_replans,
            opt(r.reflection_success_rate)
        );
    }
    out
}

/// Variants as rows, tasks as column pairs: success ± stderr, then
/// "steps, replans". A second table lists reflection success rates.
pub fn report_markdown(summary: &MetricsSummary) -> String {
    let mut tasks: Vec<TaskId> = vec![];
    let mut variants: Vec<Variant> = vec![];
    for r in &summary.rows {
        if !tasks.contains(&r.task) {
            tasks.push(r.task);
        }
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    let row = |t: TaskId, v: Variant| summary.rows.iter().find(|r| r.task == t && r.variant == v);

    let mut out = String::from("# Benchmark report\n\n| Variant |");
    for t in &tasks {
        let _ = write!(out, " {} success | {} steps, replans |", t.as_str(), t.as_str());
    }
    out.push_str("\n|---|");
    out.push_str(&"---|---|".repeat(tasks.len()));
    out.push('\n');
    for v in &variants {
        let _ = write!(out, "| {} |", v.as_str());
        for t in &tasks {
            match row(*t, *v) {
                Some(r) => {
                    let rate = Rate { value: r.success_rate, stderr: r.success_stderr };
                    let _ = write!(out, " {} | {} |", format_rate(rate), format_steps_replans(r.avg_env_steps, r.avg_replans));
                }
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }

    out.push_str("\n## Reflection success rate\n\n| Variant |");
    for t in &tasks {
        let _ = write!(out, " {} |", t.as_str());
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(tasks.len()));
    out.push('\n');
    for v in &variants {
        let _ = write!(out, "| {} |", v.as_str());
        for t in &tasks {
            let cell = row(*t, *v).and_then(|r| r.reflection_success_rate).map_or("-".to_string(), |x| fixed(x, 2));
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

/// Writes `metrics.json`, `metrics.csv`, `report.md` and the raw rounds as
/// `results.jsonl`. The same input always gives the same bytes.
pub fn emit_report(summary: &MetricsSummary, raw: &[RoundRecord], output_dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(output_dir)?;
    let mut raw_lines = String::new();
    for r in raw {
        raw_lines.push_str(&serde_json::to_string(r).expect("round records serialize"));
        raw_lines.push('\n');
    }
    let files = [
        ("metrics.json", serde_json::to_string_pretty(summary).expect("summary serializes") + "\n"),
        ("metrics.csv", metrics_csv(summary)),
        ("report.md", report_markdown(summary)),
        ("results.jsonl", raw_lines),
    ];
    let mut written = vec![];
    for (name, text) in files {
        let path = output_dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
