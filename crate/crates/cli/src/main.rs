//! `deskplan`: run episodes, benchmarks, skill libraries, plan checks and
//! transcript replays from the command line.
//!
//! Exit codes: 0 success, 1 task failure, 2 usage error, 3 infrastructure
//! error (backend, network, replay divergence, unwritable output).

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deskplan::bench::{emit_report, report_markdown, run_bench, RoundRecord, RunConfig, Variant, DEFAULT_ROUNDS};
use deskplan::llm::{build_backend, BackendConfig, BackendError};
use deskplan::metacog::{record_episode, replay_episode, run_episode, EpisodeResult};
use deskplan::plan::parse_plan;
use deskplan::skills::{extract_skills, Exemplar, SkillLibrary, SkillsError};
use deskplan::validate::validate_joint_plan;
use deskplan::world::{load_task, reset, TaskSpec};
use serde_json::json;

#[derive(Parser)]
#[command(name = "deskplan", version, about = "Multi-arm desk planning with reflective replanning")]
struct Cli {
    /// Print machine-readable JSON on standard output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and print its result.
    Run(RunArgs),
    /// Run seeded rounds of one or more tasks and write reports.
    Bench(BenchArgs),
    /// Build or inspect a skill library.
    #[command(subcommand)]
    Skills(SkillsCommand),
    /// Check a plan file against a task without executing it.
    ValidatePlan(ValidateArgs),
    /// Re-run a recorded episode from its transcript.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Task JSON file.
    task: PathBuf,
    /// Backend as kind:detail, e.g. scripted:fixtures/drywall_ok.json.
    #[arg(long)]
    backend: String,
    /// Skill library JSON file; retrieval is off without one.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Framework variant deciding reflection, retrieval and the central planner.
    #[arg(long, default_value = "reflex", value_parser = parse_variant)]
    variant: Variant,
    /// Overrides the task's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Store the successful plan in the library file as a new exemplar.
    #[arg(long, requires = "library")]
    ingest: bool,
    /// Also write the result JSON here; the transcript goes beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Transcript path. Defaults to beside --out, else
    /// `<task>_seed<seed>.transcript.jsonl` in the working directory.
    #[arg(long, conflicts_with = "no_transcript")]
    transcript: Option<PathBuf>,
    /// Do not write a transcript.
    #[arg(long)]
    no_transcript: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Task JSON files.
    #[arg(long, required = true, num_args = 1..)]
    tasks: Vec<PathBuf>,
    /// One or more variants; each runs every task.
    #[arg(long, num_args = 1.., default_value = "reflex", value_parser = parse_variant)]
    variant: Vec<Variant>,
    #[arg(long, default_value_t = DEFAULT_ROUNDS)]
    rounds: u32,
    /// Round r runs with seed base + r.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    backend: String,
    #[arg(long)]
    library: Option<PathBuf>,
    /// Let successful rounds grow the library; rounds then run in order and
    /// the grown library is written back.
    #[arg(long, requires = "library")]
    unfreeze: bool,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Keep one transcript per round under <out>/transcripts.
    #[arg(long)]
    transcripts: bool,
}

#[derive(Subcommand)]
enum SkillsCommand {
    /// Extract skills from exemplar files and cluster them into a library.
    Build(BuildArgs),
    /// Print a library's clusters, or the ranking for a query.
    Show(ShowArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Directory of exemplar JSON files, read in file-name order.
    #[arg(long)]
    exemplars: PathBuf,
    #[arg(long)]
    backend: String,
    /// Output library file.
    #[arg(long)]
    out: PathBuf,
    /// Library to extend instead of starting empty.
    #[arg(long)]
    base: Option<PathBuf>,
}

#[derive(Args)]
struct ShowArgs {
    library: PathBuf,
    /// Rank clusters against this text instead of listing them.
    #[arg(long)]
    query: Option<String>,
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Args)]
struct ValidateArgs {
    task: PathBuf,
    plan: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReplayArgs {
    transcript: PathBuf,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

/// `println!` that stops quietly when the reader has gone away.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// A failed command: its exit code and message.
struct Failure(u8, String);

fn usage(msg: impl Display) -> Failure {
    Failure(2, msg.to_string())
}

fn infra(msg: impl Display) -> Failure {
    Failure(3, msg.to_string())
}

type Outcome = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_task(path: &Path) -> Result<TaskSpec, Failure> {
    load_task(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_library(path: &Path) -> Result<SkillLibrary, Failure> {
    if !path.exists() {
        return Err(usage(format!("{}: no such file", path.display())));
    }
    SkillLibrary::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn backend_config(spec: &str) -> Result<BackendConfig, Failure> {
    BackendConfig::from_spec(spec).map_err(|e| usage(format!("--backend: {e}")))
}

/// Unreadable fixtures and bad configs are the caller's mistake; anything
/// else the backend reports is infrastructure.
fn backend_failure(e: BackendError) -> Failure {
    match e {
        BackendError::Config(_) => usage(e),
        other => infra(other),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| infra(format!("{}: {e}", path.display())))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn episode_exit(r: &EpisodeResult) -> u8 {
    match &r.error {
        Some(e) if e.is_infrastructure() => 3,
        _ if r.success => 0,
        _ => 1,
    }
}

fn describe(r: &EpisodeResult) -> String {
    let mut s = format!(
        "{}: {} after {} steps, {} replans (seed {})",
        r.task_id.as_str(),
        if r.success { "success" } else { "failure" },
        r.env_steps,
        r.replan_attempts,
        r.seed
    );
    for x in &r.reflections {
        s += &format!("\n  reflection {}: {} -> {}", x.attempt_index, x.failure, if x.regenerated_plan_valid { "valid" } else { "invalid" });
    }
    if let Some(e) = &r.error {
        s += &format!("\n  error: {}", e.message);
    }
    if let Some(p) = &r.transcript_path {
        s += &format!("\n  transcript: {p}");
    }
    s
}

fn cmd_run(a: RunArgs, json_out: bool) -> Outcome {
    let mut task = read_task(&a.task)?;
    if let Some(seed) = a.seed {
        task = task.with_seed(seed);
    }
    let config = backend_config(&a.backend)?;
    let mut library = a.library.as_deref().map(read_library).transpose()?;
    let mut backend = build_backend(&config).map_err(backend_failure)?;
    let options = a.variant.options(!a.ingest);
    let transcript = if a.no_transcript {
        None
    } else {
        Some(a.transcript.clone().unwrap_or_else(|| match &a.out {
            Some(out) => out.with_extension("transcript.jsonl"),
            None => PathBuf::from(format!("{}_seed{}.transcript.jsonl", task.task_id.as_str(), task.seed)),
        }))
    };
    let result = match &transcript {
        Some(path) => record_episode(&task, library.as_mut(), &mut backend, &options, path).map_err(infra)?,
        None => run_episode(&task, library.as_mut(), &mut backend, &options),
    };
    if let (Some(lib), Some(path), Some(_)) = (&library, &a.library, &result.ingested_exemplar) {
        lib.save(path).map_err(|e| infra(format!("{}: {e}", path.display())))?;
    }
    if let Some(out) = &a.out {
        write(out, &(pretty(&result) + "\n"))?;
    }
    out!("{}", if json_out { pretty(&result) } else { describe(&result) });
    Ok(episode_exit(&result))
}

fn cmd_bench(a: BenchArgs, json_out: bool) -> Outcome {
    let tasks = a.tasks.iter().map(|p| read_task(p)).collect::<Result<Vec<_>, _>>()?;
    let config = backend_config(&a.backend)?;
    let mut library = a.library.as_deref().map(read_library).transpose()?;
    let mut raw: Vec<RoundRecord> = vec![];
    for variant in &a.variant {
        let mut run = RunConfig::new(tasks.clone(), *variant, config.clone());
        run.rounds = a.rounds;
        run.base_seed = a.seed;
        run.freeze_library = !a.unfreeze;
        run.transcript_dir = a.transcripts.then(|| a.out.join("transcripts"));
        let out = run_bench(&run, library.as_mut()).map_err(|e| match e {
            deskplan::bench::BenchError::Config(m) => usage(m),
            other => infra(other),
        })?;
        raw.extend(out.raw);
    }
    let summary = deskplan::bench::summarize(&raw);
    emit_report(&summary, &raw, &a.out).map_err(infra)?;
    if let (true, Some(lib), Some(path)) = (a.unfreeze, &library, &a.library) {
        lib.save(path).map_err(|e| infra(format!("{}: {e}", path.display())))?;
    }
    out!("{}", if json_out { pretty(&summary) } else { report_markdown(&summary) });
    let infrastructure = raw.iter().filter(|r| r.result.error.as_ref().is_some_and(|e| e.is_infrastructure())).count();
    if infrastructure > 0 {
        eprintln!("{infrastructure} rounds hit infrastructure errors; see results.jsonl");
        return Ok(3);
    }
    Ok(0)
}

fn skills_exit(e: SkillsError) -> Failure {
    match e {
        SkillsError::Backend(_) | SkillsError::Io(_) => infra(e),
        SkillsError::ExtractionParse(_) => Failure(1, e.to_string()),
        _ => usage(e),
    }
}

fn cmd_skills_build(a: BuildArgs, json_out: bool) -> Outcome {
    let mut files: Vec<PathBuf> = std::fs::read_dir(&a.exemplars)
        .map_err(|e| usage(format!("{}: {e}", a.exemplars.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("{}: no exemplar files", a.exemplars.display())));
    }
    let config = backend_config(&a.backend)?;
    let mut library = match &a.base {
        Some(p) => read_library(p)?,
        None => SkillLibrary::new(),
    };
    let mut backend = build_backend(&config).map_err(backend_failure)?;
    for f in &files {
        let ex: Exemplar = serde_json::from_str(&read(f)?).map_err(|e| usage(format!("{}: {e}", f.display())))?;
        if library.exemplars.contains_key(&ex.exemplar_id) {
            continue;
        }
        let skills = extract_skills(&ex, &mut backend).map_err(skills_exit)?;
        library.add_exemplar(ex, skills).map_err(skills_exit)?;
    }
    library.save(&a.out).map_err(|e| infra(format!("{}: {e}", a.out.display())))?;
    let counts = json!({
        "version": library.version,
        "exemplars": library.exemplars.len(),
        "skills": library.skills.len(),
        "clusters": library.clusters.len(),
    });
    if json_out {
        out!("{}", pretty(&counts));
    } else {
        out!(
            "{}: {} exemplars, {} skills, {} clusters (version {})",
            a.out.display(),
            library.exemplars.len(),
            library.skills.len(),
            library.clusters.len(),
            library.version
        );
    }
    Ok(0)
}

fn cmd_skills_show(a: ShowArgs, json_out: bool) -> Outcome {
    let library = read_library(&a.library)?;
    match &a.query {
        Some(q) => {
            let ranked = library.retrieve(q, a.k).map_err(usage)?;
            if json_out {
                let rows: Vec<_> = ranked
                    .iter()
                    .map(|r| {
                        json!({
                            "cluster_id": r.cluster.cluster_id,
                            "canonical_name": r.cluster.canonical_name,
                            "score": r.score,
                            "exemplars": r.exemplars.iter().map(|e| &e.exemplar_id).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                out!("{}", pretty(&rows));
            } else {
                for r in &ranked {
                    out!("{:.3} {} {}", r.score, r.cluster.cluster_id, r.cluster.canonical_name);
                }
            }
        }
        None if json_out => out!("{}", library.to_json()),
        None => {
            out!("version {}, {} exemplars", library.version, library.exemplars.len());
            for c in &library.clusters {
                let tasks: std::collections::BTreeSet<&str> = c
                    .members
                    .iter()
                    .flat_map(|m| &library.skills[m].exemplar_ids)
                    .map(|e| library.exemplars[e].source_task.as_str())
                    .collect();
                let tasks: Vec<&str> = tasks.into_iter().collect();
                let n = c.members.len();
                let noun = if n == 1 { "member" } else { "members" };
                out!("{} {} ({n} {noun}: {})", c.cluster_id, c.canonical_name, tasks.join(", "));
            }
        }
    }
    Ok(0)
}

fn cmd_validate(a: ValidateArgs, json_out: bool) -> Outcome {
    let mut task = read_task(&a.task)?;
    if let Some(seed) = a.seed {
        task = task.with_seed(seed);
    }
    let plan = parse_plan(&read(&a.plan)?).map_err(|e| usage(format!("{}: {e}", a.plan.display())))?;
    let (report, _) = validate_joint_plan(&reset(&task), &task, &plan);
    if json_out {
        out!("{}", pretty(&report));
    } else {
        match &report.failure {
            None => out!("ok: {} steps", report.checked_steps),
            Some(f) => out!("{f}"),
        }
    }
    Ok(if report.ok { 0 } else { 1 })
}

fn cmd_replay(a: ReplayArgs, json_out: bool) -> Outcome {
    if !a.transcript.exists() {
        return Err(usage(format!("{}: no such file", a.transcript.display())));
    }
    // divergence, a mismatched result and an unreadable transcript all mean
    // the recording cannot be trusted
    let result = replay_episode(&a.transcript).map_err(infra)?;
    out!("{}", if json_out { pretty(&result) } else { describe(&result) });
    Ok(episode_exit(&result))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_out = cli.json;
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a, json_out),
        Command::Bench(a) => cmd_bench(a, json_out),
        Command::Skills(SkillsCommand::Build(a)) => cmd_skills_build(a, json_out),
        Command::Skills(SkillsCommand::Show(a)) => cmd_skills_show(a, json_out),
        Command::ValidatePlan(a) => cmd_validate(a, json_out),
        Command::Replay(a) => cmd_replay(a, json_out),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
