use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo(rel: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel).to_string_lossy().into_owned()
}

fn deskplan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deskplan")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn scripted(fixture: &str) -> String {
    format!("scripted:{}", repo(&format!("fixtures/{fixture}")))
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let drywall = repo("tasks/install_drywall.json");

    let o = deskplan(d, &["--json", "run", &drywall, "--backend", &scripted("drywall_ok.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["success"], true);
    assert_eq!(r["env_steps"], 4);
    assert!(d.join("install_drywall_seed0.transcript.jsonl").exists());

    let o = deskplan(d, &["run", "missing/task.json", "--backend", &scripted("drywall_ok.json")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing/task.json"));

    // the fixture answers construction prompts only, so inference exhausts it
    let o = deskplan(d, &["--json", "run", &drywall, "--backend", &scripted("skills/reference_construction.json"), "--no-transcript"]);
    assert_eq!(code(&o), 3);
    assert_eq!(json(&o)["error"]["kind"], "backend");

    // a parseable but colliding plan every time is a task failure
    let bad = std::fs::read_to_string(repo("fixtures/plans/move_rope_end_grasp.plan")).unwrap();
    let rules: Vec<_> = (0..10).map(|_| serde_json::json!({"match": "STAGE: ", "response": bad})).collect();
    std::fs::write(d.join("stubborn.json"), serde_json::to_string(&rules).unwrap()).unwrap();
    let rope = repo("tasks/move_rope.json");
    let o = deskplan(d, &["--json", "run", &rope, "--backend", "scripted:stubborn.json", "--no-transcript"]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&o)["success"], false);

    let o = deskplan(d, &["run", &drywall, "--backend", "carrier:pigeon"]);
    assert_eq!(code(&o), 2);
    let o = deskplan(d, &["run", &drywall, "--backend", &scripted("nope.json")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn run_writes_result_and_transcript_side_by_side() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = deskplan(
        d,
        &[
            "--json",
            "run",
            &repo("tasks/move_rope.json"),
            "--backend",
            &scripted("move_rope_reflect.json"),
            "--library",
            &repo("fixtures/skills/reference_library.json"),
            "--out",
            "rope.json",
        ],
    );
    assert_eq!(code(&o), 0);
    let printed = json(&o);
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("rope.json")).unwrap()).unwrap();
    assert_eq!(printed, saved);
    assert_eq!(printed["replan_attempts"], 1);
    assert_eq!(printed["transcript_path"], "rope.transcript.jsonl");

    let first = deskplan(d, &["--json", "replay", "rope.transcript.jsonl"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let second = deskplan(d, &["--json", "replay", "rope.transcript.jsonl"]);
    assert_eq!(first.stdout, second.stdout);
    let mut replayed = json(&first);
    replayed["transcript_path"] = printed["transcript_path"].clone();
    assert_eq!(replayed, printed);

    let text = std::fs::read_to_string(d.join("rope.transcript.jsonl")).unwrap();
    std::fs::write(d.join("edited.jsonl"), text.replacen("STAGE: inference", "STAGE: inference ", 1)).unwrap();
    assert_eq!(code(&deskplan(d, &["replay", "edited.jsonl"])), 3);
    assert_eq!(code(&deskplan(d, &["replay", "absent.jsonl"])), 2);
}

#[test]
fn ingest_grows_the_library_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("lib.json"), r#"{"version":0,"exemplars":[],"skills":[],"clusters":[]}"#).unwrap();
    let args = ["run", &repo("tasks/install_drywall.json"), "--backend", &scripted("drywall_ok.json")];
    let ingest = [&args[..], &["--library", "lib.json", "--ingest", "--no-transcript", "--json"]].concat();
    let read = || -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(d.join("lib.json")).unwrap()).unwrap() };
    let o = deskplan(d, &ingest);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let id = json(&o)["ingested_exemplar"].as_str().unwrap().to_string();
    let lib = read();
    assert_eq!(lib["version"], 1);
    assert_eq!(lib["exemplars"][0]["exemplar_id"], id.as_str());
    // five task-specific and five shared skills
    assert_eq!(lib["skills"].as_array().unwrap().len(), 10);
    // the same demonstration again leaves the library as it was
    assert_eq!(code(&deskplan(d, &ingest)), 0);
    assert_eq!(read(), lib);
    // --ingest needs a library
    assert_eq!(code(&deskplan(d, &[&args[..], &["--ingest"]].concat())), 2);
}

#[test]
fn validate_plan_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rope = repo("tasks/move_rope.json");
    std::fs::write(d.join("wait.plan"), "PLAN alice: WAIT\nPLAN bob: WAIT\n").unwrap();
    std::fs::write(d.join("far.plan"), "PLAN alice: MOVE TO (3,0,0.2)\nPLAN bob: WAIT\n").unwrap();
    std::fs::write(d.join("bad.plan"), "PLAN alice: MOVE TO (1,2\n").unwrap();

    let o = deskplan(d, &["--json", "validate-plan", &rope, "wait.plan"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["ok"], true);
    let o = deskplan(d, &["--json", "validate-plan", &rope, "far.plan"]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&o)["failure"]["nature"], "IKInfeasible");
    let o = deskplan(d, &["validate-plan", &rope, "bad.plan"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1, column"));

    let o = deskplan(d, &["validate-plan", &rope, &repo("fixtures/plans/move_rope_end_grasp.plan")]);
    assert_eq!(code(&o), 1);
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).trim(),
        "Collision between arm:alice and arm:bob at (0.127,-0.460,0.308,0.000) (step 3 waypoint 11)"
    );
    assert_eq!(code(&deskplan(d, &["validate-plan", &rope, &repo("fixtures/plans/move_rope_inward_grasp.plan")])), 0);
}

#[test]
fn skills_build_and_show() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let build = |out: &str| {
        deskplan(
            d,
            &[
                "--json",
                "skills",
                "build",
                "--exemplars",
                &repo("fixtures/exemplars"),
                "--backend",
                &scripted("skills/reference_construction.json"),
                "--out",
                out,
            ],
        )
    };
    let o = build("lib.json");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o), serde_json::json!({"version": 4, "exemplars": 4, "skills": 33, "clusters": 22}));
    assert_eq!(build("again.json").status.code(), Some(0));
    assert_eq!(std::fs::read(d.join("lib.json")).unwrap(), std::fs::read(d.join("again.json")).unwrap());

    let o = deskplan(d, &["skills", "show", "lib.json"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("object_manipulation_and_transfer (4 members: arrange_cabinet, install_drywall, make_sandwich, move_rope)"));

    let o = deskplan(d, &["--json", "skills", "show", "lib.json", "--query", "twist the panel parallel to the wall", "--k", "2"]);
    let ranked = json(&o);
    assert_eq!(ranked.as_array().unwrap().len(), 2);
    assert_eq!(ranked[0]["canonical_name"], "panel_twisting_and_adjustment");

    let o = deskplan(d, &["--json", "skills", "show", "lib.json"]);
    assert_eq!(json(&o)["version"], 4);

    // extraction output without SKILL lines
    let o = deskplan(d, &["skills", "build", "--exemplars", &repo("fixtures/exemplars"), "--backend", &scripted("skills/garbage.json"), "--out", "x.json"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&deskplan(d, &["skills", "show", "absent.json"])), 2);
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = deskplan(
        d,
        &[
            "--json",
            "bench",
            "--tasks",
            &repo("tasks/move_rope.json"),
            "--variant",
            "reflex",
            "reflex_no_reflection",
            "--rounds",
            "4",
            "--backend",
            &scripted("move_rope_reflect.json"),
            "--out",
            "results",
            "--transcripts",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&o);
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!((rows[0]["variant"].as_str(), rows[0]["success_rate"].as_f64()), (Some("reflex"), Some(1.0)));
    assert_eq!((rows[1]["variant"].as_str(), rows[1]["success_rate"].as_f64()), (Some("reflex_no_reflection"), Some(0.0)));
    let csv = std::fs::read_to_string(d.join("results/metrics.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "task,variant,rounds,success_rate,success_stderr,avg_env_steps,avg_replans,reflection_success_rate"
    );
    assert_eq!(csv.lines().count(), 3);
    assert!(std::fs::read_to_string(d.join("results/report.md")).unwrap().contains("| reflex | 1.00 ± 0.00 | 5.0, 1.0 |"));
    assert_eq!(std::fs::read_to_string(d.join("results/results.jsonl")).unwrap().lines().count(), 8);
    assert_eq!(std::fs::read_dir(d.join("results/transcripts")).unwrap().count(), 8);

    // a missing fixture turns every round into an infrastructure failure
    let o = deskplan(d, &["bench", "--tasks", &repo("tasks/move_rope.json"), "--rounds", "2", "--backend", &scripted("gone.json"), "--out", "r2"]);
    assert_eq!(code(&o), 3);
    assert!(d.join("r2/metrics.csv").exists());
    let o = deskplan(d, &["bench", "--tasks", &repo("tasks/move_rope.json"), "--rounds", "0", "--backend", &scripted("gone.json"), "--out", "r3"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in [&["run"][..], &["bench"], &["skills", "build"], &["skills", "show"], &["validate-plan"], &["replay"]] {
        let help = deskplan(d, &[sub, &["--help"]].concat());
        assert_eq!(code(&help), 0, "{sub:?}");
        assert!(String::from_utf8_lossy(&help.stdout).contains("Usage:"));
        assert_eq!(code(&deskplan(d, &[sub, &["--frobnicate"]].concat())), 2, "{sub:?}");
    }
    assert_eq!(code(&deskplan(d, &[])), 2);
    assert_eq!(code(&deskplan(d, &["launch"])), 2);
    let o = deskplan(d, &["run", "t.json", "--backend", "x:y", "--variant", "best"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("reflex_no_reflection"));
}
