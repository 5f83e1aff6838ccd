mod common;

use common::{repo, task};
use deskplan::metacog::{build_meta_input, MetaContext};
use deskplan::plan::{parse_plan, render_prompt, serialize_plan, Action, Grasp, JointPlan, PlanError, FORMAT_TEXT};
use deskplan::skills::SkillLibrary;
use deskplan::validate::validate_joint_plan;
use deskplan::world::{observe, reset, Pose};
use proptest::prelude::*;

#[test]
fn grammar_examples() {
    let p = parse_plan("PLAN alice: PICK rope HANDLE left_end -> MOVE TO (0.5,0.2,0.4)\nPLAN bob: PICK rope HANDLE right_end -> WAIT")
        .unwrap();
    assert_eq!((p.plans.len(), p.len()), (2, 2));
    assert_eq!(p.plans["alice"].actions[1], Action::Move { to: Pose::new(0.5, 0.2, 0.4, 0.0) });
    assert_eq!(parse_plan(&serialize_plan(&p).unwrap()).unwrap(), p);

    let p = parse_plan("PLAN alice: PICK rope OFFSET 0.15").unwrap();
    assert_eq!(p.plans["alice"].actions[0], Action::Pick { object: "rope".into(), grasp: Some(Grasp::Offset(0.15)) });

    assert!(matches!(parse_plan("PLAN alice: GRAB rope"), Err(PlanError::UnknownVerb { token, line: 1, .. }) if token == "GRAB"));
    assert_eq!(serialize_plan(&JointPlan::default()), Err(PlanError::EmptyPlan));
}

#[test]
fn unequal_lengths_serialize_with_waits() {
    let p = JointPlan::from_actions([("alice", vec![Action::Open, Action::Close]), ("bob", vec![Action::Open])]);
    assert_eq!(serialize_plan(&p).unwrap(), "PLAN alice: OPEN -> CLOSE\nPLAN bob: OPEN -> WAIT\n");
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}"
}

fn num(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    // rounded so that the text stays short, with any sign of zero
    (lo..hi).prop_map(|v| (v * 1e4).round() / 1e4)
}

fn pose() -> impl Strategy<Value = Pose> {
    (num(-5.0, 5.0), num(-5.0, 5.0), num(-5.0, 5.0), num(-3.14, 3.14)).prop_map(|(x, y, z, yaw)| Pose::new(x, y, z, yaw))
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (ident(), prop::option::of(prop_oneof![ident().prop_map(Grasp::Handle), num(0.0, 2.0).prop_map(Grasp::Offset)]))
            .prop_map(|(object, grasp)| Action::Pick { object, grasp }),
        (ident(), pose()).prop_map(|(object, at)| Action::Place { object, at }),
        pose().prop_map(|to| Action::Move { to }),
        num(-180.0, 180.0).prop_map(|degrees| Action::Twist { degrees }),
        Just(Action::Open),
        Just(Action::Close),
        Just(Action::Wait),
    ]
}

fn joint_plan() -> impl Strategy<Value = Vec<(String, Vec<Action>)>> {
    prop::collection::btree_map(ident(), prop::collection::vec(action(), 1..8), 1..4)
        .prop_map(|m| m.into_iter().collect())
}

fn raw_text(plans: &[(String, Vec<Action>)]) -> String {
    plans
        .iter()
        .map(|(a, acts)| format!("PLAN {a}: {}", acts.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" -> ")))
        .collect::<Vec<_>>()
        .join("\n")
}

fn check_positioned(text: &str, e: &PlanError) -> Result<(), TestCaseError> {
    let lines = text.split('\n').count().max(1);
    match e {
        PlanError::Parse { line, column, .. } | PlanError::UnknownVerb { line, column, .. } => {
            prop_assert!(*line >= 1 && *line <= lines && *column >= 1);
        }
        PlanError::DuplicateAgent { line, .. } => prop_assert!(*line >= 1 && *line <= lines),
        PlanError::EmptyPlan => {}
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialize_then_parse_is_identity(plans in joint_plan()) {
        let p = JointPlan::from_actions(plans);
        let text = serialize_plan(&p).unwrap();
        prop_assert_eq!(parse_plan(&text).unwrap(), p.clone());
        prop_assert_eq!(serialize_plan(&parse_plan(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn parsing_pads_with_exactly_the_missing_waits(plans in joint_plan()) {
        let p = parse_plan(&raw_text(&plans)).unwrap();
        let longest = plans.iter().map(|(_, a)| a.len()).max().unwrap();
        for (agent, acts) in &plans {
            let parsed = &p.plans[agent].actions;
            prop_assert_eq!(parsed.len(), longest);
            prop_assert_eq!(&parsed[..acts.len()], &acts[..]);
            prop_assert!(parsed[acts.len()..].iter().all(|a| *a == Action::Wait));
        }
    }

    #[test]
    fn trailing_prose_is_ignored(plans in joint_plan(), prose in "[a-z ,.]{0,40}") {
        let text = format!("Here is the plan.\n{}\n{prose}", raw_text(&plans));
        prop_assert_eq!(parse_plan(&text).unwrap(), parse_plan(&raw_text(&plans)).unwrap());
    }

    #[test]
    fn mutated_plans_never_crash(plans in joint_plan(), cut in any::<prop::sample::Index>(), junk in "[ -~]{0,4}") {
        let text = raw_text(&plans);
        let at = cut.index(text.len() + 1);
        let mutated = format!("{}{junk}{}", &text[..at], &text[at..]);
        if let Err(e) = parse_plan(&mutated) {
            check_positioned(&mutated, &e)?;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10000))]

    #[test]
    fn arbitrary_bytes_never_crash(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let text = String::from_utf8_lossy(&bytes);
        if let Err(e) = parse_plan(&text) {
            check_positioned(&text, &e)?;
        }
    }
}

#[test]
fn prompts_are_deterministic_and_carry_the_meta_section() {
    let t = task("install_drywall");
    let world = reset(&t);
    let obs = observe(&world, &t, "alice").unwrap();
    let lib = SkillLibrary::load(&repo("fixtures/skills/reference_library.json")).unwrap();
    let retrieved = lib.retrieve("lift the panel and twist it", 2).unwrap();
    assert_eq!(retrieved.len(), 2);
    let meta = build_meta_input(MetaContext::Inference { retrieved: retrieved.clone() });
    let a = render_prompt(&t.agent_goals["alice"], &obs, Some(&meta));
    assert_eq!(a, render_prompt(&t.agent_goals["alice"], &obs, Some(&meta)));
    let labels: Vec<&str> = a.sections.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels, ["GOAL", "OBSERVATION", "META", "FORMAT"]);
    let expected: String = a.sections.iter().map(|(l, s)| format!("[{l}]\n{s}\n")).collect::<Vec<_>>().join("\n");
    assert_eq!(a.rendered, expected);
    assert_eq!(a.section("FORMAT"), Some(FORMAT_TEXT));
    let meta_text = a.section("META").unwrap();
    for r in &retrieved {
        assert!(meta_text.contains(&r.cluster.canonical_name));
        for e in &r.exemplars {
            for line in e.demonstration.lines() {
                assert!(meta_text.contains(line));
            }
        }
    }

    // a collision in the third step shows up by nature and location
    let bad = common::plan("move_rope_end_grasp");
    let rope = task("move_rope");
    let failure = validate_joint_plan(&reset(&rope), &rope, &bad).0.failure.unwrap();
    let reflection = build_meta_input(MetaContext::Reflection {
        failure: &failure,
        prior: Some(&meta),
        prior_plan: &bad,
        attempt_index: 1,
        retrieved: vec![],
    });
    let b = render_prompt(&rope.agent_goals["alice"], &observe(&reset(&rope), &rope, "alice").unwrap(), Some(&reflection));
    let meta_text = b.section("META").unwrap();
    assert!(meta_text.contains(&failure.to_record()));
    assert!(meta_text.contains("Collision between arm:alice and arm:bob"));
    assert!(meta_text.contains("step 3 waypoint 11"));
}
