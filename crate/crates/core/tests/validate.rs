mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use common::{plan, task, TASKS};
use deskplan::plan::{parse_plan, Action, Grasp, JointPlan};
use deskplan::validate::collision::{check_collision, Entity, EntityId, PlacedShape};
use deskplan::validate::kinematics::{forward_kinematics, interpolate, inverse_kinematics, IkFailure, JointConfig};
use deskplan::validate::{validate_joint_plan, FailureNature};
use deskplan::world::{reset, ArmModel, Pose, TaskSpec};
use nalgebra::{Matrix4, Vector3, Vector4};
use proptest::prelude::*;

fn arm(l1: f64, l2: f64) -> ArmModel {
    ArmModel {
        agent_id: "alice".into(),
        base: Pose::new(0.3, -0.2, 0.1, 0.7),
        link_lengths: [l1, l2],
        joint_limits: [[-PI, PI], [-PI, PI], [-PI, PI]],
        capsule_radius: 0.03,
        reachable_radius: l1 + l2,
    }
}

fn unit_arm() -> ArmModel {
    ArmModel { base: Pose::new(0.0, 0.0, 0.0, 0.0), ..arm(1.0, 1.0) }
}

/// Independent FK: homogeneous transforms, pitch about the local y axis.
fn fk_oracle(arm: &ArmModel, q: &JointConfig) -> Vector3<f64> {
    let trans = |x: f64, y: f64, z: f64| {
        let mut m = Matrix4::identity();
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        m
    };
    let rot_z = |a: f64| {
        let (s, c) = a.sin_cos();
        Matrix4::new(c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    };
    // positive angle lifts the x axis towards +z
    let pitch = |a: f64| {
        let (s, c) = a.sin_cos();
        Matrix4::new(c, 0.0, -s, 0.0, 0.0, 1.0, 0.0, 0.0, s, 0.0, c, 0.0, 0.0, 0.0, 0.0, 1.0)
    };
    let b = arm.base;
    let t = trans(b.x, b.y, b.z)
        * rot_z(b.yaw + q[0])
        * pitch(q[1])
        * trans(arm.link_lengths[0], 0.0, 0.0)
        * pitch(q[2])
        * trans(arm.link_lengths[1], 0.0, 0.0);
    let p = t * Vector4::new(0.0, 0.0, 0.0, 1.0);
    Vector3::new(p.x, p.y, p.z)
}

#[test]
fn fk_examples() {
    let a = unit_arm();
    let p = forward_kinematics(&a, &[0.0, 0.0, 0.0]);
    assert!((p.position() - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    assert_eq!(p.yaw, 0.0);
    let p = forward_kinematics(&a, &[FRAC_PI_2, 0.0, 0.0]);
    assert!((p.position() - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    // elbow bend of 90 degrees: elbow at (1,0), tip one link up, planar reach sqrt 2
    let p = forward_kinematics(&a, &[0.0, 0.0, FRAC_PI_2]).position();
    assert!((p - fk_oracle(&a, &[0.0, 0.0, FRAC_PI_2])).norm() < 1e-12);
    assert!((p.x.hypot(p.z) - 2f64.sqrt()).abs() < 1e-12);
    assert!((p.z - 1.0).abs() < 1e-12);
}

#[test]
fn ik_examples() {
    let a = unit_arm();
    assert_eq!(inverse_kinematics(&a, &Pose::new(2.0, 0.0, 0.0, 0.0)).unwrap(), [0.0, 0.0, 0.0]);
    assert_eq!(inverse_kinematics(&a, &Pose::new(3.0, 0.0, 0.0, 0.0)), Err(IkFailure::OutOfReach));
    let q = inverse_kinematics(&a, &Pose::new(1.0, 0.0, 1.0, 0.0)).unwrap();
    assert!((q[1]).abs() < 1e-12 && (q[2] - FRAC_PI_2).abs() < 1e-12, "{q:?}");
    assert!((fk_oracle(&a, &q) - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-9);

    // a fixture arm only bends the other way, so the fallback branch is used
    let t = task("install_drywall");
    let fixture_arm = &t.arms[0];
    let q = inverse_kinematics(fixture_arm, &Pose::new(-0.2, -0.45, 0.32, 0.0)).unwrap();
    assert!(q[2] < 0.0 && fixture_arm.within_limits(&q));
    let mut narrow = fixture_arm.clone();
    narrow.joint_limits[1] = [2.0, 2.1];
    assert_eq!(inverse_kinematics(&narrow, &Pose::new(-0.2, -0.45, 0.32, 0.0)), Err(IkFailure::JointLimit));
}

#[test]
fn interpolation_examples() {
    let a = unit_arm();
    assert_eq!(interpolate(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], &a), vec![[0.1, 0.2, 0.3]]);
    // a 0.5 m straight retraction of the tip
    let from = inverse_kinematics(&a, &Pose::new(1.5, 0.0, 0.0, 0.0)).unwrap();
    let to = inverse_kinematics(&a, &Pose::new(1.0, 0.0, 0.0, 0.0)).unwrap();
    let path = interpolate(&from, &to, &a);
    assert!(path.len() >= 11, "{}", path.len());
    assert_eq!((path[0], *path.last().unwrap()), (from, to));
}

fn q_strategy() -> impl Strategy<Value = JointConfig> {
    [-PI..PI, -PI..PI, -PI..PI]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fk_matches_oracle(q in q_strategy(), l1 in 0.1..1.0f64, l2 in 0.1..1.0f64) {
        let a = arm(l1, l2);
        prop_assert!((forward_kinematics(&a, &q).position() - fk_oracle(&a, &q)).norm() < 1e-12);
    }

    #[test]
    fn ik_round_trip_on_reachable_targets(q in q_strategy(), l1 in 0.2..1.0f64, l2 in 0.2..1.0f64) {
        let a = arm(l1, l2);
        let target = fk_oracle(&a, &q);
        let solved = inverse_kinematics(&a, &Pose::from_position(target, 0.0));
        let solved = solved.map_err(|e| TestCaseError::fail(format!("{e:?}")))?;
        prop_assert!(a.within_limits(&solved));
        prop_assert!((fk_oracle(&a, &solved) - target).norm() <= 1e-9);
    }

    #[test]
    fn ik_is_total(x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
        let a = arm(0.6, 0.4);
        let target = Vector3::new(x, y, z);
        let dist = (target - a.base.position()).norm();
        match inverse_kinematics(&a, &Pose::from_position(target, 0.0)) {
            Ok(q) => prop_assert!((fk_oracle(&a, &q) - target).norm() <= 1e-9),
            Err(IkFailure::OutOfReach) => prop_assert!(dist > 1.0 - 1e-9 || dist < 0.2 + 1e-9),
            Err(IkFailure::JointLimit) => prop_assert!(false, "full limits never bind"),
        }
    }

    #[test]
    fn interpolation_gap_is_bounded(from in q_strategy(), to in q_strategy()) {
        let a = arm(0.45, 0.45);
        let path = interpolate(&from, &to, &a);
        prop_assert_eq!(path[0], from);
        prop_assert_eq!(*path.last().unwrap(), to);
        for w in path.windows(2) {
            prop_assert!((fk_oracle(&a, &w[1]) - fk_oracle(&a, &w[0])).norm() <= 0.05 + 1e-12);
        }
    }
}

fn sphere(id: &str, x: f64, r: f64) -> Entity {
    Entity::new(EntityId::object(id), vec![PlacedShape::Sphere { center: Vector3::new(x, 0.0, 0.0), radius: r }])
}

#[test]
fn sphere_examples() {
    assert!(check_collision(&[sphere("a", 0.0, 0.5), sphere("b", 0.9, 0.5)]).is_some());
    assert!(check_collision(&[sphere("a", 0.0, 0.5), sphere("b", 1.1, 0.5)]).is_none());
}

fn v3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn shape() -> impl Strategy<Value = PlacedShape> {
    prop_oneof![
        (v3(), 0.01..0.3f64).prop_map(|(center, radius)| PlacedShape::Sphere { center, radius }),
        (v3(), v3(), 0.01..0.3f64).prop_map(|(p0, p1, radius)| PlacedShape::Capsule { p0, p1, radius }),
        (v3(), -PI..PI, [0.01..0.4f64, 0.01..0.4f64, 0.01..0.4f64]).prop_map(|(c, yaw, half_extents)| {
            PlacedShape::Box { pose: Pose::from_position(c, yaw), half_extents }
        }),
    ]
}

fn scene() -> impl Strategy<Value = Vec<Entity>> {
    prop::collection::vec(prop::collection::vec(shape(), 1..3), 2..6).prop_map(|groups| {
        groups
            .into_iter()
            .enumerate()
            .map(|(i, shapes)| {
                let id = if i % 2 == 0 { EntityId::arm(format!("arm{i}")) } else { EntityId::object(format!("obj{i}")) };
                Entity::new(id, shapes)
            })
            .collect()
    })
}

/// Sphere pairs have an exact closed form.
fn spheres_touch(a: &Entity, b: &Entity) -> bool {
    a.shapes.iter().any(|x| {
        b.shapes.iter().any(|y| match (x, y) {
            (PlacedShape::Sphere { center: c1, radius: r1 }, PlacedShape::Sphere { center: c2, radius: r2 }) => {
                (c1 - c2).norm() < r1 + r2
            }
            _ => false,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn collision_symmetric_and_order_free(entities in scene(), seed in any::<u64>()) {
        let base = check_collision(&entities);
        let mut reversed = entities.clone();
        reversed.reverse();
        prop_assert_eq!(&check_collision(&reversed), &base);
        let mut rotated = entities.clone();
        rotated.rotate_left((seed % entities.len() as u64) as usize);
        prop_assert_eq!(&check_collision(&rotated), &base);
        prop_assert_eq!(&check_collision(&entities), &base);
        let (a, b) = (&entities[0], &entities[1]);
        let ab = check_collision(&[a.clone(), b.clone()]);
        let ba = check_collision(&[b.clone(), a.clone()]);
        prop_assert_eq!(&ab, &ba);
        if spheres_touch(a, b) {
            prop_assert!(ab.is_some());
        }
    }

    #[test]
    fn inflation_never_clears_a_collision(entities in scene(), delta in 0.0..0.2f64) {
        let inflated: Vec<Entity> = entities
            .iter()
            .map(|e| Entity::new(e.id.clone(), e.shapes.iter().map(|s| s.inflated(delta)).collect()))
            .collect();
        if check_collision(&entities).is_some() {
            prop_assert!(check_collision(&inflated).is_some());
        }
    }
}

fn wait_plan(t: &TaskSpec, steps: usize) -> JointPlan {
    JointPlan::from_actions(t.agent_ids().map(|a| (a.clone(), vec![Action::Wait; steps])))
}

#[test]
fn waiting_is_valid() {
    let t = task("install_drywall");
    let world = reset(&t);
    let (report, traj) = validate_joint_plan(&world, &t, &wait_plan(&t, 1));
    assert!(report.ok && report.failure.is_none());
    assert_eq!(report.checked_steps, 1);
    assert_eq!(traj.len(), 2);
}

#[test]
fn out_of_reach_is_reported_at_its_step() {
    let t = task("install_drywall");
    let world = reset(&t);
    let p = parse_plan("PLAN alice: WAIT -> WAIT -> MOVE TO (-2,0,0.2)\nPLAN bob: WAIT").unwrap();
    let (report, traj) = validate_joint_plan(&world, &t, &p);
    let f = report.failure.unwrap();
    assert!(!report.ok && traj.is_empty());
    assert_eq!(f.step_index, 2);
    assert!(matches!(f.nature, FailureNature::IkInfeasible { reason: IkFailure::OutOfReach, .. }));
    let record: serde_json::Value = serde_json::from_str(&f.to_record()).unwrap();
    assert_eq!(record["nature"], "IKInfeasible");
    assert_eq!(record["step_index"], 2);
}

#[test]
fn first_failure_has_the_lowest_step() {
    let t = task("install_drywall");
    let world = reset(&t);
    let p = parse_plan("PLAN alice: WAIT -> MOVE TO (-2,0,0.2) -> WAIT\nPLAN bob: WAIT -> WAIT -> MOVE TO (3,0,0)").unwrap();
    let f = validate_joint_plan(&world, &t, &p).0.failure.unwrap();
    assert_eq!(f.step_index, 1);
    assert!(matches!(&f.nature, FailureNature::IkInfeasible { agent_id, .. } if agent_id == "alice"));
}

#[test]
fn validation_is_pure() {
    for (name, _) in TASKS {
        let t = task(name);
        let world = reset(&t);
        let before = world.clone();
        let p = plan(if name == "move_rope" { "move_rope_end_grasp" } else { name });
        let first = validate_joint_plan(&world, &t, &p);
        assert_eq!(world, before);
        assert_eq!(validate_joint_plan(&world, &t, &p), first);
    }
}

#[test]
fn agent_mismatch_is_reported() {
    let t = task("install_drywall");
    let world = reset(&t);
    let p = parse_plan("PLAN alice: WAIT").unwrap();
    let f = validate_joint_plan(&world, &t, &p).0.failure.unwrap();
    assert_eq!(f.nature.name(), "AgentMismatch");
}

#[test]
fn fixture_plans_validate_and_thicker_arms_only_fail_more() {
    for (name, _) in TASKS {
        let base = task(name);
        let p = plan(if name == "move_rope" { "move_rope_inward_grasp" } else { name });
        let mut was_ok = true;
        for extra in [0.0, 0.005, 0.01, 0.02, 0.04, 0.08, 0.16] {
            let mut t = base.clone();
            for a in &mut t.arms {
                a.capsule_radius += extra;
            }
            let ok = validate_joint_plan(&reset(&t), &t, &p).0.ok;
            if extra == 0.0 {
                assert!(ok, "{name}");
            }
            assert!(was_ok || !ok, "{name}: fail turned ok at +{extra}");
            was_ok = ok;
        }
    }
}

/// The rope plan for a grasp `offset` meters in from alice's end. The
/// approach point sits above the grasp point, the carry point above where
/// that grasp point lies once the rope rests in the groove.
fn rope_plan(t: &TaskSpec, offset: f64) -> JointPlan {
    let rope = t.initial_scene.iter().find(|o| o.id == "rope").unwrap().pose;
    let groove = t.initial_scene.iter().find(|o| o.id == "groove").unwrap().pose;
    let on = |p: &Pose, local_x: f64| (p.x + local_x * p.yaw.cos(), p.y + local_x * p.yaw.sin());
    let above = |(x, y): (f64, f64)| Action::Move { to: Pose::new(x, y, 0.2, 0.0) };
    let place = Action::Place { object: "rope".into(), at: Pose::new(groove.x, groove.y, 0.015, groove.yaw) };
    let alice_grasp = if offset == 0.0 { Grasp::Handle("left_end".into()) } else { Grasp::Offset(offset) };
    let arm_actions = |local_x: f64, grasp: Grasp| {
        vec![
            above(on(&rope, local_x)),
            Action::Pick { object: "rope".into(), grasp: Some(grasp) },
            above(on(&rope, local_x)),
            above(on(&groove, local_x)),
            place.clone(),
        ]
    };
    JointPlan::from_actions([
        ("alice", arm_actions(-0.3 + offset, alice_grasp)),
        ("bob", arm_actions(0.3, Grasp::Handle("right_end".into()))),
    ])
}

#[test]
fn rope_grasp_offset_sweep_flips_between_ten_and_twelve_centimetres() {
    let t = task("move_rope");
    for seed in [0, 1, 7, 42] {
        let t = t.with_seed(seed);
        let world = reset(&t);
        for (offset, collides) in [(0.0, true), (0.05, true), (0.10, true), (0.12, false), (0.15, false), (0.2, false)] {
            let (report, _) = validate_joint_plan(&world, &t, &rope_plan(&t, offset));
            match report.failure.map(|f| f.nature) {
                Some(FailureNature::Collision { a, b, .. }) => {
                    assert!(collides, "offset {offset} seed {seed}");
                    assert_eq!((a.to_string(), b.to_string()), ("arm:alice".into(), "arm:bob".into()));
                }
                None => assert!(!collides, "offset {offset} seed {seed} validated"),
                Some(other) => panic!("offset {offset}: {other:?}"),
            }
        }
    }
}

#[test]
fn shipped_rope_plans_match_the_sweep() {
    let t = task("move_rope");
    let world = reset(&t);
    let end = validate_joint_plan(&world, &t, &plan("move_rope_end_grasp")).0.failure.unwrap();
    assert_eq!((end.step_index, end.waypoint_index), (3, 11));
    assert_eq!(end.to_string(), "Collision between arm:alice and arm:bob at (0.127,-0.460,0.308,0.000) (step 3 waypoint 11)");
    assert!(validate_joint_plan(&world, &t, &plan("move_rope_inward_grasp")).0.ok);
}
