use nalgebra::Vector3;

use super::objects::{axial_length, axis_point, object_shapes};
use super::{SuccessPredicate, TaskSpec, WorldState};
use crate::normalize_angle;
use crate::validate::collision::capsule_clearance;

/// Pure success test. Every object named by the predicate must be resting,
/// that is not held by any arm.
pub fn check_success(world: &WorldState, task: &TaskSpec) -> bool {
    let resting = |id: &str| world.objects.contains_key(id) && world.holders(id).is_empty();
    match &task.success {
        SuccessPredicate::RopeInGroove { rope, groove, clearance_wall } => {
            if !resting(rope) {
                return false;
            }
            let rope = &world.objects[rope];
            let len = axial_length(&rope.geometry);
            let ends = [0.0, len].map(|s| rope.pose.transform_point(&axis_point(&rope.geometry, s)));
            if !ends.iter().all(|p| groove.contains(p)) {
                return false;
            }
            let Some(wall) = world.objects.get(clearance_wall) else { return false };
            let rope_caps: Vec<_> = object_shapes(rope).iter().flat_map(|s| s.capsules()).collect();
            let wall_caps: Vec<_> = object_shapes(wall).iter().flat_map(|s| s.capsules()).collect();
            rope_caps.iter().all(|r| wall_caps.iter().all(|w| capsule_clearance(r, w).0 > 0.0))
        }
        SuccessPredicate::PanelInstalled { panel, target, pos_tol, ang_tol } => {
            if !resting(panel) {
                return false;
            }
            let p = &world.objects[panel].pose;
            (p.position() - target.position()).norm() <= *pos_tol
                && normalize_angle(p.yaw - target.yaw).abs() <= *ang_tol
        }
        SuccessPredicate::DoorOpenAndPlaced { door, closed_yaw, hinge_threshold, placements } => {
            if !resting(door) {
                return false;
            }
            let swung = normalize_angle(world.objects[door].pose.yaw - closed_yaw).abs();
            swung >= *hinge_threshold
                && placements.iter().all(|(id, region)| resting(id) && region.contains(&world.objects[id].pose.position()))
        }
        SuccessPredicate::StackOrder { order, xy_tol } => {
            if !order.iter().all(|id| resting(id)) {
                return false;
            }
            order.windows(2).all(|w| {
                let (below, above) = (world.objects[&w[0]].pose.position(), world.objects[&w[1]].pose.position());
                let d = Vector3::new(above.x - below.x, above.y - below.y, 0.0).norm();
                d <= *xy_tol && above.z > below.z
            })
        }
    }
}
