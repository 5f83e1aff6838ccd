use nalgebra::Vector3;

use super::{Geometry, SceneObject};
use crate::validate::collision::PlacedShape;

/// Extra length a co-held rope may show between its grasp points before it
/// counts as overstretched.
pub const ROPE_STRETCH_TOLERANCE: f64 = 0.01;

fn vec3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// World-space shapes of an object at its current pose.
pub fn object_shapes(obj: &SceneObject) -> Vec<PlacedShape> {
    match &obj.geometry {
        Geometry::Sphere { radius } => {
            vec![PlacedShape::Sphere { center: obj.pose.position(), radius: *radius }]
        }
        Geometry::Capsule { p0, p1, radius } => vec![PlacedShape::Capsule {
            p0: obj.pose.transform_point(&vec3(p0)),
            p1: obj.pose.transform_point(&vec3(p1)),
            radius: *radius,
        }],
        Geometry::Box { half_extents } => {
            vec![PlacedShape::Box { pose: obj.pose, half_extents: *half_extents }]
        }
    }
}

/// Length of the object's grasp axis: the capsule segment, the box's local
/// x extent, zero for spheres.
pub fn axial_length(geometry: &Geometry) -> f64 {
    match geometry {
        Geometry::Sphere { .. } => 0.0,
        Geometry::Capsule { p0, p1, .. } => (vec3(p1) - vec3(p0)).norm(),
        Geometry::Box { half_extents } => 2.0 * half_extents[0],
    }
}

/// Local point at distance `s` along the grasp axis, starting at its first end.
pub(crate) fn axis_point(geometry: &Geometry, s: f64) -> Vector3<f64> {
    match geometry {
        Geometry::Sphere { .. } => Vector3::zeros(),
        Geometry::Capsule { p0, p1, .. } => {
            let (a, b) = (vec3(p0), vec3(p1));
            let len = (b - a).norm();
            if len == 0.0 {
                a
            } else {
                a + (b - a) * (s / len)
            }
        }
        Geometry::Box { half_extents } => Vector3::new(-half_extents[0] + s, 0.0, 0.0),
    }
}

/// Axial coordinate of a local point, projected onto the grasp axis.
pub(crate) fn axis_coordinate(geometry: &Geometry, local: &Vector3<f64>) -> f64 {
    match geometry {
        Geometry::Sphere { .. } => 0.0,
        Geometry::Capsule { p0, p1, .. } => {
            let (a, b) = (vec3(p0), vec3(p1));
            let len = (b - a).norm();
            if len == 0.0 {
                0.0
            } else {
                ((local - a).dot(&(b - a)) / len).clamp(0.0, len)
            }
        }
        Geometry::Box { half_extents } => {
            (local.x + half_extents[0]).clamp(0.0, 2.0 * half_extents[0])
        }
    }
}

/// Grasp point in world coordinates for a handle or an axial offset, along
/// with its local coordinates and axial coordinate.
pub fn grasp_point(
    obj: &SceneObject,
    handle: Option<&str>,
    offset: Option<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>, f64), String> {
    let local = match (handle, offset) {
        (Some(h), _) => match obj.handle(h) {
            Some(handle) => vec3(&handle.offset),
            None => return Err(format!("object {} has no handle {h}", obj.id)),
        },
        (None, Some(s)) => {
            let len = axial_length(&obj.geometry);
            if !(0.0..=len + 1e-12).contains(&s) {
                return Err(format!("offset {s} outside [0, {len:.3}] on {}", obj.id));
            }
            axis_point(&obj.geometry, s)
        }
        (None, None) => match obj.handles.first() {
            Some(handle) => vec3(&handle.offset),
            None => axis_point(&obj.geometry, axial_length(&obj.geometry) / 2.0),
        },
    };
    let s = axis_coordinate(&obj.geometry, &local);
    Ok((obj.pose.transform_point(&local), local, s))
}

/// True when a local point lies inside or on the geometry.
pub(crate) fn contains_local(geometry: &Geometry, p: &Vector3<f64>) -> bool {
    const EPS: f64 = 1e-9;
    match geometry {
        Geometry::Sphere { radius } => p.norm() <= radius + EPS,
        Geometry::Capsule { p0, p1, radius } => {
            let (a, b) = (vec3(p0), vec3(p1));
            let ab = b - a;
            let t = if ab.norm_squared() == 0.0 {
                0.0
            } else {
                ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
            };
            (p - (a + ab * t)).norm() <= radius + EPS
        }
        Geometry::Box { half_extents } => (0..3).all(|i| p[i].abs() <= half_extents[i] + EPS),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Handle, ObjectKind, Pose};

    fn rope() -> SceneObject {
        SceneObject {
            id: "rope".into(),
            kind: ObjectKind::Rope,
            pose: Pose::new(1.0, 2.0, 0.0, 0.0),
            geometry: Geometry::Capsule { p0: [-0.3, 0.0, 0.0], p1: [0.3, 0.0, 0.0], radius: 0.01 },
            handles: vec![Handle { id: "left_end".into(), offset: [-0.3, 0.0, 0.0] }],
            graspable: true,
        }
    }

    #[test]
    fn offset_grasp_measures_from_first_end() {
        let (w, local, s) = grasp_point(&rope(), None, Some(0.15)).unwrap();
        assert!((w - Vector3::new(0.85, 2.0, 0.0)).norm() < 1e-12);
        assert!((local.x + 0.15).abs() < 1e-12);
        assert!((s - 0.15).abs() < 1e-12);
        assert!(grasp_point(&rope(), None, Some(0.7)).is_err());
    }

    #[test]
    fn handle_grasp_reports_axial_coordinate() {
        let (_, _, s) = grasp_point(&rope(), Some("left_end"), None).unwrap();
        assert_eq!(s, 0.0);
        assert!(grasp_point(&rope(), Some("nope"), None).is_err());
    }
}
