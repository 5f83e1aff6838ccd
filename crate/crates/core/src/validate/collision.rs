//! Narrow-phase collision between capsules, spheres and boxes.
//!
//! Every primitive is reduced to one or more capsules (a sphere is a capsule
//! with coincident end points, a box becomes one circumscribing capsule per
//! longest axis), so a single segment/segment distance routine decides every
//! pair.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::world::{yaw_rotation, AgentId, ObjectId, Pose};

/// Name of something that can collide.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityId {
    Arm(AgentId),
    Object(ObjectId),
}

impl EntityId {
    pub fn arm(id: impl Into<String>) -> Self {
        EntityId::Arm(id.into())
    }

    pub fn object(id: impl Into<String>) -> Self {
        EntityId::Object(id.into())
    }

    pub fn parse(s: &str) -> Option<Self> {
        if let Some(rest) = s.strip_prefix("arm:") {
            Some(EntityId::Arm(rest.to_string()))
        } else {
            s.strip_prefix("object:").map(|rest| EntityId::Object(rest.to_string()))
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::Arm(a) => write!(f, "arm:{a}"),
            EntityId::Object(o) => write!(f, "object:{o}"),
        }
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        EntityId::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad entity id `{s}`")))
    }
}

/// Segment with a radius. `a == b` is a sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

/// A primitive placed in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum PlacedShape {
    Sphere { center: Vector3<f64>, radius: f64 },
    Capsule { p0: Vector3<f64>, p1: Vector3<f64>, radius: f64 },
    Box { pose: Pose, half_extents: [f64; 3] },
}

impl PlacedShape {
    pub fn capsules(&self) -> Vec<Capsule> {
        match self {
            PlacedShape::Sphere { center, radius } => {
                vec![Capsule { a: *center, b: *center, radius: *radius }]
            }
            PlacedShape::Capsule { p0, p1, radius } => vec![Capsule { a: *p0, b: *p1, radius: *radius }],
            PlacedShape::Box { pose, half_extents } => box_capsules(pose, half_extents),
        }
    }

    /// Same shape with its radius grown by `delta` (boxes grow on every side).
    pub fn inflated(&self, delta: f64) -> PlacedShape {
        match self {
            PlacedShape::Sphere { center, radius } => {
                PlacedShape::Sphere { center: *center, radius: radius + delta }
            }
            PlacedShape::Capsule { p0, p1, radius } => {
                PlacedShape::Capsule { p0: *p0, p1: *p1, radius: radius + delta }
            }
            PlacedShape::Box { pose, half_extents } => PlacedShape::Box {
                pose: *pose,
                half_extents: half_extents.map(|h| h + delta),
            },
        }
    }
}

/// One capsule per longest axis; the radius covers the other two half extents.
fn box_capsules(pose: &Pose, h: &[f64; 3]) -> Vec<Capsule> {
    let longest = h.iter().cloned().fold(f64::MIN, f64::max);
    let rot = yaw_rotation(pose.yaw);
    let centre = pose.position();
    (0..3)
        .filter(|&axis| h[axis] == longest)
        .map(|axis| {
            let radius = (0..3)
                .filter(|&o| o != axis)
                .map(|o| h[o] * h[o])
                .sum::<f64>()
                .sqrt();
            let mut dir = Vector3::zeros();
            dir[axis] = longest;
            let d = rot * dir;
            Capsule { a: centre - d, b: centre + d, radius }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: EntityId,
    pub shapes: Vec<PlacedShape>,
}

impl Entity {
    pub fn new(id: EntityId, shapes: Vec<PlacedShape>) -> Self {
        Entity { id, shapes }
    }
}

/// First colliding pair, ordered so that `a < b`, and the midpoint of their
/// closest approach.
#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub a: EntityId,
    pub b: EntityId,
    pub position: Vector3<f64>,
}

/// Closest points between segments `p1q1` and `p2q2`.
pub fn closest_points_segments(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    const EPS: f64 = 1e-15;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    let (s, t);
    if a <= EPS && e <= EPS {
        return (*p1, *p2);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p1 + d1 * s, p2 + d2 * t)
}

/// Signed clearance between two capsules (negative when they overlap) and
/// the midpoint of closest approach.
pub fn capsule_clearance(x: &Capsule, y: &Capsule) -> (f64, Vector3<f64>) {
    let (c1, c2) = closest_points_segments(&x.a, &x.b, &y.a, &y.b);
    ((c1 - c2).norm() - x.radius - y.radius, (c1 + c2) * 0.5)
}

/// Deepest overlap between two entities, if any. Arguments are taken in the
/// given order; callers canonicalize.
fn entity_overlap(x: &Entity, y: &Entity) -> Option<Vector3<f64>> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let xs: Vec<Capsule> = x.shapes.iter().flat_map(|s| s.capsules()).collect();
    let ys: Vec<Capsule> = y.shapes.iter().flat_map(|s| s.capsules()).collect();
    for cx in &xs {
        for cy in &ys {
            let (clear, mid) = capsule_clearance(cx, cy);
            if clear < 0.0 && best.is_none_or(|(b, _)| clear < b) {
                best = Some((clear, mid));
            }
        }
    }
    best.map(|(_, m)| m)
}

/// Checks every pair of entities except those for which `skip` returns true.
///
/// Entities are sorted by id before testing, so the verdict and the reported
/// contact do not depend on the order of `entities` or on which side of a
/// pair an entity appears.
pub fn check_collision_with<F>(entities: &[Entity], skip: F) -> Option<Contact>
where
    F: Fn(&EntityId, &EntityId) -> bool,
{
    let mut sorted: Vec<&Entity> = entities.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for i in 0..sorted.len() {
        for j in (i + 1)..sorted.len() {
            let (x, y) = (sorted[i], sorted[j]);
            if x.id.cmp(&y.id) == Ordering::Equal || skip(&x.id, &y.id) || skip(&y.id, &x.id) {
                continue;
            }
            if let Some(position) = entity_overlap(x, y) {
                return Some(Contact { a: x.id.clone(), b: y.id.clone(), position });
            }
        }
    }
    None
}

/// [`check_collision_with`] without exclusions.
pub fn check_collision(entities: &[Entity]) -> Option<Contact> {
    check_collision_with(entities, |_, _| false)
}
