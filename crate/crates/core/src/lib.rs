//! Reflective multi-arm manipulation planning at desk scale.
//!
//! The crate is organised around one episode loop:
//!
//! * [`world`]: kinematic multi-arm workspace, task files, observations and
//!   success predicates.
//! * [`plan`]: the plan action language, its parser/serializer and prompt
//!   assembly.
//! * [`validate`]: analytic kinematics, interpolation, narrow-phase collision
//!   checks and structured failure feedback.
//! * [`skills`]: exemplar store, skill extraction, Jaccard clustering and
//!   retrieval.
//! * [`metacog`]: stage-tagged guidance input, plan synthesis, reflection and
//!   the episode state machine.
//! * [`llm`]: chat-completion backends (HTTP, scripted fixtures, replay) and
//!   transcript recording.
//! * [`bench`]: rounds over tasks and variants, metrics and reports.

pub mod bench;
pub mod llm;
pub mod metacog;
pub mod plan;
pub mod skills;
pub mod validate;
pub mod world;

mod angle;

pub use angle::normalize_angle;
