//! Training-free keyframe pick-and-place from stored demonstrations.
//!
//! Each demonstration is stored as combined point clouds (the two objects
//! of a stage placed in their demonstrated relative pose), keyed by a
//! task/stage string. At inference the observed object clouds are
//! registered against every stored cloud for the key, the best-scoring
//! pair is kept, and its registration poses are turned into pick,
//! preplace and place actions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod demo_store;
pub mod error;
pub mod features;
pub mod geometry;
pub mod par;
pub mod policy;
pub mod registration;
pub mod synth;

pub use demo_store::{DemoSample, DemoStore, KeyframeDemo, Stage};
pub use error::{Error, Result};
pub use geometry::{PointCloud, RigidTransform};
pub use policy::{KeyframeAction, PairRegistration, Role};
pub use registration::{RegistrationParams, RegistrationResult};
