//! Intent recognition for dyadic object co-manipulation.
//!
//! The crate turns synchronized force/velocity recordings of two people
//! carrying an object into per-participant intent predictions over a small
//! set of candidate goals:
//!
//! ```text
//! trial recording
//!   -> power channels (|P|, goal-projected P^i)      signals
//!   -> first action phase per participant            phase
//!   -> labeled window features (min/max/mean/std)    dataset
//!   -> reducer + classifier                          learn
//!   -> voting-filtered prediction streams, metrics   eval
//! ```
//!
//! [`simgen`] produces synthetic trials with ground truth, and [`pipeline`]
//! wires the stages together with versioned on-disk artifacts.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod formats;
pub mod learn;
pub mod phase;
pub mod pipeline;
pub mod rng;
pub mod signals;
pub mod simgen;
pub mod trial;

pub use error::{Error, Result};
pub use signals::{FeatureSet, Vec2};
pub use trial::{GoalLayout, GoalType, Participant, TrialRecording};
