//! Storage-bounded camera pose regression from image descriptors.
//!
//! A pose is written as 7 IEEE-754 floats and flattened to a binary label.
//! A column subset of the training label matrix is kept, ridge regression
//! predicts those columns from descriptors, and a fixed lifting matrix plus a
//! threshold turns the prediction back into bits and then into a pose.
//! Descriptors are first routed to one of `k` clusters, each with its own
//! model. Optional windowed pose-graph refinement smooths translations.

pub mod bench;
pub mod codec;
pub mod config;
pub mod data;
pub mod embed;
pub mod format;
pub mod pgo;
pub mod pipeline;
pub mod pose;
pub mod ridge;
pub mod route;
pub mod stats;

pub use codec::{decode_pose, encode_pose, BinaryLabel, DecodeFailure, Precision};
pub use config::{CssStrategy, TrainConfig};
pub use pipeline::{storage_bytes, train, ModelBundle};
pub use pose::{Dataset, PoseVector, Sample};
