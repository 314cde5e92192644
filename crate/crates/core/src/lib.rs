//! Ego network features for cross-target stance detection.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! * [`corpus`] loads interaction logs, labelled posts, auxiliary graphs and
//!   external text-model predictions.
//! * [`syngen`] produces a synthetic corpus with planted stance homophily.
//! * [`enm`] turns interaction frequencies into concentric ego networks.
//! * [`senm`] scores interaction sentiment and signs ego-alter relationships.
//! * [`embed`] runs node2vec over a feature graph.
//! * [`clf`] trains the per-feature feed-forward classifier.
//! * [`ensemble`] combines per-feature predictions by majority vote.
//! * [`harness`] runs the few-shot cross-target protocol and reports macro-F1.

pub mod clf;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod enm;
pub mod ensemble;
pub mod error;
pub mod feature;
pub mod harness;
pub mod senm;
pub mod syngen;
mod util;

pub use error::{Error, Result};
pub use feature::{Feature, FeatureSet};
