//! Core library for the social mirror platform: the mutual-follow network,
//! its layout, ideology-based diversity scores, follow recommendations, the
//! experiment event store and the statistical analyses run on its exports.

pub mod experiment;
pub mod ideology;
pub mod layout;
pub mod network;
pub mod recommender;
pub mod stats;
pub mod tables;

pub use experiment::{ExperimentError, ExperimentStore, Session, SessionId, TreatmentArm};
pub use ideology::{IdeologyLabel, LabelMap};
pub use network::{AccountId, MutualGraph, PageRankVector};
