//! Multi-actor collaborative data selection.
//!
//! A labeled pool of pre-featurized documents is scored by independent
//! actors (quality, domain, topic, or any pluggable label), each keeping a
//! reward-driven weight per subcategory. An actor console fuses the actor
//! scores with collaborative weights that adapt to each actor's aggregate
//! reward, and picks the top-k subset used for the next training stage.
//! Rewards come from exact influence functions on small convex models.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actors;
pub mod analysis;
pub mod cli;
pub mod console;
pub mod corpus;
pub mod error;
pub mod initializer;
pub mod linalg;
pub mod pipeline;
pub mod reward;
pub mod rng;

pub use actors::{ActorMemory, Attribute, SubcategoryRewardReport};
pub use console::{AggregateNorm, ConsoleState, Regime};
pub use corpus::{Corpus, DataPoint, LabelRegistry};
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, SelectionRun};
pub use reward::{InfluenceConfig, ModelKind, ReferenceTask, RewardModel};
