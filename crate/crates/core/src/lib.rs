//! Bi-level evolution of symbolic reward functions.
//!
//! A grammar policy (the meta-optimizer) samples reward expressions over
//! normalized atomic primitives. Each expression trains a fresh task policy
//! with group-relative policy optimization; the trained policy's greedy
//! validation accuracy is the reward that updates the grammar policy.
//!
//! The numeric core (expression evaluation, primitives, the GRPO engine and
//! the graph meta-optimizer) is generic over [`Scalar`]; the aliases below
//! fix the scalar to `f64`, which the orchestration layers use.

pub mod archive;
pub mod commands;
pub mod config;
pub mod dsl;
pub mod envs;
pub mod grpo;
pub mod inner;
pub mod meta;
pub mod orchestrator;
pub mod primitives;
mod scalar;
pub mod seed;

pub use scalar::Scalar;

/// Version stamped into every CSV and JSON file this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub type Policy = grpo::CategoricalPolicy<f64>;
pub type PrimitiveVector = primitives::PrimitiveVector<f64>;
pub type GraphMetaParams = meta::graph::GraphMetaParams<f64>;
pub type SurrogateOutput = grpo::SurrogateOutput<f64>;
pub type GroupBatch = grpo::GroupBatch<f64>;
