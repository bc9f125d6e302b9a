//! Context-aware sensor configuration: from a guided task dialog to a
//! ranked, validated and running stream pipeline.

pub mod advisor;
pub mod bundled;
pub mod context;
pub mod cost;
pub mod kb;
pub mod planner;
pub mod qa;
pub mod registry;
pub mod runtime;
pub mod service;
pub mod synth;
