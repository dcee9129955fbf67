//! Multi-agent prompt optimization as MAP inference over an agent graph.

pub mod harness;
pub mod inference;
pub mod orchestrator;
pub mod refinement;
pub mod scoring;
pub mod templates;
pub mod topology;
