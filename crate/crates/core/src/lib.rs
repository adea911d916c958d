//! Archetype clustering, solver-portfolio rollout and skill-library learning
//! for natural-language optimization problems.

pub mod archetype;
pub mod clock;
pub mod clustering;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod pipeline;
pub mod prompts;
pub mod providers;
pub mod rollout;
pub mod sandbox;
pub mod skills;
mod structured;
