pub mod corpus;
pub mod fixtures;
pub mod gateway;
pub mod hitl;
pub mod metrics;
pub mod prompt;
pub mod rubric;
pub mod runner;
mod util;
pub mod workspace;
