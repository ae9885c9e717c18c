//! Agentic feature-program search over relational databases.
//!
//! The search phase lets a policy explore a task's relational context,
//! submit SQL feature programs with model configs and read back validation
//! feedback from a persistent workspace. The inference phase deploys the
//! best validated program with the built-in boosted-tree learner.

pub mod agent;
pub mod clock;
pub mod featprog;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod relstore;
pub mod select;
pub mod sqllex;
pub mod synthbench;
pub mod workspace;
