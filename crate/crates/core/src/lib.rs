//! Multi-task generative travel recommendation: data model and synthetic
//! logs, S/I/F sequence construction, an HSTU decoder wrapped in task-gated
//! hyper connections, task-specific layer gating and expert-composed heads,
//! InfoNCE training, evaluation metrics and the experiment harness.

pub mod datastore;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod seqbuild;
mod task;

pub use task::Task;
