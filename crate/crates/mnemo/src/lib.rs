//! Deterministic memory, reward, and policy-optimization toolkit for GUI
//! agents.
//!
//! The crate bundles five cooperating subsystems:
//!
//! - [`memory`]: a hierarchical test-time store with an episodic sliding
//!   window over recent transitions, semantic rule entries, and
//!   experiential trajectory entries retrieved by blended cosine
//!   similarity over intent and initial-screen embeddings.
//! - [`reward`]: hierarchical scoring of raw model turns, gating on
//!   format before weighing action type against parameter accuracy
//!   (point-in-box, IoU-thresholded overlap, or arithmetic answer
//!   verification).
//! - [`optim`]: a group-relative policy objective with token-level
//!   importance ratios, asymmetric adaptive clipping on a cosine
//!   schedule, a non-negative per-token KL estimate, and a
//!   finite-difference-checked reference implementation on a tabular
//!   softmax policy.
//! - [`hindsight`]: relabeling failed trajectories to the shortest
//!   verified prefix that achieves a sub-goal, plus filtering and seeded
//!   dataset splitting.
//! - [`sim`]: a scripted, hit-tested GUI environment with seeded layout
//!   jitter, oracle and context-gated policies, and a full
//!   retrieve-act-record episode loop.
//!
//! Everything is deterministic: embeddings are feature-hashed, RNG use is
//! seeded, floating-point reductions are fixed-order, ranking ties break
//! on entry ids, and files are written atomically with checksums, so
//! byte-identical inputs yield byte-identical outputs.

pub mod config;
pub mod embed;
pub mod error;
pub mod fixtures;
pub mod hindsight;
pub mod memory;
pub mod optim;
pub mod parser;
pub mod records;
pub mod reward;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
