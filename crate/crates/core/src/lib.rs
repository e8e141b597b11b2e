//! Distributed online associative memory.
//!
//! `N` agents each keep a linear associative memory `X_n` (a `d_v × d_k`
//! matrix) and optimize it online against a weighted mix of their own and
//! other agents' key/value streams. Three learners are provided: idealized
//! full-information OGD, consensus-based decentralized OGD, and delayed OGD
//! whose gradients travel over per-agent Steiner routing trees. The crate
//! computes exact regret against hindsight-optimal memories and evaluates the
//! closed-form regret bounds of each learner.
//!
//! Module map:
//!
//! * [`graph`]: topology, shortest paths, Steiner trees, delay tables
//! * [`losses`]: retrieval objectives, gradients, domain projection
//! * [`datagen`]: synthetic streams, logical weights, mixing matrices
//! * [`protocols`]: the three learners and the message engine
//! * [`regret`]: comparators, regret traces, bounds
//! * [`harness`]: configuration, experiments, sweeps, CSV output
//! * [`oracle`]: independent reference computations for verification

pub mod datagen;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod oracle;
pub mod protocols;
pub mod regret;
pub mod seed;

pub use graph::AgentId;
pub use losses::{DataPoint, DomainBall, LossKind, LossVariant, Matrix, Vector};
pub use protocols::Protocol;
