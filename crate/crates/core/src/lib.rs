//! Sinkless orientation toolkit: graph generators and validators, a
//! deterministic LOCAL/SLOCAL execution harness with locality accounting,
//! the greedy high-degree orientation and its clustering pipeline, and a
//! round-elimination refuter that produces checkable counterexamples for
//! candidate low-locality algorithms on small support graphs.

pub mod accept;
pub mod cluster;
pub mod exec;
pub mod graph;
pub mod greedy;
pub mod orient;
pub mod refute;
pub mod report;
