//! Multi-modal query plan optimizer.
//!
//! Plans over relational (`Select`, `Join`) and visual (object detection,
//! object counting) operators are improved by guided cost descent: a
//! proposer suggests rewritten plans, an error monitor rejects invalid or
//! inequivalent ones, and a cost model decides whether each valid proposal
//! improved on the last.

pub mod classifier;
pub mod cost;
pub mod gcd;
pub mod llm;
pub mod monitor;
pub mod plan;
pub mod proposer;
pub mod rewrite;
pub mod workload;
