//! Synthetic workloads: a random query generator, a ground-truth execution
//! time simulator and the improvement metrics computed over a corpus.

mod generate;
mod report;
mod sim;

pub use generate::{demo_catalog, generate_corpus, generate_query, GeneratorLimits, WorkloadError, OBJECTS};
pub use report::{evaluate_method, MethodSummary, OptimizationReport, QueryRecord};
pub use sim::{simulate_time, SimProfile, DEFAULT_JITTER};
