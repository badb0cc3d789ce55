use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{plan_cost, plan_cost_with, Catalog, CostError, CostParams};
use crate::plan::{normalize_phrase, Operator, OperatorKind, PlanNode};

/// Default spread of unmatched parameters, as a log-scale factor.
pub const DEFAULT_JITTER: f64 = 0.5;

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

/// How true execution parameters relate to the estimator's.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SimProfile {
    /// True parameters equal the estimator's, so time equals estimated cost.
    Matched,
    /// Per-kind costs and per-operator selectivities are each scaled by
    /// `exp(jitter * u)` with `u` uniform in [-1, 1], drawn from `seed`.
    /// Selectivities are capped at 1.
    Unmatched {
        seed: u64,
        #[serde(default = "default_jitter")]
        jitter: f64,
    },
}

impl SimProfile {
    pub fn unmatched(seed: u64) -> Self {
        SimProfile::Unmatched {
            seed,
            jitter: DEFAULT_JITTER,
        }
    }
}

fn scale(rng: &mut ChaCha8Rng, jitter: f64) -> f64 {
    (jitter * rng.gen_range(-1.0..=1.0)).exp()
}

fn true_rho(seed: u64, jitter: f64, params: &CostParams) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OperatorKind::FILTERS.map(|k| params.rho.get(k).unwrap_or(0.0) * scale(&mut rng, jitter))
}

/// Selectivity is a property of the operator's condition, so the draw is
/// keyed by the operator's normalized text and survives plan rewrites.
fn true_alpha(seed: u64, jitter: f64, op: &Operator, params: &CostParams) -> f64 {
    let mut h = DefaultHasher::new();
    normalize_phrase(&op.to_string()).hash(&mut h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h.finish());
    (params.alpha.get(op.kind()).unwrap_or(1.0) * scale(&mut rng, jitter)).min(1.0)
}

/// Simulated execution time of `plan`.
pub fn simulate_time(
    plan: &PlanNode,
    catalog: &Catalog,
    params: &CostParams,
    profile: &SimProfile,
) -> Result<f64, CostError> {
    match *profile {
        SimProfile::Matched => plan_cost(plan, catalog, params),
        SimProfile::Unmatched { seed, jitter } => {
            let rho = true_rho(seed, jitter, params);
            plan_cost_with(plan, catalog, &|op: &Operator| {
                let idx = OperatorKind::FILTERS.iter().position(|k| *k == op.kind());
                let r = idx.map_or(0.0, |i| rho[i]);
                (r, true_alpha(seed, jitter, op, params))
            })
        }
    }
}
