//! Rule-based proposers built on the policy rewrites.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Proposal, ProposalContext, ProposeError, Proposer};
use crate::cost::{plan_cost, Catalog, CostParams, COST_EPSILON};
use crate::monitor::PhraseMatcher;
use crate::plan::{canonical_key, serialize_plan, PlanNode};
use crate::rewrite::{all_rewrites, all_rewrites_keyed};

/// Largest plan, in non-scan operators, the exhaustive search accepts.
pub const DEFAULT_NODE_BUDGET: usize = 12;

/// States visited before the exhaustive search gives up.
pub const DEFAULT_STATE_CAP: usize = 250_000;

/// Applies the single cheapest rewrite, or returns the plan unchanged when
/// no rewrite lowers its cost.
#[derive(Clone)]
pub struct GreedyProposer {
    catalog: Catalog,
    params: CostParams,
    matcher: PhraseMatcher,
    seed: u64,
    rng: Option<ChaCha8Rng>,
}

impl GreedyProposer {
    pub fn new(catalog: Catalog, params: CostParams, matcher: PhraseMatcher) -> Self {
        GreedyProposer {
            catalog,
            params,
            matcher,
            seed: 0,
            rng: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Cheapest one-step rewrite of `plan`, if it is strictly cheaper.
    pub fn step(&mut self, plan: &PlanNode) -> Option<(PlanNode, String)> {
        let current = plan_cost(plan, &self.catalog, &self.params).ok()?;
        let mut scored: Vec<_> = all_rewrites(plan, &self.catalog, &self.params, &self.matcher)
            .into_iter()
            .filter_map(|r| {
                plan_cost(&r.result, &self.catalog, &self.params)
                    .ok()
                    .map(|c| (c, r))
            })
            .collect();
        let best = scored.iter().map(|(c, _)| *c).fold(f64::INFINITY, f64::min);
        if best >= current - COST_EPSILON {
            return None;
        }
        // Rewrites arrive ordered by policy then site; keep that order
        // among exact ties unless a run seed asks for a shuffle.
        scored.retain(|(c, _)| (c - best).abs() <= COST_EPSILON);
        if let Some(rng) = self.rng.as_mut() {
            scored.shuffle(rng);
        }
        let (cost, r) = scored.swap_remove(0);
        Some((
            r.result,
            format!("{} at {}: {} (cost {current:.2} -> {cost:.2})", r.policy, r.site, r.description),
        ))
    }
}

impl Proposer for GreedyProposer {
    fn id(&self) -> &str {
        "greedy"
    }

    fn begin_run(&mut self, run: usize) {
        self.rng = (run > 0).then(|| ChaCha8Rng::seed_from_u64(self.seed ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    }

    fn propose(&mut self, ctx: &ProposalContext) -> Result<Proposal, ProposeError> {
        let (plan, rationale) = self
            .step(&ctx.latest_plan)
            .unwrap_or_else(|| (ctx.latest_plan.clone(), "no improving rewrite".to_string()));
        Ok(Proposal {
            plan_text: serialize_plan(&plan),
            rationale,
            proposer_id: self.id().to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosureMinimum {
    pub plan: PlanNode,
    pub cost: f64,
    /// Distinct canonical plans reached, the start included.
    pub states: usize,
}

/// Cheapest plan reachable from `start` by any sequence of rewrites. Ties
/// go to the smaller canonical serialization.
pub fn closure_minimum(
    start: &PlanNode,
    catalog: &Catalog,
    params: &CostParams,
    matcher: &PhraseMatcher,
    state_cap: usize,
) -> Result<ClosureMinimum, ProposeError> {
    let start_cost = plan_cost(start, catalog, params).unwrap_or(f64::INFINITY);
    let mut best = (start_cost, canonical_key(start), start.clone());
    let mut seen = HashSet::from([best.1.clone()]);
    let mut queue = VecDeque::from([start.clone()]);
    while let Some(plan) = queue.pop_front() {
        for (r, key) in all_rewrites_keyed(&plan, catalog, params, matcher) {
            if !seen.insert(key.clone()) {
                continue;
            }
            if seen.len() > state_cap {
                return Err(ProposeError::ClosureTooLarge(state_cap));
            }
            let cost = plan_cost(&r.result, catalog, params).unwrap_or(f64::INFINITY);
            let better = cost < best.0 - COST_EPSILON
                || ((cost - best.0).abs() <= COST_EPSILON && key < best.1);
            if better {
                best = (cost, key, r.result.clone());
            }
            queue.push_back(r.result);
        }
    }
    Ok(ClosureMinimum {
        plan: best.2,
        cost: best.0,
        states: seen.len(),
    })
}

/// Jumps straight to the closure minimum. Meant as an oracle.
#[derive(Clone)]
pub struct ExhaustiveProposer {
    catalog: Catalog,
    params: CostParams,
    matcher: PhraseMatcher,
    node_budget: usize,
    state_cap: usize,
}

impl ExhaustiveProposer {
    pub fn new(catalog: Catalog, params: CostParams, matcher: PhraseMatcher) -> Self {
        ExhaustiveProposer {
            catalog,
            params,
            matcher,
            node_budget: DEFAULT_NODE_BUDGET,
            state_cap: DEFAULT_STATE_CAP,
        }
    }

    pub fn with_node_budget(mut self, budget: usize) -> Self {
        self.node_budget = budget;
        self
    }

    pub fn with_state_cap(mut self, cap: usize) -> Self {
        self.state_cap = cap;
        self
    }

    pub fn minimum(&self, plan: &PlanNode) -> Result<ClosureMinimum, ProposeError> {
        let operators = plan.operator_count();
        if operators > self.node_budget {
            return Err(ProposeError::BudgetExceeded {
                operators,
                budget: self.node_budget,
            });
        }
        closure_minimum(plan, &self.catalog, &self.params, &self.matcher, self.state_cap)
    }
}

impl Proposer for ExhaustiveProposer {
    fn id(&self) -> &str {
        "exhaustive"
    }

    fn propose(&mut self, ctx: &ProposalContext) -> Result<Proposal, ProposeError> {
        let m = self.minimum(&ctx.latest_plan)?;
        Ok(Proposal {
            plan_text: serialize_plan(&m.plan),
            rationale: format!("closure minimum over {} plans", m.states),
            proposer_id: self.id().to_string(),
        })
    }
}
