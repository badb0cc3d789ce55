//! Guided cost descent: propose, check, estimate, repeat until the
//! proposer fails to improve `tolerance` times in a row.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{plan_cost, render_cost, Catalog, CostError, CostParams, COST_EPSILON};
use crate::monitor::{check_plan, check_structure, PhraseMatcher, PlanError};
use crate::plan::{canonical_key, parse_plan, serialize_plan, PlanNode};
use crate::proposer::{default_examples, default_policies, ExamplePair, ProposalContext, Proposer};

pub const DEFAULT_TOLERANCE: usize = 3;
pub const DEFAULT_ITERATION_CAP: usize = 25;
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum GcdError {
    #[error("initial plan is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidInitialPlan(Vec<PlanError>),
    #[error("initial plan cannot be costed: {0}")]
    Cost(#[from] CostError),
    #[error("tolerance must be at least 1")]
    ZeroTolerance,
}

/// The three messages the loop sends back to the proposer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Feedback {
    Improved(f64),
    NoImprovement(f64),
    Invalid,
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feedback::Improved(c) => write!(f, "Improved: {}", render_cost(*c)),
            Feedback::NoImprovement(c) => write!(f, "No improvement: {}", render_cost(*c)),
            Feedback::Invalid => f.write_str("No valid optimization generated"),
        }
    }
}

/// Everything needed to judge a proposal.
#[derive(Clone, Copy)]
pub struct Supervisor<'a> {
    pub catalog: &'a Catalog,
    pub params: &'a CostParams,
    pub matcher: &'a PhraseMatcher,
}

impl<'a> Supervisor<'a> {
    pub fn new(catalog: &'a Catalog, params: &'a CostParams, matcher: &'a PhraseMatcher) -> Self {
        Supervisor {
            catalog,
            params,
            matcher,
        }
    }

    /// The parsed plan when `text` is valid against `initial`, else the
    /// errors found.
    pub fn check(&self, text: &str, initial: &PlanNode) -> Result<PlanNode, Vec<PlanError>> {
        let plan = parse_plan(text).map_err(|e| vec![PlanError::unparseable(e.to_string())])?;
        let errors = check_plan(&plan, initial, self.catalog, self.matcher);
        if errors.is_empty() {
            Ok(plan)
        } else {
            Err(errors)
        }
    }

    pub fn cost(&self, plan: &PlanNode) -> Result<f64, CostError> {
        plan_cost(plan, self.catalog, self.params)
    }
}

#[derive(Clone, Debug)]
pub struct GcdConfig {
    pub tolerance: usize,
    pub iteration_cap: usize,
    /// Withhold costs and cost verdicts from the proposer.
    pub lite: bool,
    pub policies: Vec<String>,
    pub examples: Vec<ExamplePair>,
}

impl Default for GcdConfig {
    fn default() -> Self {
        GcdConfig {
            tolerance: DEFAULT_TOLERANCE,
            iteration_cap: DEFAULT_ITERATION_CAP,
            lite: false,
            policies: default_policies(),
            examples: default_examples(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Proposed plan text; empty when the proposer itself failed.
    pub proposal: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub proposer_error: Option<String>,
    pub errors: Vec<PlanError>,
    pub cost: Option<f64>,
    pub feedback: String,
    /// The proposal was valid and became the latest plan.
    pub accepted: bool,
    pub wrong_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    IterationCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcdTrace {
    pub records: Vec<IterationRecord>,
    pub initial_cost: f64,
    pub best_plan: String,
    pub best_cost: f64,
    pub termination: Termination,
}

impl GcdTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// One JSON object per iteration.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "initial_cost": self.initial_cost,
            "best_cost": self.best_cost,
            "best_plan": serde_json::from_str::<serde_json::Value>(&self.best_plan).unwrap_or_default(),
            "iterations": self.iterations(),
            "termination": self.termination,
        })
    }
}

#[derive(Clone, Debug)]
pub struct GcdOutcome {
    pub best: PlanNode,
    pub best_cost: f64,
    pub trace: GcdTrace,
}

/// Runs the descent loop from `p0` and returns the cheapest valid plan seen.
pub fn run_gcd(
    p0: &PlanNode,
    proposer: &mut dyn Proposer,
    sup: &Supervisor<'_>,
    config: &GcdConfig,
) -> Result<GcdOutcome, GcdError> {
    if config.tolerance == 0 {
        return Err(GcdError::ZeroTolerance);
    }
    let structural = check_structure(p0, sup.catalog);
    if !structural.is_empty() {
        return Err(GcdError::InvalidInitialPlan(structural));
    }
    let c0 = sup.cost(p0)?;
    let (mut p, mut c) = (p0.clone(), c0);
    let (mut best, mut best_cost) = (p0.clone(), c0);
    let mut history_plans: Vec<PlanNode> = Vec::new();
    let mut history_costs: Vec<f64> = Vec::new();
    let mut feedback: Option<Feedback> = None;
    let mut wrong = 0;
    let mut records = Vec::new();

    while wrong < config.tolerance && records.len() < config.iteration_cap {
        let shown_feedback = match feedback {
            Some(Feedback::Invalid) => Feedback::Invalid.to_string(),
            Some(f) if !config.lite => f.to_string(),
            _ => String::new(),
        };
        let ctx = ProposalContext {
            policies: config.policies.clone(),
            examples: config.examples.clone(),
            history_plans: history_plans.clone(),
            history_costs: history_costs.clone(),
            latest_plan: p.clone(),
            latest_cost: c,
            feedback: shown_feedback,
            include_cost_feedback: !config.lite,
        };
        let mut record = IterationRecord {
            iteration: records.len() + 1,
            proposal: String::new(),
            proposer_error: None,
            errors: Vec::new(),
            cost: None,
            feedback: String::new(),
            accepted: false,
            wrong_count: 0,
        };
        let checked = match proposer.propose(&ctx) {
            Ok(proposal) => {
                record.proposal = proposal.plan_text;
                sup.check(&record.proposal, p0)
            }
            Err(e) => {
                log::debug!("proposer failed: {e}");
                record.proposer_error = Some(e.to_string());
                Err(Vec::new())
            }
        };
        let verdict = match checked.map(|plan| sup.cost(&plan).map(|ci| (plan, ci))) {
            Ok(Ok((plan, ci))) => {
                let fb = if ci >= c - COST_EPSILON {
                    wrong += 1;
                    Feedback::NoImprovement(ci)
                } else {
                    if ci < best_cost - COST_EPSILON {
                        best = plan.clone();
                        best_cost = ci;
                    }
                    wrong = 0;
                    Feedback::Improved(ci)
                };
                record.cost = Some(ci);
                record.accepted = true;
                history_plans.push(plan.clone());
                history_costs.push(ci);
                p = plan;
                c = ci;
                fb
            }
            Ok(Err(e)) => {
                // A structurally valid plan always costs; treat a failure
                // like any other invalid proposal.
                record.errors = vec![PlanError::unparseable(e.to_string())];
                wrong += 1;
                Feedback::Invalid
            }
            Err(errors) => {
                record.errors = errors;
                wrong += 1;
                Feedback::Invalid
            }
        };
        record.feedback = verdict.to_string();
        record.wrong_count = wrong;
        feedback = Some(verdict);
        records.push(record);
    }

    let termination = if wrong >= config.tolerance {
        Termination::Tolerance
    } else {
        Termination::IterationCap
    };
    Ok(GcdOutcome {
        trace: GcdTrace {
            records,
            initial_cost: c0,
            best_plan: serialize_plan(&best),
            best_cost,
            termination,
        },
        best,
        best_cost,
    })
}

/// One plan offered to [`aggregate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub plan_text: String,
    pub valid: bool,
    /// Ignored for invalid candidates, which count as infinitely costly.
    pub cost: f64,
}

impl Candidate {
    pub fn valid(plan: &PlanNode, cost: f64) -> Self {
        Candidate {
            plan_text: serialize_plan(plan),
            valid: true,
            cost,
        }
    }

    pub fn invalid(plan_text: impl Into<String>) -> Self {
        Candidate {
            plan_text: plan_text.into(),
            valid: false,
            cost: f64::INFINITY,
        }
    }

    fn effective_cost(&self) -> f64 {
        if self.valid {
            self.cost
        } else {
            f64::INFINITY
        }
    }

    /// Canonical form when parseable, else the trimmed text.
    pub fn vote_key(&self) -> String {
        parse_plan(&self.plan_text)
            .map(|p| canonical_key(&p))
            .unwrap_or_else(|_| self.plan_text.trim().to_string())
    }
}

/// Index of the selected candidate: the most frequent canonical form, then
/// the cheapest, then the smallest canonical form. Only valid candidates
/// vote when any exist. `None` only for an empty slice.
pub fn aggregate(candidates: &[Candidate]) -> Option<usize> {
    let any_valid = candidates.iter().any(|c| c.valid);
    struct Group {
        count: usize,
        cost: f64,
        first: usize,
    }
    let mut groups: HashMap<String, Group> = HashMap::new();
    for (i, c) in candidates.iter().enumerate() {
        if any_valid && !c.valid {
            continue;
        }
        let g = groups.entry(c.vote_key()).or_insert(Group {
            count: 0,
            cost: f64::INFINITY,
            first: i,
        });
        g.count += 1;
        if c.effective_cost() < g.cost {
            g.cost = c.effective_cost();
            g.first = i;
        }
    }
    groups
        .into_iter()
        .min_by(|(ka, a), (kb, b)| {
            b.count
                .cmp(&a.count)
                .then(a.cost.total_cmp(&b.cost))
                .then_with(|| ka.cmp(kb))
        })
        .map(|(_, g)| g.first)
}

#[derive(Clone, Debug)]
pub struct AggregatedOutcome {
    pub best: PlanNode,
    pub best_cost: f64,
    /// Run whose plan was selected; `None` when every run failed.
    pub selected_run: Option<usize>,
    pub candidates: Vec<Candidate>,
    pub traces: Vec<Option<GcdTrace>>,
}

/// `k` independent descent runs followed by [`aggregate`].
pub fn run_aggregated(
    p0: &PlanNode,
    proposer: &mut dyn Proposer,
    sup: &Supervisor<'_>,
    config: &GcdConfig,
    k: usize,
) -> AggregatedOutcome {
    let mut candidates = Vec::with_capacity(k);
    let mut traces = Vec::with_capacity(k);
    let mut plans = Vec::with_capacity(k);
    for run in 0..k.max(1) {
        proposer.begin_run(run);
        match run_gcd(p0, proposer, sup, config) {
            Ok(out) => {
                candidates.push(Candidate::valid(&out.best, out.best_cost));
                plans.push(Some((out.best, out.best_cost)));
                traces.push(Some(out.trace));
            }
            Err(e) => {
                log::warn!("run {run} failed: {e}");
                candidates.push(Candidate::invalid(serialize_plan(p0)));
                plans.push(None);
                traces.push(None);
            }
        }
    }
    let selected = aggregate(&candidates).filter(|&i| candidates[i].valid);
    let (best, best_cost) = match selected.and_then(|i| plans[i].clone()) {
        Some(pc) => pc,
        None => (p0.clone(), sup.cost(p0).unwrap_or(f64::INFINITY)),
    };
    AggregatedOutcome {
        best,
        best_cost,
        selected_run: selected,
        candidates,
        traces,
    }
}
