//! Plan proposers: the step of the descent loop that suggests a new plan.
//!
//! Every proposer sees the same [`ProposalContext`] and returns plan text;
//! whether that text is a valid plan is decided downstream.

mod llm;
mod prompt;
mod rules;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{serialize_plan, PlanNode};

pub use llm::LlmProposer;
pub use prompt::{
    compose_prompts, default_examples, default_policies, instruction_request, optimization_request,
    ExamplePair, PROMPT_VERSION,
};
pub use rules::{closure_minimum, ClosureMinimum, ExhaustiveProposer, GreedyProposer, DEFAULT_NODE_BUDGET};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProposeError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no JSON plan in reply")]
    MalformedReply { raw: String },
    #[error("plan has {operators} operators, budget is {budget}")]
    BudgetExceeded { operators: usize, budget: usize },
    #[error("rewrite closure exceeded {0} states")]
    ClosureTooLarge(usize),
}

impl From<crate::llm::LlmError> for ProposeError {
    fn from(e: crate::llm::LlmError) -> Self {
        match e {
            crate::llm::LlmError::Transport(m) => ProposeError::Transport(m),
            crate::llm::LlmError::MalformedReply(raw) => ProposeError::MalformedReply { raw },
        }
    }
}

/// What the proposer is told at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalContext {
    pub policies: Vec<String>,
    pub examples: Vec<ExamplePair>,
    /// Valid plans so far, oldest first.
    pub history_plans: Vec<PlanNode>,
    pub history_costs: Vec<f64>,
    pub latest_plan: PlanNode,
    pub latest_cost: f64,
    pub feedback: String,
    /// False in lite mode: no costs and no cost verdicts reach the prompt.
    pub include_cost_feedback: bool,
}

impl ProposalContext {
    /// Context for the first iteration on `plan`, with the shipped policies
    /// and examples.
    pub fn initial(plan: PlanNode, cost: f64, include_cost_feedback: bool) -> Self {
        ProposalContext {
            policies: default_policies(),
            examples: default_examples(),
            history_plans: Vec::new(),
            history_costs: Vec::new(),
            latest_plan: plan,
            latest_cost: cost,
            feedback: String::new(),
            include_cost_feedback,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub plan_text: String,
    pub rationale: String,
    pub proposer_id: String,
}

pub trait Proposer: Send {
    fn id(&self) -> &str;

    /// Called before each independent run of an aggregated optimization.
    /// Run 0 must behave exactly like a plain run.
    fn begin_run(&mut self, _run: usize) {}

    fn propose(&mut self, ctx: &ProposalContext) -> Result<Proposal, ProposeError>;
}

impl<P: Proposer + ?Sized> Proposer for Box<P> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn begin_run(&mut self, run: usize) {
        (**self).begin_run(run)
    }
    fn propose(&mut self, ctx: &ProposalContext) -> Result<Proposal, ProposeError> {
        (**self).propose(ctx)
    }
}

/// Replays a fixed list of outcomes and keeps every context it was given.
/// After the script ends it re-proposes the latest plan.
#[derive(Debug, Default)]
pub struct ScriptedProposer {
    script: VecDeque<Result<String, ProposeError>>,
    seen: Vec<ProposalContext>,
}

impl ScriptedProposer {
    pub fn new(script: Vec<Result<String, ProposeError>>) -> Self {
        ScriptedProposer {
            script: script.into(),
            seen: Vec::new(),
        }
    }

    pub fn plans<I, S>(plans: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(plans.into_iter().map(|p| Ok(p.into())).collect())
    }

    pub fn contexts(&self) -> &[ProposalContext] {
        &self.seen
    }
}

impl Proposer for ScriptedProposer {
    fn id(&self) -> &str {
        "scripted"
    }

    fn propose(&mut self, ctx: &ProposalContext) -> Result<Proposal, ProposeError> {
        self.seen.push(ctx.clone());
        let plan_text = match self.script.pop_front() {
            Some(step) => step?,
            None => serialize_plan(&ctx.latest_plan),
        };
        Ok(Proposal {
            plan_text,
            rationale: String::new(),
            proposer_id: self.id().to_string(),
        })
    }
}
