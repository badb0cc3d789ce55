//! Prompt assembly from the template files under `prompts/`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ProposalContext;
use crate::cost::render_cost;
use crate::plan::{parse_plan, serialize_plan, serialize_plan_pretty, PlanNode};

/// Bumped whenever a template file changes.
pub const PROMPT_VERSION: &str = "v1";

/// History entries shown to the proposer, most recent last.
pub const HISTORY_CAP: usize = 8;

const PREAMBLE: &str = include_str!("../../prompts/preamble.txt");
const POLICIES: &str = include_str!("../../prompts/policies.txt");
const GRAMMAR: &str = include_str!("../../prompts/grammar.txt");
const EXAMPLES: &str = include_str!("../../prompts/examples.json");
const INSTRUCTION_REQUEST: &str = include_str!("../../prompts/instruction_request.txt");
const OUTPUT_FORMAT: &str = include_str!("../../prompts/output_format.txt");

#[derive(Clone, Debug, PartialEq)]
pub struct ExamplePair {
    pub description: String,
    pub initial: PlanNode,
    pub optimized: PlanNode,
}

#[derive(Deserialize, Serialize)]
struct RawExample {
    description: String,
    initial: serde_json::Value,
    optimized: serde_json::Value,
}

/// Policy texts without their list numbers.
pub fn default_policies() -> Vec<String> {
    POLICIES
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let l = l.trim();
            match l.split_once(". ") {
                Some((n, rest)) if n.chars().all(|c| c.is_ascii_digit()) => rest.to_string(),
                _ => l.to_string(),
            }
        })
        .collect()
}

pub fn default_examples() -> Vec<ExamplePair> {
    let raw: Vec<RawExample> = serde_json::from_str(EXAMPLES).expect("shipped examples are valid JSON");
    raw.into_iter()
        .map(|r| ExamplePair {
            description: r.description,
            initial: parse_plan(&r.initial.to_string()).expect("shipped example plan parses"),
            optimized: parse_plan(&r.optimized.to_string()).expect("shipped example plan parses"),
        })
        .collect()
}

fn section(out: &mut String, title: &str, body: &str) {
    if body.trim().is_empty() {
        return;
    }
    if !out.is_empty() {
        out.push('\n');
    }
    let _ = writeln!(out, "# {title}");
    out.push_str(body.trim_end());
    out.push('\n');
}

fn policies_body(ctx: &ProposalContext) -> String {
    ctx.policies
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. {p}\n", i + 1))
        .collect()
}

fn examples_body(ctx: &ProposalContext) -> String {
    let mut s = String::new();
    for (i, ex) in ctx.examples.iter().enumerate() {
        let _ = writeln!(s, "Example {}: {}", i + 1, ex.description);
        let _ = writeln!(s, "initial_plan = {}", serialize_plan_pretty(&ex.initial));
        let _ = writeln!(s, "optimized_plan = {}", serialize_plan_pretty(&ex.optimized));
    }
    s
}

fn history_body(ctx: &ProposalContext) -> String {
    let n = ctx.history_plans.len();
    let skip = n.saturating_sub(HISTORY_CAP);
    let mut s = String::new();
    for (i, plan) in ctx.history_plans.iter().enumerate().skip(skip) {
        match ctx.history_costs.get(i).filter(|_| ctx.include_cost_feedback) {
            Some(c) => {
                let _ = writeln!(s, "Plan {} (estimated cost: {}):", i + 1, render_cost(*c));
            }
            None => {
                let _ = writeln!(s, "Plan {}:", i + 1);
            }
        }
        let _ = writeln!(s, "{}", serialize_plan(plan));
    }
    s
}

/// Feedback as shown to the proposer. Cost verdicts never reach a lite
/// prompt, even if the caller passed one in.
fn visible_feedback(ctx: &ProposalContext) -> &str {
    let f = ctx.feedback.as_str();
    if !ctx.include_cost_feedback && (f.starts_with("Improved") || f.starts_with("No improvement")) {
        return "";
    }
    f
}

fn latest_body(ctx: &ProposalContext) -> String {
    let mut s = serialize_plan_pretty(&ctx.latest_plan);
    s.push('\n');
    if ctx.include_cost_feedback {
        let _ = writeln!(s, "Estimated cost: {}", render_cost(ctx.latest_cost));
    }
    s
}

/// The first request: asks the model how it will instruct itself.
pub fn instruction_request(ctx: &ProposalContext) -> String {
    let mut out = String::new();
    out.push_str(PREAMBLE.trim_end());
    out.push('\n');
    section(&mut out, "Optimization policies", &policies_body(ctx));
    section(&mut out, "Operators", GRAMMAR);
    section(&mut out, "Feedback on your last plan", visible_feedback(ctx));
    section(&mut out, "Plan to optimize", &latest_body(ctx));
    section(&mut out, "Task", INSTRUCTION_REQUEST);
    out
}

/// The second request, carrying the model's own instruction.
pub fn optimization_request(ctx: &ProposalContext, self_instruction: &str) -> String {
    let mut out = String::new();
    out.push_str(PREAMBLE.trim_end());
    out.push('\n');
    section(&mut out, "Optimization policies", &policies_body(ctx));
    section(&mut out, "Operators", GRAMMAR);
    section(&mut out, "Examples", &examples_body(ctx));
    section(&mut out, "Previous valid plans (oldest first)", &history_body(ctx));
    section(&mut out, "Feedback on your last plan", visible_feedback(ctx));
    section(&mut out, "Plan to optimize", &latest_body(ctx));
    section(&mut out, "Your optimization instruction", self_instruction);
    section(&mut out, "Output format", OUTPUT_FORMAT);
    out
}

pub fn compose_prompts(ctx: &ProposalContext, self_instruction: &str) -> (String, String) {
    (instruction_request(ctx), optimization_request(ctx, self_instruction))
}
