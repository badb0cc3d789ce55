//! A chat model used as a pairwise execution-time classifier.
//!
//! Training appends each answered pair, with its judgment and the true
//! times, to the session prompt. Once frozen the session only classifies.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{compare_costs, plan_cost, Catalog, CostError, CostOrdering, CostParams, COST_EPSILON};
use crate::llm::{ChatClient, ChatMessage, LlmError, DEFAULT_TEMPERATURE};
use crate::plan::{serialize_plan_pretty, PlanNode};

const INITIAL: &str = include_str!("../prompts/classifier_initial.txt");
const PAIR: &str = include_str!("../prompts/classifier_pair.txt");
const GRAMMAR: &str = include_str!("../prompts/grammar.txt");

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("session is frozen; training is over")]
    Frozen,
    #[error("session is still training; freeze it before classifying")]
    NotFrozen,
    #[error("malformed verdict: {reason}")]
    MalformedReply { reason: String, raw: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Cost(#[from] CostError),
}

impl From<LlmError> for ClassifierError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Transport(m) => ClassifierError::Transport(m),
            LlmError::MalformedReply(raw) => ClassifierError::MalformedReply {
                reason: "unreadable completion".into(),
                raw,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Faster {
    First,
    Second,
}

impl Faster {
    fn as_str(self) -> &'static str {
        match self {
            Faster::First => "first",
            Faster::Second => "second",
        }
    }

    /// Whether this verdict agrees with the true times. Ties accept both.
    pub fn is_correct(self, time_a: f64, time_b: f64) -> bool {
        match compare_costs(time_a, time_b) {
            CostOrdering::Equal => true,
            CostOrdering::ACheaper => self == Faster::First,
            CostOrdering::BCheaper => self == Faster::Second,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub faster: Faster,
    pub estimated_times: (f64, f64),
    pub explanation: String,
}

fn field<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let line = line.trim().trim_start_matches(['*', '#', ' ']);
    let head = line.get(..name.len())?;
    head.eq_ignore_ascii_case(name)
        .then(|| line[name.len()..].trim_start_matches(['*', ' ']).strip_prefix(':'))
        .flatten()
        .map(|rest| rest.trim().trim_matches('*').trim())
}

fn malformed(reason: &str, raw: &str) -> ClassifierError {
    ClassifierError::MalformedReply {
        reason: reason.into(),
        raw: raw.into(),
    }
}

/// Parses the three-field answer format. The last non-empty line must be
/// the `FASTER` line, and the verdict must agree with the estimates when
/// they differ.
pub fn parse_verdict(reply: &str) -> Result<PairVerdict, ClassifierError> {
    let lines: Vec<&str> = reply.lines().filter(|l| !l.trim().is_empty()).collect();
    let last = lines.last().ok_or_else(|| malformed("empty reply", reply))?;
    let faster = match field(last, "FASTER").map(str::to_ascii_lowercase).as_deref() {
        Some("first") => Faster::First,
        Some("second") => Faster::Second,
        Some(other) => return Err(malformed(&format!("unknown verdict {other:?}"), reply)),
        None => return Err(malformed("last line is not a FASTER line", reply)),
    };
    let times_line = lines
        .iter()
        .rev()
        .find_map(|l| field(l, "ESTIMATED_TIMES"))
        .ok_or_else(|| malformed("missing ESTIMATED_TIMES", reply))?;
    let nums: Vec<f64> = times_line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| malformed("ESTIMATED_TIMES must be two numbers", reply))?;
    let [a, b] = nums[..] else {
        return Err(malformed("ESTIMATED_TIMES must be two numbers", reply));
    };
    if !faster.is_correct(a, b) {
        return Err(malformed("FASTER contradicts ESTIMATED_TIMES", reply));
    }
    let start = lines
        .iter()
        .position(|l| field(l, "EXPLANATION").is_some())
        .ok_or_else(|| malformed("missing EXPLANATION", reply))?;
    let mut explanation = field(lines[start], "EXPLANATION").unwrap_or_default().to_string();
    for l in &lines[start + 1..] {
        if field(l, "ESTIMATED_TIMES").is_some() || field(l, "FASTER").is_some() {
            break;
        }
        explanation.push('\n');
        explanation.push_str(l.trim());
    }
    Ok(PairVerdict {
        faster,
        estimated_times: (a, b),
        explanation,
    })
}

/// The fixed part of every classifier prompt.
pub fn build_initial_prompt(catalog: &Catalog) -> String {
    let mut stats = format!("Number of images in the database: {}\n", catalog.image_count());
    for (name, t) in &catalog.tables {
        let _ = write!(stats, "Table {name}: {} rows", t.row_count);
        if t.unique_columns.is_empty() {
            stats.push_str("; no unique columns\n");
        } else {
            let _ = writeln!(stats, "; unique columns: {}", t.unique_columns.join(", "));
        }
    }
    INITIAL
        .replace("{{grammar}}", GRAMMAR.trim_end())
        .replace("{{statistics}}", stats.trim_end())
}

pub fn pair_request(plan_a: &PlanNode, plan_b: &PlanNode) -> String {
    PAIR.replace("{{first}}", &serialize_plan_pretty(plan_a))
        .replace("{{second}}", &serialize_plan_pretty(plan_b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub plan_a: PlanNode,
    pub plan_b: PlanNode,
    pub raw_reply: String,
    /// Absent when the reply could not be parsed.
    pub verdict: Option<PairVerdict>,
    pub correct: bool,
    pub true_times: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSession {
    pub initial_prompt: String,
    pub training_records: Vec<TrainingRecord>,
    pub frozen: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl ClassifierSession {
    pub fn new(catalog: &Catalog) -> Self {
        ClassifierSession {
            initial_prompt: build_initial_prompt(catalog),
            training_records: Vec::new(),
            frozen: false,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    /// Initial prompt followed by one block per training record.
    pub fn prompt(&self) -> String {
        let mut s = self.initial_prompt.trim_end().to_string();
        s.push('\n');
        if self.training_records.is_empty() {
            return s;
        }
        s.push_str("\n# Training history\n");
        for (i, r) in self.training_records.iter().enumerate() {
            let _ = writeln!(s, "\n## Training example {}", i + 1);
            s.push_str(&pair_request(&r.plan_a, &r.plan_b));
            s.push_str("Your answer:\n");
            match &r.verdict {
                Some(v) => {
                    let _ = writeln!(s, "EXPLANATION: {}", v.explanation);
                    let _ = writeln!(
                        s,
                        "ESTIMATED_TIMES: {} {}",
                        v.estimated_times.0, v.estimated_times.1
                    );
                    let _ = writeln!(s, "FASTER: {}", v.faster.as_str());
                }
                None => {
                    let _ = writeln!(s, "{}", r.raw_reply.trim_end());
                }
            }
            let _ = writeln!(s, "Judgment: {}", if r.correct { "correct" } else { "incorrect" });
            let _ = writeln!(
                s,
                "Ground truth execution times: {} {}",
                r.true_times.0, r.true_times.1
            );
        }
        s
    }

    fn ask(&self, plan_a: &PlanNode, plan_b: &PlanNode, client: &dyn ChatClient) -> Result<String, ClassifierError> {
        let messages = [
            ChatMessage::system(self.prompt()),
            ChatMessage::user(pair_request(plan_a, plan_b)),
        ];
        Ok(client.complete(&messages, self.temperature)?)
    }

    /// Asks about one labelled pair and appends the outcome. A malformed
    /// reply is still recorded, as incorrect, before the error is returned.
    pub fn train_step(
        &mut self,
        plan_a: &PlanNode,
        plan_b: &PlanNode,
        true_time_a: f64,
        true_time_b: f64,
        client: &dyn ChatClient,
    ) -> Result<&TrainingRecord, ClassifierError> {
        if self.frozen {
            return Err(ClassifierError::Frozen);
        }
        let raw = self.ask(plan_a, plan_b, client)?;
        let parsed = parse_verdict(&raw);
        let verdict = parsed.as_ref().ok().cloned();
        self.training_records.push(TrainingRecord {
            plan_a: plan_a.clone(),
            plan_b: plan_b.clone(),
            correct: verdict
                .as_ref()
                .is_some_and(|v| v.faster.is_correct(true_time_a, true_time_b)),
            verdict,
            raw_reply: raw,
            true_times: (true_time_a, true_time_b),
        });
        parsed?;
        Ok(self.training_records.last().expect("just pushed"))
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn classify(
        &self,
        plan_a: &PlanNode,
        plan_b: &PlanNode,
        client: &dyn ChatClient,
    ) -> Result<PairVerdict, ClassifierError> {
        if !self.frozen {
            return Err(ClassifierError::NotFrozen);
        }
        parse_verdict(&self.ask(plan_a, plan_b, client)?)
    }
}

/// Two plans with their true execution times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub plan_a: PlanNode,
    pub plan_b: PlanNode,
    pub time_a: f64,
    pub time_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub raw_reply: Option<String>,
    pub verdict: Option<PairVerdict>,
    pub error: Option<String>,
    pub correct: bool,
    pub cost_model_correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub accuracy: f64,
    pub cost_model_accuracy: f64,
    pub outcomes: Vec<TestOutcome>,
}

/// Whether the estimated cost orders the pair like the true times. Equal
/// estimates pick the first plan.
pub fn cost_model_correct(
    pair: &LabeledPair,
    catalog: &Catalog,
    params: &CostParams,
) -> Result<bool, CostError> {
    let (a, b) = (
        plan_cost(&pair.plan_a, catalog, params)?,
        plan_cost(&pair.plan_b, catalog, params)?,
    );
    let guess = if b < a - COST_EPSILON { Faster::Second } else { Faster::First };
    Ok(guess.is_correct(pair.time_a, pair.time_b))
}

/// Trains on the first half of `pairs`, freezes, and classifies the rest.
/// Unparseable or failed answers count as wrong.
pub fn accuracy_harness(
    pairs: &[LabeledPair],
    session: &mut ClassifierSession,
    client: &dyn ChatClient,
    catalog: &Catalog,
    params: &CostParams,
) -> Result<HarnessReport, ClassifierError> {
    let split = pairs.len() / 2;
    let (train, test) = pairs.split_at(split);
    for p in train {
        match session.train_step(&p.plan_a, &p.plan_b, p.time_a, p.time_b, client) {
            Ok(_) | Err(ClassifierError::MalformedReply { .. } | ClassifierError::Transport(_)) => {}
            Err(e) => return Err(e),
        }
    }
    session.freeze();
    let mut outcomes = Vec::with_capacity(test.len());
    for p in test {
        let cost_ok = cost_model_correct(p, catalog, params)?;
        let outcome = match session.classify(&p.plan_a, &p.plan_b, client) {
            Ok(v) => TestOutcome {
                raw_reply: None,
                correct: v.faster.is_correct(p.time_a, p.time_b),
                verdict: Some(v),
                error: None,
                cost_model_correct: cost_ok,
            },
            Err(e) => TestOutcome {
                raw_reply: match &e {
                    ClassifierError::MalformedReply { raw, .. } => Some(raw.clone()),
                    _ => None,
                },
                verdict: None,
                error: Some(e.to_string()),
                correct: false,
                cost_model_correct: cost_ok,
            },
        };
        outcomes.push(outcome);
    }
    let frac = |f: &dyn Fn(&TestOutcome) -> bool| {
        if outcomes.is_empty() {
            0.0
        } else {
            outcomes.iter().filter(|o| f(o)).count() as f64 / outcomes.len() as f64
        }
    };
    Ok(HarnessReport {
        train_pairs: train.len(),
        test_pairs: test.len(),
        accuracy: frac(&|o| o.correct),
        cost_model_accuracy: frac(&|o| o.cost_model_correct),
        outcomes,
    })
}
