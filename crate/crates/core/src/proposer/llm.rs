//! Proposer backed by a chat-completion model.

use std::sync::Arc;

use super::{instruction_request, optimization_request, Proposal, ProposalContext, ProposeError, Proposer};
use crate::llm::{extract_json_object, ChatClient, ChatMessage, DEFAULT_TEMPERATURE};

/// Two calls per proposal: the model first writes its own instruction,
/// which is then fed verbatim into the optimization request.
pub struct LlmProposer {
    client: Arc<dyn ChatClient>,
    temperature: f64,
}

impl LlmProposer {
    pub fn new(client: Arc<dyn ChatClient>) -> Self {
        LlmProposer {
            client,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

impl Proposer for LlmProposer {
    fn id(&self) -> &str {
        "llm"
    }

    fn propose(&mut self, ctx: &ProposalContext) -> Result<Proposal, ProposeError> {
        let instruction = self
            .client
            .complete(&[ChatMessage::user(instruction_request(ctx))], self.temperature)?;
        let request = optimization_request(ctx, instruction.trim());
        let reply = self
            .client
            .complete(&[ChatMessage::user(request)], self.temperature)?;
        let plan_text = extract_json_object(&reply)
            .ok_or_else(|| ProposeError::MalformedReply { raw: reply.clone() })?
            .to_string();
        Ok(Proposal {
            plan_text,
            rationale: format!("instruction:\n{instruction}\n\nreply:\n{reply}"),
            proposer_id: self.id().to_string(),
        })
    }
}
