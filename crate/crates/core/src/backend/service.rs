//! In-process implementation of the service side of the wire protocol, backed
//! by the simulator. Used to exercise the remote client paths offline.

use serde_json::{json, Value};

use super::protocol::{
    CheckpointResponse, EmbedResponse, InferResponse, ServiceHandler, TrainResponse, WireRequest,
};
use super::sim::{SimBackend, SimConfig};
use super::{ModelBackend, TrainBatchItem, TrainParams};
use crate::corpus::RelationLabel;
use crate::embed::{Embedder, HashingEmbedder};
use crate::error::{Error, Result};
use crate::instructions::InstructionKind;

pub struct SimService {
    backend: SimBackend,
    embedder: HashingEmbedder,
    /// Every train payload received, for inspection.
    pub train_log: Vec<super::protocol::TrainRequest>,
}

impl SimService {
    pub fn new(config: SimConfig) -> Self {
        let embedder = HashingEmbedder::new(config.dim);
        SimService {
            backend: SimBackend::new(config),
            embedder,
            train_log: Vec::new(),
        }
    }
}

fn quoted(text: &str, open: char, close: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(open) {
        let after = &rest[start + open.len_utf8()..];
        let Some(end) = after.find(close) else { break };
        out.push(&after[..end]);
        rest = &after[end + close.len_utf8()..];
    }
    out
}

/// A canned analyst reply that mentions the relations named in the prompt.
pub fn canned_analysis(prompt: &str) -> Value {
    if prompt.contains("correct_answer_analysis") {
        let parts = quoted(prompt, '‘', '’');
        let gold = parts.get(2).copied().unwrap_or("the gold relation");
        let wrong = parts.get(3).copied().unwrap_or("another relation");
        json!({
            "error_reason": format!("The model confused '{gold}' with '{wrong}'."),
            "correct_answer_analysis": format!("The entities are linked by '{gold}' as the sentence describes."),
        })
    } else {
        let parts: Vec<&str> = quoted(prompt, '“', '”').into_iter().filter(|p| *p != "difference").collect();
        let n = parts.len();
        let (r, r_s) = if n >= 2 { (parts[n - 2], parts[n - 1]) } else { ("the first relation", "the second relation") };
        json!({ "difference": format!("'{r}' and '{r_s}' link different kinds of entities.") })
    }
}

impl ServiceHandler for SimService {
    fn handle(&mut self, request: WireRequest) -> Result<Value> {
        let value = match request {
            WireRequest::Infer(req) => serde_json::to_value(InferResponse {
                response_text: self.backend.infer(&req.instruction_text)?,
            })?,
            WireRequest::Train(req) => {
                let batch = req
                    .items
                    .iter()
                    .map(|item| {
                        let weight_hint = InstructionKind::parse(&item.weight_hint).ok_or_else(|| {
                            Error::Protocol(format!("/train: unknown weight_hint '{}'", item.weight_hint))
                        })?;
                        Ok(TrainBatchItem {
                            instruction_text: item.instruction_text.clone(),
                            target: RelationLabel::new(&item.target),
                            weight_hint,
                            wrong_relation: item.wrong_relation.as_deref().map(RelationLabel::new),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let params = TrainParams {
                    epochs: req.epochs,
                    learning_rate: req.learning_rate,
                    batch_size: req.batch_size,
                    seed: req.seed,
                };
                let summary = self.backend.train(&batch, &params)?;
                self.train_log.push(req);
                serde_json::to_value(TrainResponse {
                    items_seen: summary.items_seen,
                    loss: summary.loss,
                })?
            }
            WireRequest::Checkpoint(_) => serde_json::to_value(CheckpointResponse {
                checkpoint_id: self.backend.checkpoint()?,
            })?,
            WireRequest::Restore(req) => {
                self.backend.restore(&req.checkpoint_id)?;
                json!({})
            }
            WireRequest::Embed(req) => {
                let texts: Vec<&str> = req.texts.iter().map(String::as_str).collect();
                let vectors = self.embedder.embed_many(&texts)?.into_iter().map(|e| e.0).collect();
                serde_json::to_value(EmbedResponse { vectors })?
            }
            WireRequest::Analyze(req) => json!({ "response_text": canned_analysis(&req.prompt_text).to_string() }),
        };
        Ok(value)
    }
}
