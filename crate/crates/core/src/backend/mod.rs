//! Model backends: the contract the pipeline trains and queries through.

pub mod protocol;
pub mod remote;
pub mod replay;
pub mod scripted;
pub mod service;
pub mod sim;

use serde::{Deserialize, Serialize};

use crate::corpus::RelationLabel;
use crate::error::{Error, Result};
use crate::instructions::{InstructionKind, InstructionRecord};

pub use remote::RemoteBackend;
pub use replay::{BackendCall, RecordingBackend, ReplayBackend};
pub use scripted::ScriptedBackend;
pub use sim::{SimBackend, SimConfig};

/// One `instruction -> relation` training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBatchItem {
    pub instruction_text: String,
    pub target: RelationLabel,
    pub weight_hint: InstructionKind,
    /// For contrastive items, the relation the model predicted before
    /// learning the sample.
    pub wrong_relation: Option<RelationLabel>,
}

impl TrainBatchItem {
    pub fn simple(instruction: &InstructionRecord) -> Result<Self> {
        Self::from_instruction(instruction, None)
    }

    pub fn from_instruction(
        instruction: &InstructionRecord,
        wrong_relation: Option<RelationLabel>,
    ) -> Result<Self> {
        if !instruction.relation_list.contains(&instruction.target) {
            return Err(Error::Instruction(format!(
                "target '{}' missing from the instruction's relation list",
                instruction.target
            )));
        }
        Ok(TrainBatchItem {
            instruction_text: instruction.text.clone(),
            target: instruction.target.clone(),
            weight_hint: instruction.kind,
            wrong_relation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub items_seen: u64,
    pub loss: f64,
}

/// A trainable model. Calls on one instance are issued by a single owner;
/// after `restore(checkpoint())` inference behaves exactly as at the
/// checkpoint.
pub trait ModelBackend: Send {
    fn identity(&self) -> String;

    fn infer(&mut self, instruction_text: &str) -> Result<String>;

    fn train(&mut self, batch: &[TrainBatchItem], params: &TrainParams) -> Result<TrainSummary>;

    fn checkpoint(&mut self) -> Result<String>;

    fn restore(&mut self, checkpoint_id: &str) -> Result<()>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for Box<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn infer(&mut self, instruction_text: &str) -> Result<String> {
        (**self).infer(instruction_text)
    }

    fn train(&mut self, batch: &[TrainBatchItem], params: &TrainParams) -> Result<TrainSummary> {
        (**self).train(batch, params)
    }

    fn checkpoint(&mut self) -> Result<String> {
        (**self).checkpoint()
    }

    fn restore(&mut self, checkpoint_id: &str) -> Result<()> {
        (**self).restore(checkpoint_id)
    }
}

/// Render a relation in the strict answer format.
pub fn answer_json(relation: &RelationLabel) -> String {
    serde_json::json!({ "relation": relation.as_str() }).to_string()
}
